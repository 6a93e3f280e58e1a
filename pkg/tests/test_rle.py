import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ihcquant.errors import UnreadableMask
from ihcquant.rle import rle_decode, rle_encode


def test_empty_mask_is_single_background_run():
    mask = np.zeros((3, 4), dtype=bool)
    assert rle_encode(mask) == [12]


def test_full_mask_starts_with_zero_background_run():
    mask = np.ones((2, 3), dtype=bool)
    assert rle_encode(mask) == [0, 6]


def test_known_pattern():
    mask = np.array([[0, 1, 1, 0],
                     [0, 0, 1, 1]], dtype=bool)
    # row-major: 1 off, 2 on, 3 off, 2 on
    counts = rle_encode(mask)
    assert counts == [1, 2, 3, 2]
    assert np.array_equal(rle_decode(counts, 4, 2), mask)


@settings(max_examples=200)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_round_trip(width, height, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((height, width)) < 0.4
    counts = rle_encode(mask)
    assert sum(counts) == mask.size
    assert all(c >= 0 for c in counts)
    assert np.array_equal(rle_decode(counts, width, height), mask)


def test_negative_run_rejected():
    with pytest.raises(UnreadableMask):
        rle_decode([3, -1, 2], 2, 2)


def test_wrong_total_rejected():
    with pytest.raises(UnreadableMask):
        rle_decode([3], 2, 2)
