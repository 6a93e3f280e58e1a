"""Run-length encoding for binary masks.

Runs are row-major and alternate background/foreground starting with
background, so a mask that begins with a set pixel encodes a leading 0.
The run list of a ``h x w`` mask always sums to ``h * w``.
"""

from __future__ import annotations

import numpy as np

from .errors import UnreadableMask


def rle_encode(mask: np.ndarray) -> list[int]:
    """Encode a 2-D boolean mask as alternating run lengths."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return runs


def rle_decode(counts: list[int], width: int, height: int) -> np.ndarray:
    """Decode run lengths into a ``(height, width)`` boolean mask.

    Raises UnreadableMask if the runs are negative or do not sum to
    exactly ``width * height``.
    """
    counts = list(counts)
    total = width * height
    if any(c < 0 for c in counts):
        raise UnreadableMask("negative run length")
    if sum(counts) != total:
        raise UnreadableMask(
            f"run lengths sum to {sum(counts)}, expected {total} ({width}x{height})"
        )
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    return flat.reshape(height, width)
