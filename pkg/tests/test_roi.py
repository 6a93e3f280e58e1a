import json

import numpy as np
import pytest
from PIL import Image

from ihcquant.errors import DimensionMismatch, FrameMissing, UnreadableMask
from ihcquant.nuclei import NucleusInstance
from ihcquant.roi import (
    PROVENANCE_EXTERNAL,
    PROVENANCE_FULL,
    PROVENANCE_TISSUE,
    RoiMask,
    from_tissue,
    full_slide,
    import_roi,
    mask_instances,
    roi_overlap_report,
    save_roi_png,
    save_roi_rle,
)
from ihcquant.slideio import BinaryMask


def roi_of(data, level=0, downsample=1.0):
    return RoiMask(BinaryMask(np.asarray(data, dtype=bool), level=level),
                   downsample, PROVENANCE_EXTERNAL)


def dot(i, x, y, frame="global"):
    return NucleusInstance(id=i, xs=[x], ys=[y], frame=frame)


class TestMembership:
    def test_level0_lookup(self):
        roi = roi_of([[0, 1], [0, 0]])
        assert roi.contains_point(1.0, 0.0)
        assert roi.contains_point(1.9, 0.9)    # floors into the same pixel
        assert not roi.contains_point(0.0, 0.0)

    def test_downsampled_lookup(self):
        # mask pixel (1, 0) covers level-0 x in [4, 8)
        roi = roi_of([[0, 1]], level=1, downsample=4.0)
        assert not roi.contains_point(3.99, 0.0)
        assert roi.contains_point(4.0, 0.0)
        assert roi.contains_point(7.99, 3.0)
        assert not roi.contains_point(8.0, 0.0)  # out of mask bounds

    def test_outside_bounds_is_false(self):
        roi = roi_of([[1]])
        assert not roi.contains_point(-0.5, 0.0)
        assert not roi.contains_point(0.0, 5.0)

    def test_full_slide_and_tissue_provenance(self):
        assert full_slide(4, 3).provenance == PROVENANCE_FULL
        assert full_slide(4, 3).contains_point(3.5, 2.5)
        tissue = BinaryMask(np.ones((2, 2), dtype=bool), level=2)
        assert from_tissue(tissue, 16.0).provenance == PROVENANCE_TISSUE


class TestIO:
    def _checker(self):
        data = np.zeros((6, 8), dtype=bool)
        data[1:4, 2:7] = True
        return data

    def test_png_round_trip(self, tmp_path):
        roi = roi_of(self._checker(), level=1, downsample=4.0)
        path = tmp_path / "roi.png"
        save_roi_png(roi, path)
        back = import_roi(path)
        assert np.array_equal(back.mask.data, roi.mask.data)
        assert back.level == 1 and back.downsample == 4.0
        assert back.provenance == PROVENANCE_EXTERNAL

    def test_rle_round_trip(self, tmp_path):
        roi = roi_of(self._checker(), level=2, downsample=16.0)
        path = tmp_path / "roi.json"
        save_roi_rle(roi, path)
        back = import_roi(path)
        assert np.array_equal(back.mask.data, roi.mask.data)
        assert back.level == 2 and back.downsample == 16.0

    def test_png_without_sidecar(self, tmp_path):
        path = tmp_path / "roi.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(path)
        with pytest.raises(FrameMissing):
            import_roi(path)

    def test_sidecar_without_level(self, tmp_path):
        path = tmp_path / "roi.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(path)
        (tmp_path / "roi.png.json").write_text(json.dumps({"downsample": 1.0}))
        with pytest.raises(FrameMissing):
            import_roi(path)

    def test_nonzero_level_needs_downsample(self, tmp_path):
        path = tmp_path / "roi.json"
        path.write_text(json.dumps(
            {"level": 1, "width": 2, "height": 1, "counts": [0, 2]}))
        with pytest.raises(FrameMissing):
            import_roi(path)

    def test_level0_downsample_defaults_to_one(self, tmp_path):
        path = tmp_path / "roi.json"
        path.write_text(json.dumps(
            {"level": 0, "width": 2, "height": 1, "counts": [0, 2]}))
        assert import_roi(path).downsample == 1.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(UnreadableMask):
            import_roi(tmp_path / "none.png")

    def test_rgb_png_rejected(self, tmp_path):
        path = tmp_path / "roi.png"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(path)
        (tmp_path / "roi.png.json").write_text(json.dumps({"level": 0}))
        with pytest.raises(UnreadableMask):
            import_roi(path)

    def test_bad_rle_counts(self, tmp_path):
        path = tmp_path / "roi.json"
        path.write_text(json.dumps(
            {"level": 0, "width": 2, "height": 2, "counts": [0, 99]}))
        with pytest.raises(UnreadableMask):
            import_roi(path)

    def test_unknown_suffix(self, tmp_path):
        path = tmp_path / "roi.npy"
        path.write_bytes(b"")
        with pytest.raises(UnreadableMask):
            import_roi(path)


class TestInstanceFiltering:
    def test_centroid_rule(self):
        roi = roi_of(np.r_[np.ones((1, 4)), np.zeros((1, 4))])
        inside = dot(1, 2, 0)
        outside = dot(2, 2, 1)
        # straddling instance: pixels at y=0 and y=1, centroid y=0.5 -> inside
        straddle = NucleusInstance(id=3, xs=[1, 1], ys=[0, 1], frame="global")
        kept = mask_instances([inside, outside, straddle], roi)
        assert [i.id for i in kept] == [1, 3]

    def test_downsampled_centroid(self):
        roi = roi_of([[0, 1]], level=1, downsample=4.0)
        assert [i.id for i in mask_instances([dot(1, 5, 1)], roi)] == [1]
        assert mask_instances([dot(1, 2, 1)], roi) == []

    def test_requires_global_frame(self):
        with pytest.raises(ValueError):
            mask_instances([dot(1, 0, 0, frame="patch")], roi_of([[1]]))

    def test_order_preserved(self):
        roi = full_slide(10, 10)
        insts = [dot(5, 1, 1), dot(2, 8, 8), dot(9, 4, 4)]
        assert [i.id for i in mask_instances(insts, roi)] == [5, 2, 9]


class TestOverlapReport:
    def test_hand_counts(self):
        pred = roi_of([[1, 1, 0, 0]])
        truth = roi_of([[1, 0, 1, 0]])
        rep = roi_overlap_report(pred, truth)
        t = rep["tumor"]
        assert (t["tp"], t["fp"], t["fn"], t["tn"]) == (1, 1, 1, 1)
        assert t["iou"] == pytest.approx(1 / 3)
        r = rep["rest"]
        # complement swaps fp/fn and tp/tn
        assert (r["tp"], r["fp"], r["fn"], r["tn"]) == (1, 1, 1, 1)

    def test_perfect_match(self):
        pred = roi_of([[1, 0], [0, 1]])
        rep = roi_overlap_report(pred, pred)
        assert rep["tumor"]["iou"] == 1.0
        assert rep["rest"]["iou"] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            roi_overlap_report(roi_of([[1]]), roi_of([[1, 0]]))
