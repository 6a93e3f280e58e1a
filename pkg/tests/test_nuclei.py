import numpy as np
import pytest

from ihcquant.errors import BadLabelImage, SchemaMismatch
from ihcquant.nuclei import (
    DetectorConfig,
    NucleusInstance,
    detect_nuclei_baseline,
    detection_report,
    import_instances,
    instances_from_json,
    instances_to_json,
    save_instances_json,
    write_label_png,
)
from ihcquant.stain import StainClass

BLUE = (60, 70, 150)
BROWN = (120, 80, 40)


def paint_disk(canvas, cx, cy, r, rgb):
    yy, xx = np.ogrid[:canvas.shape[0], :canvas.shape[1]]
    canvas[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = rgb


def square(i, x0, y0, side=8, **kw):
    ys, xs = np.mgrid[y0:y0 + side, x0:x0 + side]
    return NucleusInstance(id=i, xs=xs.ravel(), ys=ys.ravel(), **kw)


class TestInstance:
    def test_pixels_sorted_row_major(self):
        inst = NucleusInstance(id=1, xs=[5, 1, 3], ys=[2, 2, 0])
        assert inst.ys.tolist() == [0, 2, 2]
        assert inst.xs.tolist() == [3, 1, 5]

    def test_geometry(self):
        inst = square(1, 10, 20, side=4)
        assert inst.area == 16
        assert inst.bbox == (10, 20, 4, 4)
        assert inst.centroid == (11.5, 21.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            NucleusInstance(id=1, xs=[], ys=[])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            NucleusInstance(id=1, xs=[1, 2], ys=[1])

    def test_iou_exact(self):
        a = square(1, 0, 0, side=4)       # 16 px
        b = square(2, 2, 0, side=4)       # overlap is a 2x4 strip
        assert a.iou(b) == 8 / 24
        assert a.iou(a) == 1.0
        assert a.iou(square(3, 100, 100)) == 0.0

    def test_translated(self):
        inst = square(1, 0, 0, frame="patch")
        moved = inst.translated(100, 200, frame="global")
        assert moved.bbox == (100, 200, 8, 8)
        assert moved.frame == "global"
        assert inst.bbox == (0, 0, 8, 8)  # original untouched

    def test_local_mask_round_trip(self):
        inst = NucleusInstance(id=1, xs=[4, 5, 5], ys=[7, 7, 8])
        mask, (x0, y0) = inst.local_mask()
        ys, xs = np.nonzero(mask)
        assert sorted(zip(ys + y0, xs + x0)) == [(7, 4), (7, 5), (8, 5)]


class TestDetector:
    def test_blue_and_brown_disks_found(self):
        canvas = np.full((96, 96, 3), 255, dtype=np.uint8)
        paint_disk(canvas, 25, 30, 8, BLUE)
        paint_disk(canvas, 70, 60, 8, BROWN)
        found = detect_nuclei_baseline(canvas)
        assert len(found) == 2
        centers = sorted(tuple(np.round(i.centroid)) for i in found)
        assert centers == [(25.0, 30.0), (70.0, 60.0)]

    def test_small_speck_filtered(self):
        canvas = np.full((64, 64, 3), 255, dtype=np.uint8)
        paint_disk(canvas, 16, 16, 3, BLUE)   # ~29 px < min_area
        paint_disk(canvas, 45, 45, 8, BLUE)
        found = detect_nuclei_baseline(canvas)
        assert len(found) == 1
        assert found[0].area > 100

    def test_fused_pair_split(self):
        canvas = np.full((80, 80, 3), 255, dtype=np.uint8)
        paint_disk(canvas, 30, 40, 10, BLUE)
        paint_disk(canvas, 48, 40, 10, BLUE)
        cfg = DetectorConfig(max_area_px=400)
        found = detect_nuclei_baseline(canvas, cfg)
        assert len(found) == 2
        cxs = sorted(i.centroid[0] for i in found)
        assert abs(cxs[0] - 30) < 2.5 and abs(cxs[1] - 48) < 2.5

    def test_blank_patch(self):
        canvas = np.full((64, 64, 3), 255, dtype=np.uint8)
        assert detect_nuclei_baseline(canvas) == []

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DetectorConfig(min_area_px=100, max_area_px=50)
        with pytest.raises(ValueError):
            DetectorConfig(split_min_distance_px=0)


class TestSerialization:
    def test_json_round_trip(self, tmp_path):
        insts = [
            square(1, 3, 4, stain=StainClass.MODERATE, patch_of_origin=(0, 0)),
            square(2, 40, 9, stain=StainClass.UNSTAINED),
        ]
        path = tmp_path / "inst.json"
        save_instances_json(insts, path, frame="global")
        back = import_instances(path, frame="global")
        assert len(back) == 2
        for orig, copy in zip(insts, back):
            assert copy.id == orig.id
            assert copy.stain == orig.stain
            assert copy.patch_of_origin == orig.patch_of_origin
            assert np.array_equal(copy.xs, orig.xs)
            assert np.array_equal(copy.ys, orig.ys)

    def test_json_missing_key(self):
        with pytest.raises(SchemaMismatch):
            instances_from_json({"instances": []})

    def test_json_zero_area_instance(self):
        payload = instances_to_json([square(1, 0, 0, side=2)])
        payload["instances"][0]["rle"] = [4]  # all background
        with pytest.raises(BadLabelImage):
            instances_from_json(payload)

    def test_label_png_round_trip(self, tmp_path):
        insts = [square(3, 2, 2, side=4), square(7, 20, 10, side=5)]
        path = tmp_path / "labels.png"
        write_label_png(insts, 32, 32, path)
        back = import_instances(path, frame="global")
        assert [i.id for i in back] == [3, 7]
        assert [i.area for i in back] == [16, 25]
        assert back[0].frame == "global"

    def test_label_png_id_overflow(self, tmp_path):
        with pytest.raises(ValueError):
            write_label_png([square(70000, 0, 0)], 16, 16, tmp_path / "x.png")

    def test_import_unknown_suffix(self, tmp_path):
        path = tmp_path / "inst.txt"
        path.write_text("{}")
        with pytest.raises(SchemaMismatch):
            import_instances(path)


class TestDetectionReport:
    def test_hand_counts(self):
        truth = [square(1, 0, 0), square(2, 40, 0)]
        pred = [square(1, 0, 1),    # IoU 56/72 with truth 1: TP
                square(2, 100, 100)]  # FP; truth 2 unmatched: FN
        rep = detection_report(pred, truth)
        assert (rep["tp"], rep["fp"], rep["fn"]) == (1, 1, 1)
        assert rep["precision"] == 0.5
        assert rep["recall"] == 0.5
        assert rep["f1"] == 0.5
        assert rep["accuracy"] == pytest.approx(1 / 3)

    def test_greedy_prefers_highest_iou(self):
        # P overlaps both truths above threshold; greedy must give P to A
        # (IoU 7/9 beats 0.6) so Q can still claim B: two true positives.
        a = square(1, 0, 0)          # rows 0..7
        b = square(2, 0, 3)          # rows 3..10
        p = square(1, 0, 1)          # IoU(P,A)=7/9, IoU(P,B)=0.6
        q = square(2, 0, 4)          # IoU(Q,B)=7/9, IoU(Q,A)<0.5
        rep = detection_report([p, q], [a, b])
        assert rep["tp"] == 2 and rep["fp"] == 0 and rep["fn"] == 0

    def test_one_to_one_matching(self):
        # two predictions over one truth: only one can match
        truth = [square(1, 0, 0)]
        pred = [square(1, 0, 0), square(2, 0, 1)]
        rep = detection_report(pred, truth)
        assert (rep["tp"], rep["fp"], rep["fn"]) == (1, 1, 0)

    def test_empty_sides(self):
        rep = detection_report([], [])
        assert rep["tp"] == 0 and rep["accuracy"] == 1.0
        rep = detection_report([], [square(1, 0, 0)])
        assert rep["fn"] == 1 and rep["recall"] == 0.0

    def test_mixed_frames_rejected(self):
        with pytest.raises(ValueError):
            detection_report([square(1, 0, 0, frame="patch")],
                             [square(1, 0, 0, frame="global")])
