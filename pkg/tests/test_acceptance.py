"""Acceptance suite: one test and one printed verdict line per shipping check.

Run with ``pytest tests/test_acceptance.py -v -s`` to see every verdict
on one screen. Each test computes all of its sub-checks first, prints a
single [PASS]/[FAIL] line, and only then asserts, so the verdict line is
always emitted.
"""

import dataclasses
import hashlib
import json
import time
from fractions import Fraction

import numpy as np
import pytest

from ihcquant.clusters import cluster_nuclei, filter_small_clusters
from ihcquant.config import PipelineConfig
from ihcquant.her2 import extract_features, predict_her2, train_rf
from ihcquant.metrics import (binary_pixel_metrics, percentage_agreement,
                              quadratic_kappa, roc_auc)
from ihcquant.nuclei import NucleusInstance
from ihcquant.pipeline import run_scoring
from ihcquant.score import (StainCounts, allred, intensity_score, ki67_prs,
                            proportion_score)
from ihcquant.stain import (CmykPixel, StainClass, calibrate_thresholds,
                            cmyk_to_rgb, rgb_to_cmyk, rgb_to_cmyk_array,
                            stain_class_from_mean)
from ihcquant.synth import SlideSpec, generate_slide, make_her2_dataset


def _verdict(label: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    assert ok, f"{label}: {detail}"


def _er(unstained=0, light=0, moderate=0, dark=0) -> StainCounts:
    return StainCounts(marker="er", n_unstained=unstained, n_light=light,
                       n_moderate=moderate, n_dark=dark)


# --- Shared synthetic slides -------------------------------------------------------

@pytest.fixture(scope="module")
def er_slide(tmp_path_factory):
    """600-nucleus ER slide (240 moderate) inside an explicit polygon ROI."""
    out = tmp_path_factory.mktemp("acc_er")
    hexagon = ((1200, 150), (2250, 700), (2250, 1800),
               (1200, 2250), (150, 1800), (150, 700))
    spec = SlideSpec(width=2400, height=2400, marker="er", seed=101,
                     counts={"unstained": 360, "moderate": 240},
                     roi_polygons=(hexagon,))
    manifest = generate_slide(spec, out, name="er600")
    return out, manifest


@pytest.fixture(scope="module")
def ki67_slide(tmp_path_factory):
    out = tmp_path_factory.mktemp("acc_ki67")
    spec = SlideSpec(width=1536, height=1536, marker="ki67", seed=202,
                     counts={"unstained": 170, "moderate": 30})
    manifest = generate_slide(spec, out, name="ki200")
    return out, manifest


@pytest.fixture(scope="module")
def artifact_slide(tmp_path_factory):
    out = tmp_path_factory.mktemp("acc_artifact")
    spec = SlideSpec(width=800, height=800, marker="er", seed=13,
                     counts={"unstained": 25}, n_artifacts=2)
    manifest = generate_slide(spec, out, name="smeared")
    return out, manifest


# --- 1. Clinical formula suite -----------------------------------------------------

def test_01_clinical_formula_suite():
    started = time.perf_counter()
    checks = {}

    # Proportion score: right-inclusive bins at 1%, 10%, 1/3, 2/3.
    checks["ps_zero"] = proportion_score(_er(unstained=50)) == 0
    checks["ps_1_at_edge"] = proportion_score(_er(99, light=1)) == 1
    checks["ps_2_above_edge"] = proportion_score(_er(197, light=2)) == 2
    checks["ps_2_at_tenth"] = proportion_score(_er(9, light=1)) == 2
    checks["ps_3_at_third"] = proportion_score(_er(2, light=1)) == 3
    checks["ps_4_at_two_thirds"] = proportion_score(_er(1, light=2)) == 4
    checks["ps_5_above"] = proportion_score(_er(1, light=3)) == 5
    checks["ps_5_all"] = proportion_score(_er(0, dark=7)) == 5

    # Intensity score: weighted mean of 1/2/3, half rounds up.
    checks["is_light"] = intensity_score(_er(5, light=4)) == 1
    checks["is_moderate"] = intensity_score(_er(5, moderate=4)) == 2
    checks["is_dark"] = intensity_score(_er(5, dark=4)) == 3
    checks["is_half_up_15"] = intensity_score(_er(0, light=1, moderate=1)) == 2
    checks["is_half_up_25"] = intensity_score(_er(0, moderate=1, dark=1)) == 3
    checks["is_below_half"] = intensity_score(_er(0, light=2, dark=1)) == 2

    # Total score and the TS = 3 category step.
    two = allred(_er(100, light=1))     # PS 1 + IS 1
    three = allred(_er(9, light=1))     # PS 2 + IS 1
    checks["ts_2_negative"] = (two.total_score, two.category) == (2, "negative")
    checks["ts_3_positive"] = (three.total_score,
                               three.category) == (3, "positive")

    # Proliferation rate and the PRS = 15 category step.
    def ki(unstained, stained):
        return StainCounts(marker="ki67", n_unstained=unstained,
                           n_stained_unspecified=stained)

    at_edge = ki67_prs(ki(850, 150))
    below = ki67_prs(ki(851, 149))
    checks["prs_exact_15"] = at_edge.prs == 15.0
    checks["prs_15_positive"] = at_edge.category == "positive"
    checks["prs_149_negative"] = (below.prs, below.category) == (14.9,
                                                                 "negative")
    checks["prs_formula"] = ki67_prs(ki(170, 30)).prs == 15.0

    # TS = IS + PS identity over random counts.
    rng = np.random.default_rng(5)
    identity_ok = True
    for _ in range(200):
        u, li, mo, da = (int(v) for v in rng.integers(0, 40, size=4))
        if li + mo + da == 0:
            continue
        score = allred(_er(u, li, mo, da))
        expect_cat = "positive" if score.total_score >= 3 else "negative"
        identity_ok &= score.total_score == (
            intensity_score(_er(u, li, mo, da))
            + proportion_score(_er(u, li, mo, da)))
        identity_ok &= score.category == expect_cat
    checks["ts_identity_sweep"] = identity_ok

    # Percentage agreement vs a direct count on 1,000 random pairs.
    cats = np.array(["negative", "positive", "equivocal"])
    truth = rng.choice(cats, size=1000)
    pred = np.where(rng.random(1000) < 0.7, truth, rng.choice(cats, size=1000))
    pa = percentage_agreement(list(truth), list(pred))
    direct = sum(1 for t, p in zip(truth, pred) if t == p) / 1000 * 100.0
    pa_delta = abs(pa - direct)
    checks["pa_oracle"] = pa_delta <= 1e-9

    elapsed = time.perf_counter() - started
    checks["under_1s"] = elapsed < 1.0
    failed = sorted(name for name, ok in checks.items() if not ok)
    _verdict("1 clinical formula suite",
             not failed,
             f"{len(checks)} checks, PA |delta|={pa_delta:.1e}, "
             f"{elapsed:.3f}s" + (f", failed: {failed}" if failed else ""))


# --- 2. End-to-end synthetic slides ------------------------------------------------

def test_02_end_to_end_synthetic_slides(er_slide, ki67_slide):
    er_dir, er_manifest = er_slide
    ki_dir, ki_manifest = ki67_slide
    started = time.perf_counter()
    er = run_scoring(er_dir / "er600.png", "er",
                     roi_path=er_dir / "er600_roi.png")
    ki = run_scoring(ki_dir / "ki200.png", "ki67",
                     roi_path=ki_dir / "ki200_roi.png")
    elapsed = time.perf_counter() - started

    er_dict = er.score.allred.to_dict()
    expected = {"IS": 2, "PS": 4, "TS": 6, "category": "positive"}
    checks = {
        "er_exact": er_dict == expected,
        "er_matches_manifest": er_dict == er_manifest["expected_score"],
        "er_600_nuclei": er.score.counts.total == 600,
        "er_240_moderate": er.score.counts.n_moderate == 240,
        "ki67_prs_15": abs(ki.score.proliferation.prs - 15.0) <= 1e-9,
        "ki67_positive": ki.score.proliferation.category == "positive",
        "ki67_matches_manifest":
            ki.score.proliferation.to_dict() == ki_manifest["expected_score"],
        "under_60s": elapsed < 60.0,
    }
    failed = sorted(name for name, ok in checks.items() if not ok)
    _verdict("2 end-to-end synthetic slides",
             not failed,
             f"ER {er_dict}, Ki67 PRS={ki.score.proliferation.prs:.3f} "
             f"{ki.score.proliferation.category}, {elapsed:.1f}s"
             + (f", failed: {failed}" if failed else ""))


# --- 3. Published operating points -------------------------------------------------

# Reported precision/recall/F1 of the reference nuclei detector on the
# three markers. F1 must be the harmonic mean of its own row.
REFERENCE_ROWS = (
    ("er", 0.8344, 0.8616, 0.8478),
    ("pr", 0.7370, 0.8576, 0.7927),
    ("ki67", 0.7357, 0.7983, 0.7657),
)


def test_03_reference_operating_points_consistent():
    deltas = {}
    for marker, precision, recall, f1 in REFERENCE_ROWS:
        harmonic = 2.0 * precision * recall / (precision + recall)
        deltas[marker] = abs(harmonic - f1)
    worst = max(deltas.values())
    _verdict("3 reference operating points",
             worst < 0.0005,
             "max |F1 - 2PR/(P+R)| = "
             f"{worst:.2e} over {len(REFERENCE_ROWS)} rows")


# --- 4. Color separation suite -----------------------------------------------------

def test_04_color_separation_suite():
    # Round trip over a 32-per-channel RGB lattice.
    axis = np.round(np.linspace(0, 255, 32)).astype(np.uint8)
    r, g, b = np.meshgrid(axis, axis, axis, indexing="ij")
    lattice = np.stack([r.ravel(), g.ravel(), b.ravel()], axis=1)
    worst_rt = 0.0
    for rgb in lattice:
        back = cmyk_to_rgb(rgb_to_cmyk(rgb))
        worst_rt = max(worst_rt, max(abs(bc - oc) / 255.0
                                     for bc, oc in zip(back, rgb)))
    array_delta = float(np.abs(
        rgb_to_cmyk_array(lattice)
        - np.array([rgb_to_cmyk(px) for px in lattice])
    ).max())

    # Blue-family pixels carry no yellow; brown-family pixels no cyan.
    rng = np.random.default_rng(9)
    blue_y = brown_c = 0.0
    for _ in range(200):
        bl = rng.uniform(160, 215)
        rg = bl * rng.uniform(0.35, 0.55)
        blue_y = max(blue_y, rgb_to_cmyk((rg, rg, bl)).y)
        rr = 255.0 * (1.0 - rng.uniform(0.1, 0.9))
        brown = (rr, rr * rng.uniform(0.45, 0.60), rr * rng.uniform(0.05, 0.20))
        brown_c = max(brown_c, rgb_to_cmyk(brown).c)

    # Calibration on separable samples reclassifies every sample.
    samples = []
    for _ in range(40):
        samples.append((CmykPixel(rng.uniform(0.3, 0.6), 0.3,
                                  rng.uniform(0.0, 0.15),
                                  rng.uniform(0.05, 0.35)),
                        StainClass.UNSTAINED))
    bands = ((0.05, 0.30, StainClass.LIGHT),
             (0.40, 0.60, StainClass.MODERATE),
             (0.70, 0.95, StainClass.DARK))
    for k_lo, k_hi, cls in bands:
        for _ in range(40):
            samples.append((CmykPixel(rng.uniform(0.0, 0.1), 0.3,
                                      rng.uniform(0.5, 0.9),
                                      rng.uniform(k_lo, k_hi)), cls))
    thresholds = calibrate_thresholds(samples)
    relabeled = sum(
        stain_class_from_mean(mean, thresholds) is label
        for mean, label in samples
    )

    checks = {
        "round_trip": worst_rt <= 1.0 / 255.0,
        "array_path_agrees": array_delta <= 1e-12,
        "blue_no_yellow": blue_y < 0.05,
        "brown_no_cyan": brown_c < 0.05,
        "recalibration": relabeled == len(samples),
    }
    failed = sorted(name for name, ok in checks.items() if not ok)
    _verdict("4 color separation suite",
             not failed,
             f"round-trip max {worst_rt:.1e}, blue max Y {blue_y:.3f}, "
             f"brown max C {brown_c:.3f}, recal {relabeled}/{len(samples)}"
             + (f", failed: {failed}" if failed else ""))


# --- 5. Cluster filter -------------------------------------------------------------

def _brute_force_components(points: np.ndarray, eps: float) -> set:
    """Connected components of the <= eps relation via O(n^2) search."""
    n = len(points)
    diff = points[:, None, :] - points[None, :, :]
    adjacent = (diff ** 2).sum(axis=-1) <= eps * eps
    seen = np.zeros(n, dtype=bool)
    components = set()
    for start in range(n):
        if seen[start]:
            continue
        stack, members = [start], []
        seen[start] = True
        while stack:
            i = stack.pop()
            members.append(i)
            for j in np.nonzero(adjacent[i])[0]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        components.add(frozenset(members))
    return components


def _point_instances(points: np.ndarray) -> list:
    return [NucleusInstance(id=i + 1, xs=np.array([x]), ys=np.array([y]))
            for i, (x, y) in enumerate(points)]


def test_05_cluster_filter(artifact_slide):
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 201))
        points = rng.integers(0, 1500, size=(n, 2))
        eps = float(rng.uniform(15.0, 160.0))
        got = {frozenset(i - 1 for i in cluster)
               for cluster in cluster_nuclei(_point_instances(points), eps)}
        if got != _brute_force_components(points, eps):
            mismatches += 1

    # Size boundary: a chain of 6 survives min_size 6, a chain of 5 does not.
    chain6 = _point_instances(np.array([[40 * i, 0] for i in range(6)]))
    chain5 = chain6[:5]
    kept6 = filter_small_clusters(cluster_nuclei(chain6, 50.0), chain6,
                                  min_size=6)
    kept5 = filter_small_clusters(cluster_nuclei(chain5, 50.0), chain5,
                                  min_size=6)

    # Artifact slide: the filter decides whether smears pollute the score.
    slide_dir, manifest = artifact_slide
    base = PipelineConfig()
    cfg_on = dataclasses.replace(
        base, cluster=dataclasses.replace(base.cluster, enabled=True,
                                          min_size=6))
    cfg_off = dataclasses.replace(
        base, cluster=dataclasses.replace(base.cluster, enabled=False))
    on = run_scoring(slide_dir / "smeared.png", "er",
                     roi_path=slide_dir / "smeared_roi.png", cfg=cfg_on)
    off = run_scoring(slide_dir / "smeared.png", "er",
                      roi_path=slide_dir / "smeared_roi.png", cfg=cfg_off)
    truth_stained = sum(manifest["expected_counts"][k]
                        for k in ("light", "moderate", "dark"))

    checks = {
        "oracle_100_sets": mismatches == 0,
        "size_6_retained": len(kept6) == 6,
        "size_5_discarded": len(kept5) == 0,
        "filter_off_inflates": off.score.counts.n_stained > truth_stained,
        "filter_on_exact":
            on.score.allred.to_dict() == manifest["expected_score"],
        "filter_on_stained_truth":
            on.score.counts.n_stained == truth_stained,
    }
    failed = sorted(name for name, ok in checks.items() if not ok)
    _verdict("5 cluster filter",
             not failed,
             f"oracle {100 - mismatches}/100, chain 6->{len(kept6)} "
             f"5->{len(kept5)}, stained off={off.score.counts.n_stained} "
             f"on={on.score.counts.n_stained} truth={truth_stained}"
             + (f", failed: {failed}" if failed else ""))


# --- 6. Agreement metric oracles ---------------------------------------------------

def _kappa_oracle(counts: np.ndarray) -> float:
    k = counts.shape[0]
    total = counts.sum()
    observed_penalty = expected_penalty = 0.0
    rows = counts.sum(axis=1) / total
    cols = counts.sum(axis=0) / total
    for i in range(k):
        for j in range(k):
            w = (i - j) ** 2 / (k - 1) ** 2
            observed_penalty += w * counts[i, j] / total
            expected_penalty += w * rows[i] * cols[j]
    return 1.0 - observed_penalty / expected_penalty


def _auc_oracle(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else (0.5 if p == q else 0.0)
    return wins / (len(pos) * len(neg))


def test_06_agreement_metric_oracles():
    rng = np.random.default_rng(11)

    kappa_worst = 0.0
    for _ in range(100):
        counts = rng.integers(0, 50, size=(4, 4)).astype(np.float64)
        counts[0, 1] += 1.0  # guarantee off-diagonal mass
        kappa_worst = max(kappa_worst,
                          abs(quadratic_kappa(counts) - _kappa_oracle(counts)))

    auc_worst = 0.0
    for _ in range(100):
        n = int(rng.integers(10, 80))
        scores = rng.integers(0, 15, size=n) / 2.0  # ties are common
        labels = np.zeros(n, dtype=int)
        labels[rng.permutation(n)[:int(rng.integers(1, n))] ] = 1
        auc_worst = max(auc_worst,
                        abs(roc_auc(scores, labels)
                            - _auc_oracle(scores, labels)))

    identity_worst = 0.0
    for _ in range(100):
        shape = (int(rng.integers(8, 48)), int(rng.integers(8, 48)))
        predicted = rng.random(shape) < rng.uniform(0.1, 0.9)
        truth = rng.random(shape) < rng.uniform(0.1, 0.9)
        report = binary_pixel_metrics(predicted, truth)
        identity_worst = max(
            identity_worst,
            abs(report["f1"] - 2.0 * report["iou"] / (1.0 + report["iou"])))

    checks = {
        "kappa_oracle": kappa_worst <= 1e-9,
        "auc_oracle": auc_worst <= 1e-9,
        "f1_iou_identity": identity_worst <= 1e-9,
    }
    failed = sorted(name for name, ok in checks.items() if not ok)
    _verdict("6 agreement metric oracles",
             not failed,
             f"kappa max {kappa_worst:.1e}, AUC max {auc_worst:.1e}, "
             f"f1/iou max {identity_worst:.1e}"
             + (f", failed: {failed}" if failed else ""))


# --- 7. Membrane grading -----------------------------------------------------------

def test_07_membrane_grading_cross_validation():
    regions = make_her2_dataset(50, seed=23, size=160, n_nuclei=6)
    dataset = [(extract_features(region), label) for region, label in regions]
    features = [vec for vec, _ in dataset]

    model_a, report_a = train_rf(dataset, k_folds=5, seed=0)
    model_b, report_b = train_rf(dataset, k_folds=5, seed=0)
    pred_a, slide_a = predict_her2(model_a, features)
    pred_b, slide_b = predict_her2(model_b, features)
    bytes_a = (model_a.to_json() + json.dumps(
        [p.value for p in pred_a] + [slide_a.value])).encode()
    bytes_b = (model_b.to_json() + json.dumps(
        [p.value for p in pred_b] + [slide_b.value])).encode()

    checks = {
        "dataset_200": len(dataset) == 200,
        "cv_kappa": report_a["kappa_mean"] >= 0.9,
        "reports_identical": report_a == report_b,
        "reruns_byte_identical": bytes_a == bytes_b,
    }
    failed = sorted(name for name, ok in checks.items() if not ok)
    _verdict("7 membrane grading",
             not failed,
             f"{len(dataset)} regions, 5-fold kappa mean "
             f"{report_a['kappa_mean']:.3f} min {report_a['kappa_min']:.3f}, "
             f"rerun {'identical' if bytes_a == bytes_b else 'DIFFERS'}"
             + (f", failed: {failed}" if failed else ""))


# --- 8. Worker determinism ---------------------------------------------------------

def test_08_pipeline_worker_determinism(er_slide):
    slide_dir, _ = er_slide
    serial = run_scoring(slide_dir / "er600.png", "er",
                         roi_path=slide_dir / "er600_roi.png", workers=1)
    threaded = run_scoring(slide_dir / "er600.png", "er",
                           roi_path=slide_dir / "er600_roi.png", workers=8)
    payload_1 = serial.score.to_json().encode()
    payload_8 = threaded.score.to_json().encode()
    digest = hashlib.sha256(payload_1).hexdigest()[:12]
    _verdict("8 worker determinism",
             payload_1 == payload_8,
             f"workers 1 vs 8 {'byte-identical' if payload_1 == payload_8 else 'DIFFER'}"
             f" (sha256 {digest}, {len(payload_1)} bytes)")
