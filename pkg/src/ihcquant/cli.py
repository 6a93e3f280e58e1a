"""Command line interface.

Exit codes: 0 success, 1 input/usage error, 2 quality-control rejection
(e.g. a slide with nothing to score). Every command writes a run
manifest next to its outputs recording the effective config hash, input
digests, package version, and wall time, so results can be traced back
to exactly what produced them.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from . import her2 as her2_mod
from . import metrics as metrics_mod
from . import nuclei as nuclei_mod
from . import score as score_mod
from . import stain as stain_mod
from . import synth as synth_mod
from .config import config_hash, load_config
from .errors import EmptySlide, IhcError
from .forest import ForestConfig
from .pipeline import run_scoring
from .slideio import open_slide

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_QC_REJECT = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract reserves 2 for QC
    def error(self, message):
        raise UsageError(message)


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_manifest(out_dir: Path, command: str, argv: list[str],
                        inputs: list[Path], outputs: list[str],
                        cfg_hash: str | None, seed: int | None,
                        started: float) -> None:
    manifest = {
        "command": command,
        "argv": argv,
        "package_version": __version__,
        "config_hash": cfg_hash,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs if p.exists()},
        "outputs": sorted(outputs),
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2)
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ihcquant",
                     description="IHC slide quantification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score one slide end to end")
    p.add_argument("--slide", required=True)
    p.add_argument("--marker", required=True, choices=("er", "pr", "ki67"))
    p.add_argument("--roi", default=None,
                   help="ROI mask (PNG+sidecar or RLE JSON); tissue mask "
                        "fallback when omitted")
    p.add_argument("--config", default=None, help="JSON config overrides")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-cluster-filter", action="store_true",
                   help="disable small-cluster false positive removal")

    p = sub.add_parser("detect", help="detect nuclei without scoring")
    p.add_argument("--slide", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("calibrate",
                       help="fit stain thresholds from labeled samples")
    p.add_argument("--samples", required=True,
                   help="JSON list of {cmyk: [c,m,y,k], label: <class>}")
    p.add_argument("--out", required=True)

    p = sub.add_parser("her2-features",
                       help="extract HER2 features from region crops")
    p.add_argument("--regions", required=True,
                   help="directory of <id>_rgb/_membrane/_nuclei.png triples")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)

    p = sub.add_parser("her2-train", help="train the HER2 grader")
    p.add_argument("--features", required=True,
                   help="feature CSV with non-empty label column")
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)

    p = sub.add_parser("her2-predict", help="grade regions and the slide")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--slide-mode", choices=("pool", "vote"), default="pool")

    p = sub.add_parser("eval", help="compare predicted scores to reference")
    p.add_argument("--truth", required=True, help="reference CSV")
    p.add_argument("--pred", required=True, help="predicted CSV")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="generate a synthetic slide + manifest")
    p.add_argument("--spec", required=True, help="slide spec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="slide")

    p = sub.add_parser("verify",
                       help="check a synthetic manifest for consistency")
    p.add_argument("--manifest", required=True)
    return parser


def _cmd_score(args, argv) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = load_config(args.config)
    if args.no_cluster_filter:
        import dataclasses
        cfg = dataclasses.replace(
            cfg, cluster=dataclasses.replace(cfg.cluster, enabled=False))
    chash = config_hash(cfg)
    slide_path = Path(args.slide)

    try:
        result = run_scoring(slide_path, args.marker, roi_path=args.roi,
                             cfg=cfg, workers=args.workers)
    except EmptySlide as exc:
        qc = {"qc": "rejected", "reason": str(exc), "slide": str(slide_path)}
        (out_dir / "qc_report.json").write_text(
            json.dumps(qc, sort_keys=True, indent=2))
        _write_run_manifest(out_dir, "score", argv,
                            [slide_path] + ([Path(args.roi)] if args.roi else []),
                            ["qc_report.json"], chash, None, started)
        print(f"QC rejection: {exc}", file=sys.stderr)
        return EXIT_QC_REJECT

    payload = result.score.to_dict()
    payload["config_hash"] = chash
    (out_dir / "score.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2))
    nuclei_mod.save_instances_json(result.instances,
                                   out_dir / "instances.json")
    with open(out_dir / "scores.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=score_mod.CSV_FIELDS)
        writer.writeheader()
        writer.writerow(score_mod.score_csv_row(result.score))
    outputs = ["score.json", "instances.json", "scores.csv"]
    _write_run_manifest(out_dir, "score", argv,
                        [slide_path] + ([Path(args.roi)] if args.roi else []),
                        outputs, chash, None, started)
    print(f"{result.score.slide_id}: {args.marker} -> "
          f"{result.score.category} ({result.score.counts.n_stained}/"
          f"{result.score.counts.total} stained)")
    return EXIT_OK


def _cmd_detect(args, argv) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    slide = open_slide(args.slide)
    from .pipeline import detect_slide
    instances, _ = detect_slide(slide, cfg, workers=args.workers)
    nuclei_mod.save_instances_json(instances, out_dir / "instances.json")
    w0, h0 = slide.dimensions
    nuclei_mod.write_label_png(instances, w0, h0, out_dir / "labels.png")
    summary = {"n_instances": len(instances),
               "slide": str(args.slide), "config_hash": chash}
    (out_dir / "detect_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2))
    _write_run_manifest(out_dir, "detect", argv, [Path(args.slide)],
                        ["instances.json", "labels.png",
                         "detect_summary.json"], chash, None, started)
    print(f"detected {len(instances)} nuclei")
    return EXIT_OK


def _cmd_calibrate(args, argv) -> int:
    started = time.monotonic()
    samples_path = Path(args.samples)
    payload = json.loads(samples_path.read_text())
    samples = []
    for rec in payload:
        cmyk = stain_mod.CmykPixel(*[float(v) for v in rec["cmyk"]])
        samples.append((cmyk, stain_mod.StainClass(rec["label"])))
    thresholds = stain_mod.calibrate_thresholds(samples)
    per_class: dict[str, int] = {}
    for _, label in samples:
        per_class[label.value] = per_class.get(label.value, 0) + 1
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    stain_mod.save_thresholds(thresholds, out_path,
                              samples_per_class=per_class)
    _write_run_manifest(out_path.parent, "calibrate", argv, [samples_path],
                        [out_path.name], None, None, started)
    print(f"delta_u={thresholds.delta_u:.4f} "
          f"delta_sl={thresholds.delta_sl:.4f} "
          f"delta_su={thresholds.delta_su:.4f}")
    return EXIT_OK


def _cmd_her2_features(args, argv) -> int:
    started = time.monotonic()
    regions_dir = Path(args.regions)
    if not regions_dir.is_dir():
        raise UsageError(f"not a directory: {regions_dir}")
    cfg = load_config(args.config)
    labels: dict[str, her2_mod.Her2Score] = {}
    labels_csv = regions_dir / "labels.csv"
    if labels_csv.exists():
        with open(labels_csv, newline="") as fh:
            for row in csv.DictReader(fh):
                labels[row["region_id"]] = her2_mod.Her2Score(row["label"])
    region_ids = sorted(
        p.name[:-len("_rgb.png")]
        for p in regions_dir.glob("*_rgb.png")
    )
    if not region_ids:
        raise UsageError(f"no <id>_rgb.png regions under {regions_dir}")
    rows = []
    for rid in region_ids:
        region = synth_mod.load_her2_region(regions_dir, rid)
        vec = her2_mod.extract_features(
            region,
            ring_completeness_frac=cfg.her2.ring_completeness_frac,
            ring_dilation_px=cfg.her2.ring_dilation_px,
            ratio_cap=cfg.her2.ratio_cap,
        )
        rows.append((rid, vec, labels.get(rid)))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    her2_mod.write_feature_csv(out_path, rows)
    _write_run_manifest(out_path.parent, "her2-features", argv,
                        [regions_dir / "labels.csv"], [out_path.name],
                        config_hash(cfg), None, started)
    print(f"wrote features for {len(rows)} regions")
    return EXIT_OK


def _cmd_her2_train(args, argv) -> int:
    started = time.monotonic()
    rows = her2_mod.read_feature_csv(args.features)
    dataset = [(vec, label) for _, vec, label in rows if label is not None]
    if not dataset:
        raise UsageError("feature CSV has no labeled rows")
    cfg = load_config(args.config)
    forest_cfg = ForestConfig(
        n_trees=cfg.her2.n_trees,
        max_depth=cfg.her2.max_depth,
        features_per_split=cfg.her2.features_per_split,
    )
    model, report = her2_mod.train_rf(dataset, config=forest_cfg,
                                      k_folds=args.folds, seed=args.seed)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    her2_mod.save_model(model, out_path)
    (out_path.parent / "cv_report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2))
    _write_run_manifest(out_path.parent, "her2-train", argv,
                        [Path(args.features)],
                        [out_path.name, "cv_report.json"],
                        config_hash(cfg), args.seed, started)
    print(f"cv quadratic kappa mean={report['kappa_mean']:.4f} "
          f"min={report['kappa_min']:.4f} over {args.folds} folds")
    return EXIT_OK


def _cmd_her2_predict(args, argv) -> int:
    started = time.monotonic()
    model = her2_mod.load_model(args.model)
    rows = her2_mod.read_feature_csv(args.features)
    if not rows:
        raise UsageError("feature CSV is empty")
    features = [vec for _, vec, _ in rows]
    per_region, slide = her2_mod.predict_her2(model, features,
                                              slide_mode=args.slide_mode)
    payload = {
        "slide_mode": args.slide_mode,
        "regions": {rid: score.value
                    for (rid, _, _), score in zip(rows, per_region)},
        "slide": slide.value,
        "clinical_category": slide.clinical_category,
    }
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(payload, sort_keys=True, indent=2))
    _write_run_manifest(out_path.parent, "her2-predict", argv,
                        [Path(args.model), Path(args.features)],
                        [out_path.name], None, None, started)
    print(f"slide HER2 {slide.value} ({slide.clinical_category})")
    return EXIT_OK


def _read_score_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(score_mod.CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise UsageError(f"{path.name} missing columns {sorted(missing)}")
        return sorted(reader, key=lambda r: (r["slide_id"], r["marker"]))


def _cmd_eval(args, argv) -> int:
    started = time.monotonic()
    truth_rows = _read_score_csv(Path(args.truth))
    pred_rows = _read_score_csv(Path(args.pred))
    if len(truth_rows) != len(pred_rows):
        raise UsageError(
            f"row counts differ: {len(truth_rows)} reference vs "
            f"{len(pred_rows)} predicted"
        )
    for t, p in zip(truth_rows, pred_rows):
        if (t["slide_id"], t["marker"]) != (p["slide_id"], p["marker"]):
            raise UsageError(
                f"row mismatch: {t['slide_id']}/{t['marker']} vs "
                f"{p['slide_id']}/{p['marker']}"
            )
    report = {
        "n": len(truth_rows),
        "category": metrics_mod.evaluation_report(
            [t["category"] for t in truth_rows],
            [p["category"] for p in pred_rows],
        ),
    }
    her2_pairs = [(t["her2"], p["her2"]) for t, p in zip(truth_rows, pred_rows)
                  if t["her2"] and p["her2"]]
    if her2_pairs:
        report["her2"] = metrics_mod.evaluation_report(
            [t for t, _ in her2_pairs], [p for _, p in her2_pairs],
            labels=list(her2_mod.HER2_CLASSES), ordinal=True,
        )
    ts_pairs = [(t["TS"], p["TS"]) for t, p in zip(truth_rows, pred_rows)
                if t["TS"] and p["TS"]]
    if ts_pairs:
        report["allred_ts"] = metrics_mod.evaluation_report(
            [int(t) for t, _ in ts_pairs], [int(p) for _, p in ts_pairs],
            labels=list(range(9)), ordinal=True,
        )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, sort_keys=True, indent=2))
    _write_run_manifest(out_path.parent, "eval", argv,
                        [Path(args.truth), Path(args.pred)],
                        [out_path.name], None, None, started)
    pa = report["category"]["percentage_agreement"]
    print(f"category agreement {pa:.2f}% over {report['n']} slides")
    return EXIT_OK


def _cmd_synth(args, argv) -> int:
    started = time.monotonic()
    spec_payload = json.loads(Path(args.spec).read_text())
    fixed = {k: tuple(v) if isinstance(v, list) and k != "roi_polygons"
             else v for k, v in spec_payload.items()}
    if "roi_polygons" in fixed and fixed["roi_polygons"] is not None:
        fixed["roi_polygons"] = tuple(
            tuple(tuple(pt) for pt in poly) for poly in fixed["roi_polygons"]
        )
    try:
        spec = synth_mod.SlideSpec(**fixed)
    except TypeError as exc:
        raise UsageError(f"bad slide spec: {exc}") from exc
    out_dir = Path(args.out)
    manifest = synth_mod.generate_slide(spec, out_dir, name=args.name)
    outputs = list(manifest["files"].values()) + [f"{args.name}_manifest.json"]
    _write_run_manifest(out_dir, "synth", argv, [Path(args.spec)],
                        outputs, None, spec.seed, started)
    print(f"generated {manifest['files']['slide']} with "
          f"{len(manifest['nuclei'])} nuclei")
    return EXIT_OK


def _cmd_verify(args, argv) -> int:
    manifest_path = Path(args.manifest)
    manifest = synth_mod.load_manifest(manifest_path)
    problems = synth_mod.verify_manifest(manifest,
                                         base_dir=manifest_path.parent)
    if problems:
        for problem in problems:
            print(f"INCONSISTENT: {problem}", file=sys.stderr)
        return EXIT_QC_REJECT
    print("manifest consistent")
    return EXIT_OK


_COMMANDS = {
    "score": _cmd_score,
    "detect": _cmd_detect,
    "calibrate": _cmd_calibrate,
    "her2-features": _cmd_her2_features,
    "her2-train": _cmd_her2_train,
    "her2-predict": _cmd_her2_predict,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
    "verify": _cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except (IhcError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
