"""Command-line entry point.

One binary, subcommand style. Commands read a JSON run config
(--config) where noted; flags win over config values. Outputs are
written atomically (write-then-rename) and deterministically; wall-clock
timings are kept out of the deterministic reports and live in scores.csv
and timing.csv. Exit code 0 means no per-image errors; otherwise a
machine-readable error listing goes to stderr and the exit code is
nonzero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import detectors, evaluation, pipeline, reduction, scorers, segmetrics, tensor_io
from .errors import BadValue, ConfigError, MissingPair, OodkitError

log = logging.getLogger("oodkit")

SCORES_COLUMNS = ("id", "score", "seconds")


# ------------------------------------------------------------------ helpers

def _write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_scores_csv(path: Path, images: list[evaluation.ScoredImage]) -> None:
    rows = [(im.id, _fmt(im.score), _fmt(im.seconds)) for im in images]
    _write_text(path, _csv_text(SCORES_COLUMNS, rows))


def read_scores_csv(path: Path) -> list[tuple[str, float, float | None]]:
    out = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        if not {"id", "score"} <= fields:
            raise ConfigError(f"{path}: scores CSV needs id and score columns")
        for row in reader:
            rid = (row.get("id") or "").strip()
            score = (row.get("score") or "").strip()
            if not rid or not score:
                raise ConfigError(f"{path}: row with missing id or score")
            seconds = (row.get("seconds") or "").strip()
            out.append((rid, float(score), float(seconds) if seconds else None))
    return out


def _load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        raise ConfigError("this command requires --config")
    p = Path(path)
    return json.loads(p.read_text()), p.parent


def _resolve_threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("OODKIT_THREADS")
    return int(env) if env else 1


def _resolve_seeds(args, doc: dict | None = None) -> tuple[int, ...]:
    if args.seeds:
        return tuple(int(s) for s in args.seeds.split(","))
    if doc and doc.get("seeds"):
        return tuple(int(s) for s in doc["seeds"])
    return pipeline.DEFAULT_SEEDS


def _scored_images(
    scores_path: Path, manifest_path: Path
) -> list[evaluation.ScoredImage]:
    """Join a scores CSV with manifest metrics by id."""
    manifest = tensor_io.load_manifest(manifest_path)
    by_id = {r.id: r for r in manifest.records}
    images = []
    for rid, score, seconds in read_scores_csv(scores_path):
        rec = by_id.get(rid)
        if rec is None:
            raise BadValue(f"scored id {rid!r} not present in manifest")
        images.append(
            evaluation.ScoredImage(
                id=rid, score=score, dsc=rec.dsc, hd=rec.hd, nsd=rec.nsd, seconds=seconds
            )
        )
    return images


def _labeling_rule(args, doc: dict | None = None) -> evaluation.LabelRule:
    mode = args.labeling
    threshold = args.threshold
    if doc:
        section = doc.get("labeling", {})
        mode = mode or section.get("mode")
        threshold = threshold if threshold is not None else section.get("threshold")
    return evaluation.LabelRule(mode=mode or "auto", threshold=threshold)


def _report_dict(report: evaluation.DetectionReport) -> dict:
    return dataclasses.asdict(report)


def _safe_filename(image_id: str) -> str:
    if "/" in image_id or "\\" in image_id or image_id in (".", ".."):
        raise BadValue(f"id {image_id!r} is not usable as a file name")
    return image_id + ".npy"


# ----------------------------------------------------------------- commands

def cmd_reduce(args) -> int:
    doc, base = _load_config(args.config)
    config = pipeline.parse_run_config(doc, base)
    out_dir = Path(args.out) if args.out else config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    train_m = tensor_io.load_manifest(config.train_manifest)
    test_m = tensor_io.load_manifest(config.test_manifest)
    red = config.reduction

    if red.method in ("none", "external"):
        if red.method == "external":
            missing = [
                r.id
                for r in train_m.records + test_m.records
                if not r.embedding_path.exists()
            ]
            if missing:
                raise ConfigError(
                    f"external reduction: missing reduced files for ids: {', '.join(sorted(missing))}"
                )
        tensor_io.write_manifest(train_m, out_dir / "train.csv")
        tensor_io.write_manifest(test_m, out_dir / "test.csv")
        log.info("reduce: method=%s, manifests point at original files", red.method)
        return 0

    emb_dir = out_dir / "embeddings"
    emb_dir.mkdir(parents=True, exist_ok=True)
    train = pipeline.load_embeddings(train_m.records)
    test = pipeline.load_embeddings(test_m.records)
    red_train, red_test, pca_model = pipeline.reduce_tensors(train, test, red)
    if pca_model is not None:
        reduction.save_pca(pca_model, out_dir / "pca_model")

    def materialize(manifest, tensors, name):
        records = []
        for rec, tensor in zip(manifest.records, tensors):
            path = emb_dir / _safe_filename(rec.id)
            tensor_io.write_npy(np.atleast_1d(tensor), path)
            records.append(tensor_io.with_embedding(rec, path))
        tensor_io.write_manifest(
            tensor_io.DatasetManifest(records=tuple(records)), out_dir / name
        )

    materialize(train_m, red_train, "train.csv")
    materialize(test_m, red_test, "test.csv")
    log.info("reduce: wrote %d embeddings under %s", len(train) + len(test), emb_dir)
    return 0


def cmd_fit(args) -> int:
    doc, base = _load_config(args.config)
    config = pipeline.parse_run_config(doc, base)
    out_dir = Path(args.out) if args.out else config.out_dir
    train_m = tensor_io.load_manifest(config.train_manifest)
    records = train_m.train_records
    vectors = np.stack(
        [t.reshape(-1) for t in pipeline.load_embeddings(records)]
    )
    model_dir = out_dir / "model"
    if config.detector.method == "mahalanobis":
        model = detectors.gaussian_fit(vectors)
        detectors.save_gaussian(model, model_dir)
        log.info("fit: gaussian m=%d jitter=%g", model.dim, model.jitter_used)
    else:
        index = detectors.knn_fit(vectors, config.detector.k)
        detectors.save_knn(index, model_dir)
        log.info("fit: knn N=%d k=%d", index.n_train, index.k)
    return 0


def _load_model(model_dir: Path):
    sidecar = json.loads((model_dir / "model.json").read_text())
    if "k" in sidecar:
        return detectors.load_knn(model_dir)
    return detectors.load_gaussian(model_dir)


def cmd_score(args) -> int:
    doc, base = _load_config(args.config)
    config = pipeline.parse_run_config(doc, base)
    out_dir = Path(args.out) if args.out else config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    model = _load_model(Path(args.model))
    test_m = tensor_io.load_manifest(config.test_manifest)
    records = test_m.test_records
    vectors = np.stack([t.reshape(-1) for t in pipeline.load_embeddings(records)])
    start = time.perf_counter()
    if isinstance(model, detectors.KnnIndex):
        scores = detectors.knn_score_many(model, vectors)
    else:
        scores = detectors.mahalanobis_many(model, vectors)
    seconds = time.perf_counter() - start
    per_image = seconds / len(records)
    images = [
        evaluation.ScoredImage(id=r.id, score=float(s), seconds=per_image)
        for r, s in zip(records, scores)
    ]
    write_scores_csv(out_dir / "scores.csv", images)
    log.info("score: %d images in %.3fs", len(records), seconds)
    return 0


def cmd_output_score(args) -> int:
    manifest = tensor_io.load_manifest(Path(args.manifest))
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    records = manifest.test_records or manifest.records
    images = []
    errors = []
    for rec in records:
        try:
            start = time.perf_counter()
            if args.method in ("msp", "energy"):
                if rec.logits_path is None:
                    raise BadValue(f"id {rec.id!r}: manifest row has no logits path")
                logits = tensor_io.read_npy(rec.logits_path, check_finite=False)
                if args.method == "msp":
                    score = scorers.msp_score(logits, args.temperature)
                else:
                    score = scorers.energy_score(logits, args.temperature)
            else:
                if rec.stack_path is None:
                    raise BadValue(f"id {rec.id!r}: manifest row has no stack path")
                stack = tensor_io.read_npy(rec.stack_path, check_finite=False)
                score = scorers.uncertainty_score(stack)
            seconds = time.perf_counter() - start
            images.append(
                evaluation.ScoredImage(
                    id=rec.id, score=score, dsc=rec.dsc, hd=rec.hd, nsd=rec.nsd,
                    seconds=seconds,
                )
            )
        except (OodkitError, OSError) as exc:
            errors.append({"id": rec.id, "error": type(exc).__name__, "message": str(exc)})
    write_scores_csv(out_dir / "scores.csv", images)
    return _finish(errors)


def cmd_seg_metrics(args) -> int:
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    flag_spacing = tuple(float(x) for x in args.spacing.split(",")) if args.spacing else None
    rows = []
    errors = []
    for pred_path in sorted(pred_dir.glob("*.npy")):
        rid = pred_path.stem
        try:
            gt_path = gt_dir / pred_path.name
            if not gt_path.exists():
                raise MissingPair(f"id {rid!r}: no ground-truth file {gt_path}")
            spacing = _spacing_for(gt_path, pred_path, flag_spacing)
            pred = segmetrics.read_mask(pred_path, spacing)
            gt = segmetrics.read_mask(gt_path, spacing)
            metrics = segmetrics.seg_metrics(pred, gt, args.tau)
            rows.append((rid, repr(metrics.dsc), repr(metrics.hd), repr(metrics.nsd)))
        except (OodkitError, OSError) as exc:
            errors.append({"id": rid, "error": type(exc).__name__, "message": str(exc)})
    _write_text(out_dir / "metrics.csv", _csv_text(("id", "dsc", "hd", "nsd"), rows))
    return _finish(errors)


def _spacing_for(gt_path: Path, pred_path: Path, flag_spacing) -> tuple[float, float, float]:
    """Per-image JSON sidecar wins over the --spacing flag."""
    for candidate in (gt_path.with_suffix(".json"), pred_path.with_suffix(".json")):
        if candidate.exists():
            doc = json.loads(candidate.read_text())
            return tuple(float(x) for x in doc["spacing"])
    if flag_spacing is None:
        raise ConfigError(f"{pred_path.stem}: no spacing sidecar and no --spacing flag")
    return flag_spacing


def cmd_evaluate(args) -> int:
    doc = json.loads(Path(args.config).read_text()) if args.config else None
    rule = _labeling_rule(args, doc)
    images = _scored_images(Path(args.scores), Path(args.manifest))
    is_ood = evaluation.label(images, rule)
    seconds = sum(im.seconds for im in images if im.seconds is not None)
    report = evaluation.evaluate(images, is_ood, seconds=seconds)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "report.json", _report_dict(report))
    log.info("evaluate: auroc=%.4f auprc=%.4f fpr90=%.4f", report.auroc, report.auprc, report.fpr90)
    return 0


def cmd_reject(args) -> int:
    doc = json.loads(Path(args.config).read_text()) if args.config else None
    rule = _labeling_rule(args, doc)
    images = _scored_images(Path(args.scores), Path(args.manifest))
    is_ood = evaluation.label(images, rule)
    report = evaluation.reject_at_tpr(images, is_ood, args.tpr)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "rejection.json", dataclasses.asdict(report))
    log.info("reject: n_rejected=%d threshold=%g", report.n_rejected, report.threshold)
    return 0


def cmd_export_scatter(args) -> int:
    images = _scored_images(Path(args.scores), Path(args.manifest))
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [(im.id, _fmt(im.score), _fmt(im.dsc)) for im in images]
    _write_text(out_dir / "scatter.csv", _csv_text(("id", "score", "dsc"), rows))
    return 0


def _write_seed_outputs(out_dir: Path, result: pipeline.SeedResult) -> None:
    seed_dir = out_dir / f"seed_{result.seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    _write_json(seed_dir / "report.json", _report_dict(result.report))
    write_scores_csv(seed_dir / "scores.csv", result.images)
    rows = [(im.id, _fmt(im.score), _fmt(im.dsc)) for im in result.images]
    _write_text(seed_dir / "scatter.csv", _csv_text(("id", "score", "dsc"), rows))


def cmd_pipeline(args) -> int:
    doc, base = _load_config(args.config)
    config = pipeline.parse_run_config(doc, base)
    out_dir = Path(args.out) if args.out else config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = _resolve_seeds(args, doc)
    train_m = tensor_io.load_manifest(config.train_manifest)
    test_m = tensor_io.load_manifest(config.test_manifest)
    raw_train = pipeline.load_embeddings(train_m.train_records)
    raw_test = pipeline.load_embeddings(test_m.test_records)

    results = []
    errors = []
    for seed in seeds:
        try:
            result = pipeline.run_seed(
                train_m, test_m, config.reduction, config.detector, config.labeling, seed,
                raw_train=raw_train, raw_test=raw_test,
            )
        except OodkitError as exc:
            errors.append({"seed": seed, "error": type(exc).__name__, "message": str(exc)})
            continue
        results.append(result)
        _write_seed_outputs(out_dir, result)

    if results:
        reports = [r.report for r in results]
        agg = {}
        for name in ("auroc", "auprc", "fpr90"):
            mean, std = pipeline.aggregate([getattr(r, name) for r in reports])
            agg[f"{name}_mean"] = mean
            agg[f"{name}_std"] = std
        agg["n_seeds"] = len(results)
        agg["seeds"] = [r.seed for r in results]
        agg["label_threshold"] = results[0].label_threshold
        agg["n_id"] = reports[0].n_id
        agg["n_ood"] = reports[0].n_ood
        _write_json(out_dir / "aggregate.json", agg)
        timing_rows = [
            (r.seed, repr(r.reduce_seconds), repr(r.score_seconds)) for r in results
        ]
        _write_text(
            out_dir / "timing.csv",
            _csv_text(("seed", "reduce_seconds", "score_seconds"), timing_rows),
        )
    return _finish(errors)


def cmd_grid_search(args) -> int:
    doc, base = _load_config(args.config)
    io_doc = doc.get("io", {})
    try:
        train_path = base / io_doc["train_manifest"]
        test_path = base / io_doc["test_manifest"]
    except KeyError as exc:
        raise ConfigError(f"grid config missing io.{exc.args[0]}") from exc
    out_dir = Path(args.out) if args.out else base / io_doc.get("out_dir", "out")
    out_dir.mkdir(parents=True, exist_ok=True)
    rule = _labeling_rule(args, doc)
    seeds = _resolve_seeds(args, doc)
    entries = pipeline.expand_grid(doc.get("grid", {}))
    rows = pipeline.grid_search(
        tensor_io.load_manifest(train_path),
        tensor_io.load_manifest(test_path),
        entries,
        rule,
        seeds=seeds,
        threads=_resolve_threads(args),
    )
    header = (
        "experiment",
        "auroc_mean", "auroc_std",
        "auprc_mean", "auprc_std",
        "fpr90_mean", "fpr90_std",
        "seconds_mean", "seconds_std",
    )
    csv_rows = [
        (
            row.name,
            _fmt(row.auroc_mean), _fmt(row.auroc_std),
            _fmt(row.auprc_mean), _fmt(row.auprc_std),
            _fmt(row.fpr90_mean), _fmt(row.fpr90_std),
            _fmt(row.seconds_mean), _fmt(row.seconds_std),
        )
        for row in rows
        if row.error is None
    ]
    _write_text(out_dir / "grid.csv", _csv_text(header, csv_rows))
    errors = [
        {"experiment": row.name, "error": "ConfigFailed", "message": row.error}
        for row in rows
        if row.error is not None
    ]
    log.info("grid-search: %d configs, %d failed", len(rows), len(errors))
    return _finish(errors)


def _finish(errors: list[dict]) -> int:
    if errors:
        print(json.dumps({"errors": errors}, sort_keys=True), file=sys.stderr)
        return 1
    return 0


# ------------------------------------------------------------------- parser

def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run config")
    parser.add_argument("--out", help="output directory (overrides config io.out_dir)")
    parser.add_argument("--seeds", help="comma-separated seed list (overrides config)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $OODKIT_THREADS or 1)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress logging")


def _labeling_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--labeling", choices=("auto", "median", "fixed"), default=None)
    parser.add_argument("--threshold", type=float, default=None,
                        help="DSC threshold for --labeling fixed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodkit",
        description="Feature-space OOD detection toolkit for segmentation models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reduce", help="write dimensionality-reduced embeddings + manifests")
    _common_flags(p)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("fit", help="fit the configured detector on the train manifest")
    _common_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="score the test manifest with a saved model")
    _common_flags(p)
    p.add_argument("--model", required=True, help="model directory from `fit`")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("output-score", help="logit/stack-based scores (msp, energy, uncertainty)")
    _common_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", choices=("msp", "energy", "uncertainty"), required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(func=cmd_output_score)

    p = sub.add_parser("seg-metrics", help="DSC/HD/NSD between prediction and ground-truth masks")
    _common_flags(p)
    p.add_argument("--pred", required=True, help="directory of predicted masks (*.npy)")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks")
    p.add_argument("--spacing", help="voxel spacing sz,sy,sx in mm")
    p.add_argument("--tau", type=float, default=segmetrics.DEFAULT_NSD_TOLERANCE_MM,
                   help="NSD tolerance in mm")
    p.set_defaults(func=cmd_seg_metrics)

    p = sub.add_parser("evaluate", help="detection report from a scores CSV + manifest")
    _common_flags(p)
    _labeling_flags(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="reduce/fit/score/evaluate across seeds")
    _common_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("grid-search", help="evaluate a reduction x detector grid")
    _common_flags(p)
    _labeling_flags(p)
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("reject", help="downstream rejection study at a TPR target")
    _common_flags(p)
    _labeling_flags(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--tpr", type=float, default=evaluation.DEFAULT_TPR_TARGET)
    p.set_defaults(func=cmd_reject)

    p = sub.add_parser("export-scatter", help="score-vs-DSC scatter data CSV")
    _common_flags(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_export_scatter)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except OodkitError as exc:
        print(
            json.dumps({"errors": [{"error": type(exc).__name__, "message": str(exc)}]}),
            file=sys.stderr,
        )
        return 2
    except FileNotFoundError as exc:
        print(
            json.dumps({"errors": [{"error": "FileNotFound", "message": str(exc)}]}),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
