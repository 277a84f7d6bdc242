"""Command-line interface: the pipeline as subcommands over a run directory.

Exit codes: 0 ok, 2 data error, 3 protocol error, 4 internal. Log verbosity
comes from the SUPERPATCH_LOG environment variable (debug/info/warning).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from .errors import EXIT_INTERNAL, EXIT_OK, SuperpatchError
from .inference import evaluate, export_assignments, load_model, save_model
from .pipeline import (
    ELBOW,
    RunConfig,
    build_config,
    load_dataset,
    resolved_config_text,
    train_model,
)
from .semantics import cluster_purity_report, purity_report_to_csv
from .store import validate_dataset

logger = logging.getLogger(__name__)

MODEL_FILENAME = "model.apmd"


def _setup_logging() -> None:
    level = os.environ.get("SUPERPATCH_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _config_overrides(args: argparse.Namespace) -> dict[str, str]:
    keys = (
        "dataset_dir",
        "k",
        "k_grid",
        "positional_weight",
        "saliency_train",
        "saliency_eval",
        "normalization",
        "batch_size_images",
        "seed",
        "max_iters",
        "tol",
        "threads",
        "sweep_weights",
        "patch_size",
    )
    out = {}
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = str(value)
    return out


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    return build_config(getattr(args, "config", None), _config_overrides(args))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key = value config file; flags override it")
    parser.add_argument("--dataset-dir", dest="dataset_dir", help="dataset directory")
    parser.add_argument("--k", help="cluster count, or 'elbow'")
    parser.add_argument("--k-grid", dest="k_grid", help="comma-separated K values")
    parser.add_argument("--positional-weight", dest="positional_weight", help="mixing weight in [0,1]")
    parser.add_argument("--saliency-train", dest="saliency_train", help="true/false")
    parser.add_argument("--saliency-eval", dest="saliency_eval", help="true/false")
    parser.add_argument("--normalization", help="per_cluster or dataset_wide")
    parser.add_argument("--batch-size-images", dest="batch_size_images", help="mini-batch size in images")
    parser.add_argument("--seed", help="RNG seed")
    parser.add_argument("--max-iters", dest="max_iters", help="max training epochs")
    parser.add_argument("--tol", help="convergence tolerance")
    parser.add_argument("--threads", help="worker cap for parallel sections")
    parser.add_argument("--patch-size", dest="patch_size", help="metadata echoed into sweep CSV")


def cmd_validate(args: argparse.Namespace) -> int:
    problems = validate_dataset(args.dataset_dir)
    for _, message in problems:
        print(message, file=sys.stderr)
    print(f"{len(problems)} errors")
    if not problems:
        return EXIT_OK
    return max(code for code, _ in problems)


def _write_train_artifacts(out_dir: Path, cfg: RunConfig, result) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(result.model, out_dir / MODEL_FILENAME)
    (out_dir / "config.resolved").write_text(resolved_config_text(cfg), encoding="utf-8")
    with open(out_dir / "train_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "sse"])
        for epoch, sse in enumerate(result.sse_per_epoch, start=1):
            writer.writerow([epoch, repr(float(sse))])
    metrics = [
        f"chosen_k = {result.chosen_k}",
        f"k_source = {'elbow' if result.elbow_curve is not None else 'config'}",
        f"n_images = {result.n_images}",
        f"n_patches = {result.n_patches}",
        f"iterations_run = {result.model.centroids.iterations_run}",
        f"training_sse = {result.model.centroids.training_sse!r}",
        f"empty_clusters = {len(result.model.semantics.empty_clusters)}",
    ]
    (out_dir / "metrics.txt").write_text("\n".join(metrics) + "\n", encoding="utf-8")
    if result.elbow_curve is not None:
        result.elbow_curve.to_csv(out_dir / "elbow.csv")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    cfg.validate_for_train()
    manifest, hierarchy = load_dataset(cfg.dataset_dir)
    try:
        result = train_model(manifest, hierarchy, cfg)
    except SuperpatchError as exc:
        exc.args = (f"train stage failed: {exc}",)
        raise
    _write_train_artifacts(Path(args.out), cfg, result)
    purity = cluster_purity_report(result.model.semantics, hierarchy)
    purity_report_to_csv(purity, Path(args.out) / "purity.csv")
    print(f"trained k={result.chosen_k} on {result.n_images} images ({result.n_patches} patches)")
    print(f"model written to {Path(args.out) / MODEL_FILENAME}")
    return EXIT_OK


def cmd_elbow(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if cfg.k != ELBOW:
        cfg.k = ELBOW
    cfg.validate_for_train()
    manifest, hierarchy = load_dataset(cfg.dataset_dir)
    from .clustering import elbow_select
    from .pipeline import _gather_known

    groups, _, _ = _gather_known(manifest, cfg)
    curve, chosen = elbow_select(
        groups,
        cfg.k_grid,
        batch_size_images=cfg.batch_size_images,
        max_iters=cfg.max_iters,
        seed=cfg.seed,
        tol=cfg.tol,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out_dir / "elbow.csv")
    (out_dir / "config.resolved").write_text(resolved_config_text(cfg), encoding="utf-8")
    print(f"chosen_k = {chosen}")
    return EXIT_OK


def _write_eval_artifacts(out_dir: Path, report, hierarchy) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.format_text(hierarchy), encoding="utf-8")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        ks = sorted(report.top_k_accuracy)
        writer.writerow(["n_images"] + [f"top{k}" for k in ks])
        writer.writerow([report.n_images] + [repr(report.top_k_accuracy[k]) for k in ks])
    with open(out_dir / "confusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["true\\pred"] + list(range(report.confusion.shape[1])))
        for s in range(report.confusion.shape[0]):
            writer.writerow([s] + [int(v) for v in report.confusion[s]])
    with open(out_dir / "per_superclass.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["superclass_id", "superclass_name", "images", "top1_accuracy"])
        row_counts = report.confusion.sum(axis=1)
        for s, acc in enumerate(report.per_superclass_accuracy):
            writer.writerow([s, hierarchy.superclass_names[s], int(row_counts[s]), repr(float(acc))])


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    manifest, hierarchy = load_dataset(args.dataset_dir)
    report = evaluate(manifest, model, split=args.split, allow_known=args.allow_known)
    print(report.format_text(hierarchy), end="")
    if args.out:
        _write_eval_artifacts(Path(args.out), report, hierarchy)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    cfg.validate_for_sweep()
    manifest, hierarchy = load_dataset(cfg.dataset_dir)
    weights = cfg.sweep_weights if cfg.sweep_weights else (cfg.positional_weight,)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in cfg.k_grid:
        for weight in weights:
            from dataclasses import replace

            point = replace(cfg, k=int(k), k_grid=(), positional_weight=float(weight), sweep_weights=())
            variant = (
                f"w={weight:g},norm={point.normalization},"
                f"sal_train={str(point.saliency_train).lower()},sal_eval={str(point.saliency_eval).lower()}"
            )
            try:
                result = train_model(manifest, hierarchy, point)
                report = evaluate(manifest, result.model, split="unknown")
                rows.append(
                    [
                        k,
                        point.patch_size,
                        variant,
                        repr(report.top_k_accuracy[1]),
                        repr(report.top_k_accuracy[2]),
                        repr(report.top_k_accuracy[3]),
                        "ok",
                    ]
                )
            except SuperpatchError as exc:
                logger.warning("sweep point k=%s %s failed: %s", k, variant, exc)
                rows.append([k, point.patch_size, variant, "", "", "", f"failed: {type(exc).__name__}"])
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "patch_size", "variant", "top1", "top2", "top3", "status"])
        writer.writerows(rows)
    print(f"swept {len(rows)} configurations -> {out_path}")
    return EXIT_OK


def cmd_export_assignments(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    manifest, _ = load_dataset(args.dataset_dir)
    count = export_assignments(manifest, model, args.out, split=args.split)
    print(f"wrote {count} patch rows to {args.out}")
    return EXIT_OK


def cmd_model_info(args: argparse.Namespace) -> int:
    model = load_model(args.path)
    print(f"format_version = {model.format_version}")
    print(f"k = {model.centroids.k}")
    print(f"class_count = {model.semantics.class_count}")
    print(f"superclass_count = {model.hierarchy.superclass_count}")
    print(f"feature_dim = {model.centroids.dim}")
    print(f"positional_weight = {model.positional.weight:g}")
    print(f"normalization = {model.semantics.mode}")
    print(f"saliency_train = {str(model.saliency_enabled_train).lower()}")
    print(f"saliency_eval = {str(model.saliency_enabled_eval).lower()}")
    print(f"empty_clusters = {len(model.semantics.empty_clusters)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="superpatch",
        description="Superclass prediction for unseen classes from clustered patch-appearance features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a dataset directory")
    p.add_argument("dataset_dir", type=Path)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train a model into a run directory")
    _add_config_flags(p)
    p.add_argument("--out", required=True, type=Path, help="run directory for artifacts")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("elbow", help="fit a K grid and report the elbow choice")
    _add_config_flags(p)
    p.add_argument("--out", required=True, type=Path, help="output directory for elbow.csv")
    p.set_defaults(func=cmd_elbow)

    p = sub.add_parser("eval", help="evaluate a model on a dataset split")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--dataset-dir", dest="dataset_dir", required=True, type=Path)
    p.add_argument("--split", choices=["known", "unknown"], default="unknown")
    p.add_argument("--allow-known", action="store_true", help="override the known-split protocol guard")
    p.add_argument("--out", type=Path, help="directory for report files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train+eval across k_grid x sweep_weights into one CSV")
    _add_config_flags(p)
    p.add_argument("--out", required=True, type=Path, help="consolidated CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-assignments", help="export per-patch cluster assignments as CSV")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--dataset-dir", dest="dataset_dir", required=True, type=Path)
    p.add_argument("--split", choices=["known", "unknown"], default=None)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_export_assignments)

    p = sub.add_parser("model", help="model file utilities")
    model_sub = p.add_subparsers(dest="model_command", required=True)
    info = model_sub.add_parser("info", help="print model header fields")
    info.add_argument("path", type=Path)
    info.set_defaults(func=cmd_model_info)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SuperpatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - defensive
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
