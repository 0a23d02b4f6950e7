"""Command-line interface: ``otce <command> ...``.

Exit codes: 0 success, 1 computation error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import TaskPair, load_dataset, load_manifest
from .evaluation import (
    DEFAULT_AUX_FRACTION,
    METRICS,
    ExperimentConfig,
    compute_all,
    dumps_report,
    fit_from_metrics,
    fusion_weights,
    metric_scores,
    run_experiment,
    select_best,
    selection_accuracy,
    split_auxiliary,
)
from .fit import default_model, load_model, model_to_dict, save_model
from .metrics import compute_pair_metrics, score_batch
from .ot import DEFAULT_EPSILON, DEFAULT_MAX_ITERS, DEFAULT_TOL
from .synth import PLANTED_SIGMA, SynthConfig, generate_suite

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2


class ComputationFailed(Exception):
    """Raised when a command ran but some requested result could not be produced."""


# -- output helpers -------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def emit(rows: list[dict], fmt: str, out=None) -> None:
    out = out or sys.stdout
    if fmt == "auto":
        fmt = "table" if out.isatty() else "record"
    if fmt == "record":
        for row in rows:
            out.write(json.dumps(row) + "\n")
        return
    if not rows:
        return
    cols = list(rows[0])
    cells = [[_fmt(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    out.write("  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip() + "\n")
    for row in cells:
        out.write("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() + "\n")


def _metric_list(text: str) -> tuple[str, ...]:
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    unknown = [n for n in names if n not in METRICS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown metric(s): {', '.join(unknown)}")
    return names


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1)")
    return v


def _experiment_config(args, metrics=None) -> ExperimentConfig:
    return ExperimentConfig(
        aux_fraction=getattr(args, "aux_fraction", DEFAULT_AUX_FRACTION),
        seed=args.seed,
        epsilon=args.epsilon,
        max_iters=args.max_iters,
        tol=args.tol,
        metrics=metrics or getattr(args, "metrics", None) or ("otce",),
        standardize=getattr(args, "standardize", "auxiliary"),
        normalize_cost=args.normalize_cost,
        threads=args.threads,
    )


def _load_model_arg(path):
    if path is None or path == "default":
        return default_model()
    return load_model(path)


# -- commands ------------------------------------------------------------------------


def cmd_compute(args) -> int:
    metrics = args.metrics or ("wd", "wt")
    if args.manifest:
        manifest = load_manifest(args.manifest)
        results = compute_all(manifest, _experiment_config(args, metrics=("otce",)))
    else:
        if not (args.source and args.target):
            raise ValueError("give SOURCE and TARGET paths, or --manifest")
        pair = TaskPair(
            load_dataset(args.source, args.source_format),
            load_dataset(args.target, args.target_format),
            args.pair_id or Path(args.target).stem,
        )
        results = [
            compute_pair_metrics(
                pair, args.epsilon, args.max_iters, args.tol, normalize_cost=args.normalize_cost
            )
        ]
    rows = []
    for m in results:
        row = {"pair_id": m.pair_id}
        if "wd" in metrics:
            row["w_d"] = m.w_d
        if "wt" in metrics:
            row["w_t"] = m.w_t
        if "otnce" in metrics:
            row["otnce"] = -m.w_t
        row.update(
            epsilon=m.epsilon,
            n_source=m.n_source,
            n_target=m.n_target,
            marginal_error=m.marginal_error,
            iterations_used=m.iterations_used,
            converged=m.converged,
        )
        rows.append(row)
    emit(rows, args.format)
    return EXIT_OK


def _ground_truth_manifest(path):
    manifest = load_manifest(path)
    if not manifest.has_accuracies():
        raise ValueError("no ground truth: every manifest entry needs transfer_accuracy")
    return manifest


def cmd_fit(args) -> int:
    manifest = _ground_truth_manifest(args.manifest)
    config = _experiment_config(args)
    ids = [e.pair_id for e in manifest]
    if args.all:
        aux_ids = sorted(ids)
    else:
        aux_ids, _ = split_auxiliary(ids, config.aux_fraction, config.seed)
    if aux_ids:
        metrics = compute_all(manifest, config)
        acc = {e.pair_id: e.transfer_accuracy for e in manifest}
        model = fit_from_metrics(metrics, acc, aux_ids, config, pool_ids=sorted(ids))
    else:
        model = default_model()
    save_model(model, args.output)
    row = model_to_dict(model)
    row.pop("auxiliary_ids")
    row["output"] = str(args.output)
    emit([row], args.format)
    return EXIT_OK


def cmd_score(args) -> int:
    manifest = load_manifest(args.manifest)
    model = _load_model_arg(args.model)
    metrics = compute_all(manifest, _experiment_config(args))
    scores = score_batch(metrics, model)
    rows = [
        {"pair_id": m.pair_id, "otce": float(s), "w_d": m.w_d, "w_t": m.w_t}
        for m, s in zip(metrics, scores)
    ]
    emit(rows, args.format)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = _ground_truth_manifest(args.manifest)
    report = run_experiment(manifest, _experiment_config(args))
    text = dumps_report(report)
    if args.output:
        Path(args.output).write_text(text)
    fmt = args.format
    if fmt == "auto":
        fmt = "table" if sys.stdout.isatty() else "record"
    if fmt == "record":
        sys.stdout.write(text)
    else:
        rows = [
            {"metric": name, "pearson_r": r if r is not None else "failed"}
            for name, r in report["correlations"].items()
        ]
        emit(rows, "table")
    if not report["ok"]:
        for name, msg in report["errors"].items():
            print(f"error: metric {name}: {msg}", file=sys.stderr)
        raise ComputationFailed("some requested metrics failed")
    return EXIT_OK


def _entry_scores(manifest, args):
    config = _experiment_config(args)
    metrics = compute_all(manifest, config)
    model = _load_model_arg(getattr(args, "model", None))
    return metric_scores(args.metric, metrics, list(manifest.entries), model)


def cmd_select(args) -> int:
    manifest = _ground_truth_manifest(args.manifest)
    missing = [e.pair_id for e in manifest if e.group is None]
    if missing:
        raise ValueError(f"entries without a 'group' (target id): {', '.join(missing)}")
    scores = _entry_scores(manifest, args)
    groups = defaultdict(list)
    for e, s in zip(manifest, scores):
        groups[e.group].append((e.source_id or e.pair_id, float(s), e.transfer_accuracy))
    grouped = sorted(groups.items())
    ratio = selection_accuracy(grouped)
    rows = []
    for target, sources in grouped:
        by_score, by_acc = select_best(sources)
        rows.append(
            {"target": target, "selected": by_score, "best": by_acc, "success": by_score == by_acc}
        )
    emit(rows, args.format)
    emit([{"selection_accuracy": ratio, "groups": len(grouped)}], args.format)
    return EXIT_OK


def cmd_fuse(args) -> int:
    if args.scores is not None:
        ids = [f"s{i}" for i in range(len(args.scores))]
        scores = np.array(args.scores)
    elif args.manifest:
        manifest = load_manifest(args.manifest)
        scores = _entry_scores(manifest, args)
        ids = [e.source_id or e.pair_id for e in manifest]
    else:
        raise ValueError("give --scores or a manifest")
    weights = fusion_weights(scores, args.temperature)
    emit(
        [{"id": i, "score": float(s), "weight": float(w)} for i, s, w in zip(ids, scores, weights)],
        args.format,
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    base = SynthConfig(
        seed=args.seed,
        n_source=args.n_source,
        n_target=args.n_target,
        d=args.d,
        num_source_classes=args.source_classes,
        num_target_classes=args.target_classes,
        cluster_spread=args.cluster_spread,
    )
    suite = generate_suite(
        base,
        args.k,
        (args.shift_min, args.shift_max),
        (args.noise_min, args.noise_max),
        args.out_dir,
        sigma=args.sigma,
        epsilon=args.epsilon,
        max_iters=args.max_iters,
        tol=args.tol,
    )
    emit(
        [{"manifest": str(suite.manifest_path), "pairs": len(suite.manifest), "clamped": suite.clamped}],
        args.format,
    )
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--epsilon", type=_positive_float, default=DEFAULT_EPSILON)
    common.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    common.add_argument("--tol", type=_positive_float, default=DEFAULT_TOL)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="pairs solved concurrently")
    common.add_argument(
        "--normalize-cost",
        action="store_true",
        help="divide costs by their median (non-default, experimental)",
    )
    common.add_argument("--format", choices=("auto", "table", "record"), default="auto")

    parser = argparse.ArgumentParser(prog="otce", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", parents=[common], help="domain/task difference of pairs")
    p.add_argument("source", nargs="?")
    p.add_argument("target", nargs="?")
    p.add_argument("--manifest")
    p.add_argument("--source-format", choices=("binary", "csv"), default="binary")
    p.add_argument("--target-format", choices=("binary", "csv"), default="binary")
    p.add_argument("--pair-id")
    p.add_argument("--metrics", type=_metric_list, help="subset of wd,wt,otnce")
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("fit", parents=[common], help="fit OTCE coefficients")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--aux-fraction", type=_fraction, default=DEFAULT_AUX_FRACTION)
    p.add_argument("--all", action="store_true", help="fit on every entry")
    p.add_argument("--standardize", choices=("auxiliary", "pooled"), default="auxiliary")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", parents=[common], help="OTCE scores for every pair")
    p.add_argument("manifest")
    p.add_argument("--model", help="model file (default: pre-defined coefficients)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", parents=[common], help="correlation report")
    p.add_argument("manifest")
    p.add_argument("--aux-fraction", type=_fraction, default=DEFAULT_AUX_FRACTION)
    p.add_argument("--metrics", type=_metric_list, default=("otce", "otnce", "wd", "wt", "hscore"))
    p.add_argument("--standardize", choices=("auxiliary", "pooled"), default="auxiliary")
    p.add_argument("-o", "--output", help="also write the report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select", parents=[common], help="best source per target")
    p.add_argument("manifest")
    p.add_argument("--model")
    p.add_argument("--metric", choices=METRICS, default="otce")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("fuse", parents=[common], help="softmax fusion weights")
    p.add_argument("manifest", nargs="?")
    p.add_argument("--scores", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--temperature", type=_positive_float, default=1.0)
    p.add_argument("--model")
    p.add_argument("--metric", choices=METRICS, default="otce")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic suite")
    p.add_argument("out_dir")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--n-source", type=int, default=200)
    p.add_argument("--n-target", type=int, default=200)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--source-classes", type=int, default=5)
    p.add_argument("--target-classes", type=int, default=5)
    p.add_argument("--cluster-spread", type=_positive_float, default=0.5)
    p.add_argument("--shift-min", type=float, default=0.0)
    p.add_argument("--shift-max", type=float, default=3.0)
    p.add_argument("--noise-min", type=float, default=0.0)
    p.add_argument("--noise-max", type=float, default=0.6)
    p.add_argument("--sigma", type=float, default=PLANTED_SIGMA)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        name = exc.filename if exc.filename is not None else exc
        print(f"error: file not found: {name}", file=sys.stderr)
        return EXIT_USAGE
    except ComputationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
