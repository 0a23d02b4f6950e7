"""Correlation, source-selection and fusion harnesses."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .baselines import h_score, leep, nce_dummy
from .data import Dataset, Manifest
from .fit import AuxiliaryRecord, default_model, fit_otce, model_to_dict
from .metrics import TaskPairMetrics, compute_pair_metrics, score_batch
from .ot import DEFAULT_EPSILON, DEFAULT_MAX_ITERS, DEFAULT_TOL

REPORT_FORMAT = "otce-report"
REPORT_VERSION = 1
DEFAULT_AUX_FRACTION = 0.10
METRICS = ("otce", "otnce", "wd", "wt", "leep", "nce", "hscore")
DEFAULT_METRICS = ("otce", "otnce", "wd", "wt", "hscore")
MIN_TEST = 2


@dataclass(frozen=True)
class EvalRecord:
    pair_id: str
    score: float
    accuracy: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"{self.pair_id}: score must be finite")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"{self.pair_id}: accuracy {self.accuracy} outside [0, 1]")


def pearson(records) -> float:
    """Sample Pearson correlation between scores and accuracies."""
    if len(records) < 2:
        raise ValueError("pearson needs at least 2 records")
    x = np.array([r.score for r in records], dtype=np.float64)
    y = np.array([r.accuracy for r in records], dtype=np.float64)
    return pearson_arrays(x, y)


def pearson_arrays(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("undefined correlation: zero variance")
    r = float(dx @ dy) / (sx * sy)
    return min(1.0, max(-1.0, r))


def _argmax_lowest_id(items, key):
    # items are (source_id, score, accuracy); ties go to the smallest source_id
    best = None
    for item in sorted(items, key=lambda t: t[0]):
        if best is None or key(item) > key(best):
            best = item
    return best[0]


def select_best(sources) -> tuple[str, str]:
    """(top-scoring source, top-accuracy source) for one target."""
    return _argmax_lowest_id(sources, lambda t: t[1]), _argmax_lowest_id(sources, lambda t: t[2])


def selection_accuracy(groups) -> float:
    """Fraction of targets whose top-scoring source also has top accuracy.

    ``groups`` is a sequence of ``(target_id, [(source_id, score, accuracy), ...])``.
    """
    if not groups:
        raise ValueError("no groups")
    hits = 0
    for target_id, sources in groups:
        if len(sources) == 0:
            raise ValueError(f"empty group {target_id!r}")
        if len(sources) < 2:
            raise ValueError(f"group {target_id!r} needs at least 2 sources")
        by_score, by_acc = select_best(sources)
        hits += by_score == by_acc
    return hits / len(groups)


def fusion_weights(scores, temperature: float = 1.0) -> np.ndarray:
    """Softmax of ``scores / temperature``."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise ValueError("need at least one score")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not (math.isfinite(temperature) and temperature > 0):
        raise ValueError("temperature must be positive")
    z = s / temperature
    with np.errstate(over="ignore"):  # an overflowing gap only means weight 0
        e = np.exp(z - z.max())
    return e / e.sum()


def subsample_per_class(ds: Dataset, max_per_class: int, seed: int = 0) -> Dataset:
    """Keep at most ``max_per_class`` samples of every class (seeded, order kept)."""
    if max_per_class < 1:
        raise ValueError("max_per_class must be at least 1")
    rng = np.random.default_rng(seed)
    keep = []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == k)
        if idx.size > max_per_class:
            idx = rng.choice(idx, size=max_per_class, replace=False)
        keep.append(idx)
    rows = np.sort(np.concatenate(keep))
    return Dataset(ds.features[rows], ds.labels[rows], ds.num_classes)


# -- experiment harness ----------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    aux_fraction: float = DEFAULT_AUX_FRACTION
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    metrics: tuple[str, ...] = DEFAULT_METRICS
    standardize: str = "auxiliary"  # or "pooled"
    normalize_cost: bool = False
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.aux_fraction < 1.0:
            raise ValueError("aux_fraction must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metric(s): {', '.join(sorted(unknown))}")
        if self.standardize not in ("auxiliary", "pooled"):
            raise ValueError("standardize must be 'auxiliary' or 'pooled'")
        object.__setattr__(self, "metrics", tuple(self.metrics))


def compute_all(manifest: Manifest, config: ExperimentConfig) -> list[TaskPairMetrics]:
    """Pair metrics for every manifest entry, in manifest order."""

    def one(entry):
        return compute_pair_metrics(
            entry.load_pair(),
            config.epsilon,
            config.max_iters,
            config.tol,
            normalize_cost=config.normalize_cost,
        )

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(one, manifest.entries))
    return [one(e) for e in manifest.entries]


def split_auxiliary(pair_ids, aux_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Seeded uniform split into (auxiliary, test) id lists, both sorted."""
    ids = sorted(pair_ids)
    if aux_fraction == 0:
        n_aux = 0
    else:
        n_aux = max(3, int(round(aux_fraction * len(ids))))
    if len(ids) - n_aux < MIN_TEST:
        raise ValueError(
            f"too few entries for the split: {len(ids)} entries, {n_aux} auxiliary, "
            f"need at least {MIN_TEST} test pairs"
        )
    perm = np.random.default_rng(seed).permutation(len(ids))
    aux = sorted(ids[i] for i in perm[:n_aux])
    test = sorted(ids[i] for i in perm[n_aux:])
    return aux, test


def fit_from_metrics(metrics, accuracies: dict, aux_ids, config, pool_ids=None):
    """Fitted model on ``aux_ids`` (or the default model when there are none)."""
    by_id = {m.pair_id: m for m in metrics}
    if not aux_ids:
        return default_model()
    stats = None
    if config.standardize == "pooled":
        ids = pool_ids if pool_ids is not None else list(by_id)
        wd = np.array([by_id[i].w_d for i in ids])
        wt = np.array([by_id[i].w_t for i in ids])
        stats = (wd.mean(), wd.std(), wt.mean(), wt.std())
    records = [
        AuxiliaryRecord(i, by_id[i].w_d, by_id[i].w_t, accuracies[i]) for i in aux_ids
    ]
    return fit_otce(records, stats=stats)


def metric_scores(name: str, metrics, entries, model) -> np.ndarray:
    """Transferability scores (higher = more transferable) for one metric."""
    if name == "otce":
        return score_batch(metrics, model)
    if name in ("otnce", "wt"):
        return np.array([-m.w_t for m in metrics])
    if name == "wd":
        return np.array([-m.w_d for m in metrics])
    if name in ("leep", "nce"):
        fn = leep if name == "leep" else nce_dummy
        out = []
        for e in entries:
            if e.prediction_path is None:
                raise FileNotFoundError(f"missing prediction matrix for pair {e.pair_id!r}")
            tgt = e.load_pair().target
            out.append(fn(e.load_predictions(), tgt.labels))
        return np.array(out)
    if name == "hscore":
        return np.array([h_score(*_target_arrays(e)) for e in entries])
    raise ValueError(f"unknown metric {name!r}")


def _target_arrays(entry):
    tgt = entry.load_pair().target
    return tgt.features, tgt.labels


def run_experiment(
    manifest: Manifest, config: ExperimentConfig, metrics: list[TaskPairMetrics] | None = None
) -> dict:
    """Fit on a seeded auxiliary split, correlate every metric on the rest.

    Returns a JSON-ready report. ``report["ok"]`` is False when any requested
    metric could not be computed; the failure is listed under ``errors``.
    """
    if not manifest.has_accuracies():
        raise ValueError("no ground truth: every manifest entry needs transfer_accuracy")
    if metrics is None:
        metrics = compute_all(manifest, config)
    by_id = {m.pair_id: m for m in metrics}
    entries = {e.pair_id: e for e in manifest.entries}
    accuracies = {e.pair_id: e.transfer_accuracy for e in manifest.entries}

    aux_ids, test_ids = split_auxiliary(list(entries), config.aux_fraction, config.seed)
    if set(aux_ids) & set(test_ids):
        raise AssertionError("auxiliary and test splits overlap")
    model = fit_from_metrics(metrics, accuracies, aux_ids, config, pool_ids=sorted(entries))

    test_metrics = [by_id[i] for i in test_ids]
    test_entries = [entries[i] for i in test_ids]
    test_acc = np.array([accuracies[i] for i in test_ids])
    if not model.has_stats:
        model = model.with_batch_stats([m.w_d for m in test_metrics], [m.w_t for m in test_metrics])

    correlations, errors, scores = {}, {}, {}
    for name in config.metrics:
        try:
            s = metric_scores(name, test_metrics, test_entries, model)
            scores[name] = s
            correlations[name] = pearson_arrays(s, test_acc)
        except Exception as exc:  # reported, never fatal
            correlations[name] = None
            errors[name] = f"{type(exc).__name__}: {exc}"

    pairs = []
    for k, pid in enumerate(test_ids):
        m = by_id[pid]
        pairs.append(
            {
                "pair_id": pid,
                "w_d": m.w_d,
                "w_t": m.w_t,
                "accuracy": accuracies[pid],
                "scores": {n: float(s[k]) for n, s in scores.items()},
            }
        )
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "ok": not errors,
        "config": _config_dict(config),
        "n_entries": len(entries),
        "auxiliary_ids": aux_ids,
        "test_ids": test_ids,
        "model": model_to_dict(model),
        "correlations": correlations,
        "errors": errors,
        "auxiliary": [
            {"pair_id": i, "w_d": by_id[i].w_d, "w_t": by_id[i].w_t, "accuracy": accuracies[i]}
            for i in aux_ids
        ],
        "test": pairs,
    }


def _config_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["metrics"] = list(config.metrics)
    d.pop("threads")
    return d


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"
