"""Domain difference, task difference and the OTCE score for a task pair."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import TaskPair
from .ot import (
    DEFAULT_EPSILON,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    Coupling,
    cost_matrix,
    median_normalized,
    sinkhorn,
)


@dataclass(frozen=True)
class TaskPairMetrics:
    pair_id: str
    w_d: float
    w_t: float
    epsilon: float
    n_source: int
    n_target: int
    num_source_classes: int = 0
    num_target_classes: int = 0
    marginal_error: float = 0.0
    iterations_used: int = 0
    converged: bool = True

    def as_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "TaskPairMetrics":
        return cls(**{k: rec[k] for k in cls.__dataclass_fields__ if k in rec})


@dataclass(frozen=True)
class LabelJoint:
    """Joint distribution of (source label, target label) under a coupling."""

    joint: np.ndarray
    source_marginal: np.ndarray

    @classmethod
    def from_joint(cls, joint) -> "LabelJoint":
        joint = np.asarray(joint, dtype=np.float64)
        if joint.ndim != 2:
            raise ValueError("joint must be 2-d")
        if np.any(joint < 0):
            raise ValueError("joint has negative entries")
        return cls(joint, joint.sum(axis=1))

    @property
    def num_target_classes(self) -> int:
        return self.joint.shape[1]


def _plan_of(coupling) -> np.ndarray:
    return coupling.plan if isinstance(coupling, Coupling) else np.asarray(coupling)


def domain_difference(cost, coupling) -> float:
    """Transport cost ``sum_ij cost[i, j] * plan[i, j]`` of a solved coupling."""
    plan = _plan_of(coupling)
    cost = np.asarray(cost)
    if cost.shape != plan.shape:
        raise ValueError(f"dimension mismatch: cost {cost.shape} vs plan {plan.shape}")
    return float(max(np.sum(cost * plan), 0.0))


def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def label_joint(
    coupling,
    source_labels,
    target_labels,
    num_source_classes: int | None = None,
    num_target_classes: int | None = None,
) -> LabelJoint:
    """Aggregate plan mass into label cells.

    ``joint[u, v]`` sums ``plan[i, j]`` over rows with source label ``u`` and
    columns with target label ``v``.
    """
    plan = _plan_of(coupling)
    ys = np.asarray(source_labels, dtype=np.int64)
    yt = np.asarray(target_labels, dtype=np.int64)
    if ys.shape != (plan.shape[0],) or yt.shape != (plan.shape[1],):
        raise ValueError(
            f"length mismatch: plan {plan.shape}, labels {ys.shape} and {yt.shape}"
        )
    ks = num_source_classes if num_source_classes is not None else int(ys.max()) + 1
    kt = num_target_classes if num_target_classes is not None else int(yt.max()) + 1
    for labels, k, side in ((ys, ks, "source"), (yt, kt, "target")):
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"{side} labels must lie in [0, {k})")
    joint = _one_hot(ys, ks).T @ (plan @ _one_hot(yt, kt))
    return LabelJoint(joint, joint.sum(axis=1))


def conditional_entropy(joint) -> float:
    """H(Y_t | Y_s) in nats; empty cells and empty source classes add nothing."""
    if not isinstance(joint, LabelJoint):
        joint = LabelJoint.from_joint(joint)
    p = joint.joint
    ps = np.broadcast_to(joint.source_marginal[:, None], p.shape)
    mask = p > 0
    return float(max(-np.sum(p[mask] * np.log(p[mask] / ps[mask])), 0.0))


def ot_nce(metrics: TaskPairMetrics | float) -> float:
    """Fit-free transferability score: the negated task difference."""
    w_t = metrics.w_t if isinstance(metrics, TaskPairMetrics) else float(metrics)
    return -w_t


def otce_score(metrics: TaskPairMetrics, model) -> float:
    """Apply a fitted OTCE model (which must carry standardization stats)."""
    if not model.has_stats:
        raise ValueError(
            "model has no standardization statistics; score a batch with score_batch instead"
        )
    return float(model.predict(metrics.w_d, metrics.w_t))


def score_batch(metrics: list[TaskPairMetrics], model) -> np.ndarray:
    """OTCE scores for many pairs.

    A model without standardization statistics (the default coefficients) is
    standardized against this batch.
    """
    wd = np.array([m.w_d for m in metrics], dtype=np.float64)
    wt = np.array([m.w_t for m in metrics], dtype=np.float64)
    if not model.has_stats:
        model = model.with_batch_stats(wd, wt)
    return model.predict(wd, wt)


def compute_pair_metrics(
    pair: TaskPair,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    *,
    normalize_cost: bool = False,
    accelerate: bool = True,
) -> TaskPairMetrics:
    """Solve one coupling and derive both differences from it."""
    cost = cost_matrix(pair.source.features, pair.target.features)
    if normalize_cost:
        cost = median_normalized(cost)
    coupling = sinkhorn(cost, epsilon=epsilon, max_iters=max_iters, tol=tol, accelerate=accelerate)
    w_d = domain_difference(cost, coupling)
    joint = label_joint(
        coupling,
        pair.source.labels,
        pair.target.labels,
        pair.source.num_classes,
        pair.target.num_classes,
    )
    return TaskPairMetrics(
        pair_id=pair.pair_id,
        w_d=w_d,
        w_t=conditional_entropy(joint),
        epsilon=float(epsilon),
        n_source=pair.source.n,
        n_target=pair.target.n,
        num_source_classes=pair.source.num_classes,
        num_target_classes=pair.target.num_classes,
        marginal_error=coupling.marginal_error,
        iterations_used=coupling.iterations_used,
        converged=coupling.converged,
    )


def dump_records(metrics: list[TaskPairMetrics], fh) -> None:
    """One JSON object per line."""
    for m in metrics:
        fh.write(json.dumps(m.as_record()) + "\n")


def load_records(fh) -> list[TaskPairMetrics]:
    return [TaskPairMetrics.from_record(json.loads(line)) for line in fh if line.strip()]
