"""Reference transferability metrics: LEEP, NCE on dummy labels, H-score."""

from __future__ import annotations

import numpy as np

ROW_SUM_TOL = 1e-6
PINV_RCOND = 1e-10


def check_predictions(preds, target_labels) -> tuple[np.ndarray, np.ndarray]:
    """Validate a (n_target, n_source_classes) matrix of softmax rows."""
    P = np.asarray(preds, dtype=np.float64)
    y = np.asarray(target_labels, dtype=np.int64)
    if P.ndim != 2:
        raise ValueError("prediction matrix must be 2-d")
    if y.shape != (P.shape[0],):
        raise ValueError(f"dimension mismatch: {P.shape[0]} prediction rows, {y.shape[0]} labels")
    if P.shape[0] < 1:
        raise ValueError("need at least one target sample")
    if np.any(P < 0) or np.any(P > 1):
        raise ValueError("prediction entries must lie in [0, 1] (softmax outputs, not logits)")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        raise ValueError("prediction rows must sum to 1 (softmax outputs, not logits)")
    if np.any(y < 0):
        raise ValueError("labels must be nonnegative")
    return P, y


def leep(preds, target_labels) -> float:
    """Log expected empirical prediction; at most 0, higher is better."""
    P, y = check_predictions(preds, target_labels)
    n = P.shape[0]
    kt = int(y.max()) + 1
    joint = np.zeros((kt, P.shape[1]))
    np.add.at(joint, y, P)
    joint /= n
    mass = joint.sum(axis=0)
    cond = np.divide(joint, mass, out=np.zeros_like(joint), where=mass > 0)
    eep = np.einsum("ij,ij->i", P, cond[y])
    return float(np.mean(np.log(eep)))


def _neg_conditional_entropy(z: np.ndarray, y: np.ndarray) -> float:
    n = z.shape[0]
    joint = np.zeros((int(z.max()) + 1, int(y.max()) + 1))
    np.add.at(joint, (z, y), 1.0)
    joint /= n
    pz = joint.sum(axis=1, keepdims=True)
    mask = joint > 0
    ratio = joint / np.where(pz > 0, pz, 1.0)
    return float(np.sum(joint[mask] * np.log(ratio[mask])))


def nce_dummy(preds, target_labels) -> float:
    """Negative H(Y_t | Z) with Z the argmax source class of each target row."""
    P, y = check_predictions(preds, target_labels)
    z = np.argmax(P, axis=1)  # ties -> lowest index
    return min(_neg_conditional_entropy(z, y), 0.0)


def h_score(target_features, target_labels) -> float:
    """trace(pinv(cov f) @ cov(E[f | y])), with 1/n covariances."""
    f = np.asarray(target_features, dtype=np.float64)
    y = np.asarray(target_labels, dtype=np.int64)
    if f.ndim != 2 or y.shape != (f.shape[0],):
        raise ValueError("features must be n x d with one label per row")
    classes, inverse = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise ValueError("h_score needs at least 2 classes present")
    n = f.shape[0]
    centered = f - f.mean(axis=0)
    cov_f = centered.T @ centered / n
    sums = np.zeros((classes.size, f.shape[1]))
    np.add.at(sums, inverse, centered)
    means = sums / np.bincount(inverse)[:, None]
    g = means[inverse]
    cov_g = g.T @ g / n
    return float(np.trace(np.linalg.pinv(cov_f, rcond=PINV_RCOND, hermitian=True) @ cov_g))
