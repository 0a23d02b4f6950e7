"""Least-squares fitting of OTCE coefficients on auxiliary task pairs."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

MODEL_FORMAT = "otce-model"
MODEL_VERSION = 1
DEFAULT_LAMBDA = -0.5
MIN_RECORDS = 3
DEGENERATE_REL_STD = 1e-9


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AuxiliaryRecord:
    pair_id: str
    w_d: float
    w_t: float
    transfer_accuracy: float

    def __post_init__(self):
        if not 0.0 <= self.transfer_accuracy <= 1.0:
            raise ValueError(
                f"{self.pair_id}: transfer_accuracy {self.transfer_accuracy} outside [0, 1]"
            )


@dataclass(frozen=True)
class OtceModel:
    """``score = lambda1 * z(w_d) + lambda2 * z(w_t) + b`` with z-scores.

    Standardization statistics are ``None`` for the default coefficients;
    those are standardized against whatever batch they score.
    """

    lambda1: float
    lambda2: float
    b: float
    mean_wd: float | None = None
    std_wd: float | None = None
    mean_wt: float | None = None
    std_wt: float | None = None
    n_auxiliary: int = 0
    r2_train: float | None = None
    degenerate_wd: bool = False
    degenerate_wt: bool = False
    auxiliary_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "auxiliary_ids", tuple(self.auxiliary_ids))
        if self.n_auxiliary < 0:
            raise ValueError("n_auxiliary must be nonnegative")
        stats = (self.mean_wd, self.std_wd, self.mean_wt, self.std_wt)
        if any(s is None for s in stats) and not all(s is None for s in stats):
            raise ValueError("standardization statistics must be all set or all absent")
        if self.has_stats:
            for std, flag, lam, name in (
                (self.std_wd, self.degenerate_wd, self.lambda1, "wd"),
                (self.std_wt, self.degenerate_wt, self.lambda2, "wt"),
            ):
                if flag:
                    if lam != 0.0:
                        raise ValueError(f"degenerate {name} regressor must have a zero coefficient")
                elif not std > 0:
                    raise ValueError(f"std_{name} must be positive unless flagged degenerate")

    @property
    def has_stats(self) -> bool:
        return self.mean_wd is not None

    def standardize(self, w_d, w_t) -> tuple[np.ndarray, np.ndarray]:
        if not self.has_stats:
            raise ValueError("model has no standardization statistics")
        w_d = np.asarray(w_d, dtype=np.float64)
        w_t = np.asarray(w_t, dtype=np.float64)
        zd = np.zeros_like(w_d) if self.degenerate_wd else (w_d - self.mean_wd) / self.std_wd
        zt = np.zeros_like(w_t) if self.degenerate_wt else (w_t - self.mean_wt) / self.std_wt
        return zd, zt

    def predict(self, w_d, w_t):
        zd, zt = self.standardize(w_d, w_t)
        out = self.lambda1 * zd + self.lambda2 * zt + self.b
        return float(out) if np.ndim(out) == 0 else out

    def with_batch_stats(self, w_d, w_t) -> "OtceModel":
        """Copy of this model standardized against the given batch."""
        (mean_wd, std_wd, deg_wd), (mean_wt, std_wt, deg_wt) = (
            _moments(w_d),
            _moments(w_t),
        )
        return replace(
            self,
            lambda1=0.0 if deg_wd else self.lambda1,
            lambda2=0.0 if deg_wt else self.lambda2,
            mean_wd=mean_wd,
            std_wd=std_wd,
            mean_wt=mean_wt,
            std_wt=std_wt,
            degenerate_wd=deg_wd,
            degenerate_wt=deg_wt,
        )

    def raw_coefficients(self) -> tuple[float, float, float]:
        """Coefficients on unstandardized (w_d, w_t): slope_d, slope_t, intercept."""
        zd0, zt0 = self.standardize(0.0, 0.0)
        slope_d = 0.0 if self.degenerate_wd else self.lambda1 / self.std_wd
        slope_t = 0.0 if self.degenerate_wt else self.lambda2 / self.std_wt
        return slope_d, slope_t, float(self.lambda1 * zd0 + self.lambda2 * zt0 + self.b)


def _moments(values) -> tuple[float, float, bool]:
    v = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(v))
    std = float(np.sqrt(np.mean((v - mean) ** 2)))
    degenerate = std <= DEGENERATE_REL_STD * max(1.0, abs(mean))
    return mean, std, degenerate


def default_model() -> OtceModel:
    """Pre-defined coefficients lambda1 = lambda2 = -0.5, b = 0, no statistics."""
    return OtceModel(lambda1=DEFAULT_LAMBDA, lambda2=DEFAULT_LAMBDA, b=0.0)


def fit_otce(
    records: list[AuxiliaryRecord],
    stats: tuple[float, float, float, float] | None = None,
) -> OtceModel:
    """Ordinary least squares for accuracy ~ lambda1*z_d + lambda2*z_t + b.

    Parameters
    ----------
    records
        Auxiliary pairs with known transfer accuracy; at least three.
    stats
        Optional ``(mean_wd, std_wd, mean_wt, std_wt)`` to standardize with
        instead of the auxiliary moments (e.g. pooled auxiliary+test stats).
    """
    recs = sorted(records, key=lambda r: (r.pair_id, r.w_d, r.w_t, r.transfer_accuracy))
    return fit_arrays(
        [r.w_d for r in recs],
        [r.w_t for r in recs],
        [r.transfer_accuracy for r in recs],
        stats=stats,
        ids=[r.pair_id for r in recs],
    )


def fit_arrays(w_d, w_t, target, stats=None, ids=()) -> OtceModel:
    """The least-squares core of :func:`fit_otce` on plain arrays.

    ``target`` is not range-checked, so planted linear responses can be
    recovered exactly.  Rows are used in the order given.
    """
    wd = np.asarray(w_d, dtype=np.float64)
    wt = np.asarray(w_t, dtype=np.float64)
    acc = np.asarray(target, dtype=np.float64)
    if not wd.shape == wt.shape == acc.shape or wd.ndim != 1:
        raise ValueError("w_d, w_t and target must be equal-length vectors")
    if wd.size < MIN_RECORDS:
        raise ValueError(f"too few auxiliary records: {wd.size} < {MIN_RECORDS}")
    if not (np.all(np.isfinite(wd)) and np.all(np.isfinite(wt)) and np.all(np.isfinite(acc))):
        raise ValueError("fit inputs must be finite")

    if stats is None:
        mean_wd, std_wd, deg_wd = _moments(wd)
        mean_wt, std_wt, deg_wt = _moments(wt)
    else:
        mean_wd, std_wd, mean_wt, std_wt = map(float, stats)
        deg_wd = not std_wd > DEGENERATE_REL_STD * max(1.0, abs(mean_wd))
        deg_wt = not std_wt > DEGENERATE_REL_STD * max(1.0, abs(mean_wt))

    columns, names = [], []
    if not deg_wd:
        columns.append((wd - mean_wd) / std_wd)
        names.append("lambda1")
    if not deg_wt:
        columns.append((wt - mean_wt) / std_wt)
        names.append("lambda2")
    columns.append(np.ones_like(acc))
    names.append("b")
    X = np.column_stack(columns)
    # lstsq factorizes X itself (SVD); the normal equations are never formed
    coef, *_ = np.linalg.lstsq(X, acc, rcond=None)
    fitted = dict(zip(names, map(float, coef)))

    resid = acc - X @ coef
    rss = float(resid @ resid)
    tss = float(np.sum((acc - acc.mean()) ** 2))
    if tss > 0:
        r2 = 1.0 - rss / tss
    else:
        r2 = 1.0 if rss <= 1e-24 else 0.0

    return OtceModel(
        lambda1=fitted.get("lambda1", 0.0),
        lambda2=fitted.get("lambda2", 0.0),
        b=fitted["b"],
        mean_wd=mean_wd,
        std_wd=std_wd,
        mean_wt=mean_wt,
        std_wt=std_wt,
        n_auxiliary=int(wd.size),
        r2_train=r2,
        degenerate_wd=deg_wd,
        degenerate_wt=deg_wt,
        auxiliary_ids=tuple(ids),
    )


_REQUIRED = (
    "lambda1",
    "lambda2",
    "b",
    "mean_wd",
    "std_wd",
    "mean_wt",
    "std_wt",
    "n_auxiliary",
    "r2_train",
    "degenerate_wd",
    "degenerate_wt",
)


def model_to_dict(model: OtceModel) -> dict:
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION}
    body = asdict(model)
    body["auxiliary_ids"] = list(model.auxiliary_ids)
    doc.update(body)
    return doc


def model_from_dict(doc: dict) -> OtceModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"not an OTCE model document (format={doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"schema version mismatch: {doc.get('version')!r} != {MODEL_VERSION}")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ModelFormatError(f"schema error: missing field(s) {', '.join(missing)}")
    for key in ("lambda1", "lambda2", "b"):
        if not isinstance(doc[key], (int, float)) or not math.isfinite(doc[key]):
            raise ModelFormatError(f"schema error: {key} must be a finite number")
    try:
        return OtceModel(
            lambda1=float(doc["lambda1"]),
            lambda2=float(doc["lambda2"]),
            b=float(doc["b"]),
            mean_wd=doc["mean_wd"],
            std_wd=doc["std_wd"],
            mean_wt=doc["mean_wt"],
            std_wt=doc["std_wt"],
            n_auxiliary=int(doc["n_auxiliary"]),
            r2_train=doc["r2_train"],
            degenerate_wd=bool(doc["degenerate_wd"]),
            degenerate_wt=bool(doc["degenerate_wt"]),
            auxiliary_ids=tuple(doc.get("auxiliary_ids", ())),
        )
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid model: {exc}") from None


def save_model(model: OtceModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path) -> OtceModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON at line {exc.lineno}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: model must be a JSON object")
    return model_from_dict(doc)
