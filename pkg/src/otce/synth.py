"""Seeded synthetic cross-domain, cross-task pairs with planted accuracies.

Class centers sit on an integer lattice; each domain draws isotropic Gaussian
clusters around them.  The target domain is translated along a seeded unit
direction, and target labels follow a fixed cluster -> class map with a
fraction of labels resampled uniformly.  Features are rounded to float32 so
datasets survive the binary format unchanged.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset, Manifest, ManifestEntry, TaskPair, save_dataset, save_manifest, save_matrix
from .metrics import compute_pair_metrics
from .ot import DEFAULT_EPSILON

PLANTED_BETA = (0.7, -0.15, -0.25)
PLANTED_SIGMA = 0.02
LATTICE_SPACING = 1.0


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_source: int = 200
    n_target: int = 200
    d: int = 32
    num_source_classes: int = 5
    num_target_classes: int = 5
    domain_shift: float = 0.0
    label_noise: float = 0.0
    cluster_spread: float = 0.5
    label_seed: int | None = None  # defaults to a stream derived from seed

    def __post_init__(self):
        for name in ("n_source", "n_target", "d", "num_source_classes", "num_target_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.domain_shift < 0:
            raise ValueError("domain_shift must be nonnegative")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError("label_noise must lie in [0, 1]")
        if not self.cluster_spread > 0:
            raise ValueError("cluster_spread must be positive")


def _lattice_centers(rng: np.random.Generator, k: int, d: int) -> np.ndarray:
    side = max(3, math.ceil(k ** (1.0 / d)) + 1)
    chosen: list[tuple[int, ...]] = []
    seen = set()
    while len(chosen) < k:
        point = tuple(int(v) for v in rng.integers(0, side, size=d))
        if point not in seen:
            seen.add(point)
            chosen.append(point)
    return (np.array(chosen, dtype=np.float64) - (side - 1) / 2.0) * LATTICE_SPACING


def _f32(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float32).astype(np.float64)


def _streams(cfg: SynthConfig):
    geometry, source, target, labels = np.random.SeedSequence(cfg.seed).spawn(4)
    if cfg.label_seed is not None:
        labels = np.random.SeedSequence([cfg.seed, cfg.label_seed])
    return tuple(np.random.default_rng(s) for s in (geometry, source, target, labels))


def generate_pair(cfg: SynthConfig, pair_id: str = "") -> TaskPair:
    """Draw one source/target pair; identical configs give identical data."""
    geo, src_rng, tgt_rng, lab_rng = _streams(cfg)
    ks, kt = cfg.num_source_classes, cfg.num_target_classes
    centers = _lattice_centers(geo, ks, cfg.d)
    direction = geo.normal(size=cfg.d)
    direction /= np.linalg.norm(direction)
    class_map = geo.permutation(max(ks, kt))[:ks] % kt

    ys = np.arange(cfg.n_source) % ks
    xs = centers[ys] + cfg.cluster_spread * src_rng.normal(size=(cfg.n_source, cfg.d))

    cluster = np.arange(cfg.n_target) % ks
    xt = centers[cluster] + cfg.cluster_spread * tgt_rng.normal(size=(cfg.n_target, cfg.d))
    xt = xt + cfg.domain_shift * direction
    yt = class_map[cluster]
    resample = lab_rng.random(cfg.n_target) < cfg.label_noise
    yt = np.where(resample, lab_rng.integers(0, kt, size=cfg.n_target), yt)

    return TaskPair(
        Dataset(_f32(xs), ys, ks),
        Dataset(_f32(xt), yt, kt),
        pair_id,
    )


def source_predictions(pair: TaskPair, cfg: SynthConfig) -> np.ndarray:
    """Softmax outputs of a nearest-class-mean 'source model' on target data."""
    src = pair.source
    means = np.stack([src.features[src.labels == k].mean(axis=0) for k in range(src.num_classes)])
    sq = ((pair.target.features[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
    logits = -sq / (2.0 * cfg.cluster_spread**2 * cfg.d)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p.astype(np.float32).astype(np.float64)


def _sweep_levels(rng, k: int, anti_jitter: float):
    """Latin-hypercube levels in [0, 1]; the second axis runs against the first."""
    u = (rng.permutation(k) + rng.random(k)) / k
    v = np.clip(1.0 - u + anti_jitter * (2.0 * rng.random(k) - 1.0), 0.0, 1.0)
    return u, v


@dataclass
class Suite:
    manifest: Manifest
    metrics: list
    planted: np.ndarray
    clamped: int
    manifest_path: Path | None = None


def generate_suite(
    base: SynthConfig,
    k: int,
    shift_range: tuple[float, float] = (0.0, 3.0),
    noise_range: tuple[float, float] = (0.0, 0.6),
    out_dir=None,
    *,
    beta: tuple[float, float, float] = PLANTED_BETA,
    sigma: float = PLANTED_SIGMA,
    anti_jitter: float = 0.25,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = 1000,
    tol: float = 1e-9,
    with_predictions: bool = True,
) -> Suite:
    """Sweep domain shift and label noise over ``k`` pairs and plant accuracies.

    Every pair shares the source data and target geometry of ``base``; pairs
    differ in shift magnitude and in their label-noise draw.  The sweep is a
    Latin hypercube whose noise axis runs against the shift axis (with jitter)
    so that the planted linear accuracy rarely leaves [0, 1].

    ``planted = clip(b0 + b1 * z(w_d) + b2 * z(w_t) + sigma * N(0, 1), 0, 1)``
    with z-scores taken over the suite.  When ``out_dir`` is given, datasets,
    prediction matrices and ``manifest.json`` are written there.
    """
    if k < 3:
        raise ValueError("a suite needs at least 3 pairs")
    rng = np.random.default_rng(np.random.SeedSequence([base.seed, 7919]))
    u, v = _sweep_levels(rng, k, anti_jitter)
    # w_d grows roughly with shift**2 and w_t is concave in the noise rate;
    # these warps spread both differences evenly over the suite
    shifts = shift_range[0] + (shift_range[1] - shift_range[0]) * np.sqrt(u)
    noises = noise_range[0] + (noise_range[1] - noise_range[0]) * v**2

    pairs, cfgs, metrics = [], [], []
    width = len(str(k - 1))
    for i in range(k):
        cfg = replace(base, domain_shift=float(shifts[i]), label_noise=float(noises[i]), label_seed=i)
        pair = generate_pair(cfg, pair_id=f"pair{i:0{width}d}")
        pairs.append(pair)
        cfgs.append(cfg)
        metrics.append(compute_pair_metrics(pair, epsilon, max_iters, tol))

    wd = np.array([m.w_d for m in metrics])
    wt = np.array([m.w_t for m in metrics])
    zd = _zscore(wd)
    zt = _zscore(wt)
    eta = sigma * rng.normal(size=k)
    raw = beta[0] + beta[1] * zd + beta[2] * zt + eta
    planted = np.clip(raw, 0.0, 1.0)
    clamped = int(np.sum(raw != planted))

    meta = {
        "generator": "otce.synth.generate_suite",
        "base": asdict(base),
        "beta": list(beta),
        "sigma": sigma,
        "epsilon": epsilon,
        "shift_range": list(shift_range),
        "noise_range": list(noise_range),
        "clamped": clamped,
    }
    out = Path(out_dir) if out_dir is not None else None
    entries = []
    if out is not None:
        (out / "data").mkdir(parents=True, exist_ok=True)
        src_path = out / "data" / "source.otds"
        save_dataset(pairs[0].source, src_path)
    for i, pair in enumerate(pairs):
        tgt_path = pred_path = None
        if out is not None:
            tgt_path = out / "data" / f"{pair.pair_id}_target.otds"
            save_dataset(pair.target, tgt_path)
            if with_predictions:
                pred_path = out / "data" / f"{pair.pair_id}_pred.otpm"
                save_matrix(source_predictions(pair, cfgs[i]), pred_path)
        entries.append(
            ManifestEntry(
                pair_id=pair.pair_id,
                source_path=src_path if out is not None else Path("source.otds"),
                target_path=tgt_path if out is not None else Path(f"{pair.pair_id}_target.otds"),
                transfer_accuracy=float(planted[i]),
                prediction_path=pred_path,
            )
        )
    manifest = Manifest(tuple(entries), meta)
    manifest_path = None
    if out is not None:
        manifest_path = out / "manifest.json"
        save_manifest(manifest, manifest_path)
    return Suite(manifest, metrics, planted, clamped, manifest_path)


def _zscore(x: np.ndarray) -> np.ndarray:
    std = x.std()
    if std == 0:
        return np.zeros_like(x)
    return (x - x.mean()) / std
