"""Iterations, marginal error and wall time of the solver on point-cloud families.

    python3 scripts/sinkhorn_convergence.py --sizes 250,500,1000 --draws 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from otce.ot import cost_matrix, sinkhorn
from otce.synth import SynthConfig, generate_pair


def clouds(family: str, n: int, d: int, rng):
    if family == "synth":
        cfg = SynthConfig(seed=int(rng.integers(2**31)), n_source=n, n_target=n, d=d,
                          domain_shift=2.0, label_noise=0.2)
        pair = generate_pair(cfg)
        return pair.source.features, pair.target.features
    scale = {"tight": 0.3, "unit": 1.0}[family]
    return scale * rng.normal(size=(n, d)), scale * rng.normal(size=(n, d)) + 0.5


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="250,500,1000")
    ap.add_argument("--families", default="synth,tight,unit")
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--max-iters", type=int, default=1000)
    ap.add_argument("--draws", type=int, default=3)
    ap.add_argument("--plain", action="store_true", help="plain log-domain iterations")
    args = ap.parse_args()

    print(f"{'family':7s} {'n':>5s} {'draw':>4s} {'iters':>6s} {'marg_err':>9s} {'conv':>5s} {'time_s':>7s}")
    for family in args.families.split(","):
        for n in (int(s) for s in args.sizes.split(",")):
            rng = np.random.default_rng(n)
            for draw in range(args.draws):
                C = cost_matrix(*clouds(family, n, args.d, rng))
                start = time.perf_counter()
                cp = sinkhorn(C, epsilon=args.epsilon, max_iters=args.max_iters, accelerate=not args.plain)
                elapsed = time.perf_counter() - start
                print(f"{family:7s} {n:5d} {draw:4d} {cp.iterations_used:6d} "
                      f"{cp.marginal_error:9.2e} {str(cp.converged):>5s} {elapsed:7.2f}", flush=True)


if __name__ == "__main__":
    main()
