"""Held-out correlation of OTCE as the number of auxiliary pairs grows.

Zero auxiliary pairs means the pre-defined coefficients.  Each point is the
mean over several split seeds on one synthetic suite.

    python3 scripts/auxiliary_count_sweep.py --k 60 --splits 20
"""

from __future__ import annotations

import argparse

import numpy as np

from otce.evaluation import ExperimentConfig, run_experiment
from otce.synth import SynthConfig, generate_suite


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--splits", type=int, default=20)
    ap.add_argument("--counts", default="0,3,4,6,8,12,20")
    args = ap.parse_args()

    suite = generate_suite(SynthConfig(seed=args.seed), args.k)
    print(f"{'n_aux':>5s}  {'mean r':>7s}  {'std':>6s}")
    for count in (int(c) for c in args.counts.split(",")):
        rs = []
        for split in range(args.splits):
            cfg = ExperimentConfig(aux_fraction=count / args.k, seed=split, metrics=("otce",))
            report = run_experiment(suite.manifest, cfg, metrics=suite.metrics)
            rs.append(report["correlations"]["otce"])
        print(f"{count:5d}  {np.mean(rs):7.4f}  {np.std(rs):6.4f}")


if __name__ == "__main__":
    main()
