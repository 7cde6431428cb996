#!/usr/bin/env python3
"""Laplace vs quadrature vs prior Monte Carlo log marginals on small problems."""

from __future__ import annotations

import argparse

import numpy as np

from loglinmc3.inference import PriorSpec, newton_map
from loglinmc3.model import ConfigCounts, ParamVector, Structure, config_distribution
from loglinmc3.synth import mc_log_marginal, quadrature_log_marginal


def problem(rng, k, N):
    if k == 1:
        s = Structure.singletons(1)
        return s, ConfigCounts.from_records(1, (rng.random(N) < rng.uniform(0.1, 0.9)).astype(int))
    s = Structure(2, [(1, 2), (1, 3), (2, 3), (3,)][int(rng.integers(4))])
    p = config_distribution(ParamVector(Structure(2, (1, 2, 3)), rng.normal(0, 1, size=3)))
    return s, ConfigCounts.from_records(2, rng.choice(4, size=N, p=p))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="20,50,200,1000")
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--draws", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sigma", type=float, default=2.0)
    args = ap.parse_args()

    prior = PriorSpec(sigma=args.sigma)
    rng = np.random.default_rng(args.seed)
    print(f"{'N':>6}{'mean |L-Q|':>12}{'max |L-Q|':>11}{'max |MC-Q|/se':>15}")
    for N in (int(n) for n in args.sizes.split(",")):
        errs, z = [], []
        for r in range(args.reps):
            s, data = problem(rng, 1 + r % 2, N)
            q = quadrature_log_marginal(s, data, prior)
            errs.append(abs(newton_map(s, data, prior).log_marginal - q))
            est, se = mc_log_marginal(s, data, prior, draws=args.draws, rng=np.random.default_rng(r))
            z.append(abs(est - q) / se)
        print(f"{N:>6}{np.mean(errs):>12.4f}{np.max(errs):>11.4f}{np.max(z):>15.2f}")


if __name__ == "__main__":
    main()
