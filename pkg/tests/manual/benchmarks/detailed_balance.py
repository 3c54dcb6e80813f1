#!/usr/bin/env python3
"""
Detailed-balance smoke test on a one-dimensional standard normal.

Runs long chains, bins the draws and compares the counts with the normal
probabilities by a chi-square test on a thinned sample. Expect p > 0.01.
"""

import argparse

import numpy as np
from scipy import stats

from icarh.sampler import SamplerConfig, run_hmc


class StandardNormal:
    dimension = 1
    parameter_names = ['x']

    def log_density_and_gradient(self, q):
        return float(-0.5 * q @ q), -q

    def constrain(self, q):
        return np.array(q, dtype=float)

    def initial_point(self, rng):
        return rng.uniform(-1, 1, 1)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--seed', type=int, default=1)
    parser.add_argument('--thin', type=int, default=5)
    args = parser.parse_args()

    cfg = SamplerConfig(iterations=21000, warmup=1000, chains=4, seed=args.seed, leapfrog_steps=8,
                        thin=args.thin, gradient_check=False)
    x = run_hmc(StandardNormal(), cfg, n_jobs=4).flat()[:, 0]

    edges = np.concatenate([[-np.inf], np.linspace(-2.5, 2.5, 11), [np.inf]])
    observed = np.histogram(x, bins=edges)[0]
    expected = np.diff(stats.norm.cdf(edges)) * x.size
    result = stats.chisquare(observed, expected)
    print(f"{x.size} draws, mean {x.mean():.4f}, variance {x.var():.4f}")
    print(f"chi-square {result.statistic:.2f}, p = {result.pvalue:.4f}")


if __name__ == '__main__':
    main()
