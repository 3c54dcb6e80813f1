#!/usr/bin/env python3
"""
Whitened residual normality on a fit of the generating model.

Pools the Cholesky-whitened residuals of both groups and prints their
skewness and excess kurtosis. With a correct model both should be small
(|skewness| < 0.3, |excess kurtosis| < 0.5).
"""

import argparse

import numpy as np
from scipy import stats

from icarh.analysis import whitened_residuals
from icarh.car import build_pathway_design
from icarh.model import IcarhModel, ModelConfig
from icarh.sampler import SamplerConfig, run_hmc
from icarh.simulator import SimulationConfig, simulate_replicates


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--seed', type=int, default=3)
    args = parser.parse_args()

    cfg = SimulationConfig(n_subjects=16, n_times=7, n_metabolites=20, n_covariates=1, n_pathways=6, seed=args.seed)
    replicate = simulate_replicates(cfg, n=1)[0]
    design = build_pathway_design(replicate.graph)
    model_cfg = ModelConfig(tau=cfg.tau)
    draws = run_hmc(IcarhModel(replicate.data, design, model_cfg),
                    SamplerConfig(iterations=1000, warmup=500, chains=2, seed=args.seed), n_jobs=2)

    groups = whitened_residuals(draws, replicate.data, design, model_cfg)
    pooled = np.concatenate([g['residuals'].ravel() for g in groups.values()])
    print(f"{pooled.size} residuals")
    print(f"mean {pooled.mean():.4f}  sd {pooled.std():.4f}")
    print(f"skewness {stats.skew(pooled):.4f}  excess kurtosis {stats.kurtosis(pooled):.4f}")


if __name__ == '__main__':
    main()
