"""Builders for small synthetic iCARH inputs and plug-in sampler targets."""

import numpy as np
import pandas as pd
from scipy import special

from icarh.data import Dataset, build_pathway_graph
from icarh.car import build_pathway_design
from icarh.sampler import PosteriorDraws


def make_dataset(n=4, t=3, m=6, k=2, seed=0, groups=None):
    """Random standardized-looking Dataset; the first half of the subjects are controls."""
    rng = np.random.default_rng(seed)
    if groups is None:
        groups = ['controls'] * (n // 2) + ['cases'] * (n - n // 2)
    return Dataset(
        x=rng.standard_normal((n, t, m)),
        y=rng.standard_normal((n, t, k)),
        group=groups,
        subjects=[f"s{i + 1}" for i in range(n)],
        metabolites=[f"m{j + 1}" for j in range(m)],
        covariates=[f"b{j + 1}" for j in range(k)],
    )


def chain_entries(metabolites, n_pathways, size=3):
    """Overlapping pathways, each a path graph over `size` consecutive metabolites."""
    entries = []
    for p in range(n_pathways):
        members = [metabolites[(2 * p + j) % len(metabolites)] for j in range(size)]
        members = list(dict.fromkeys(members))
        edges = [[a, b] for a, b in zip(members, members[1:])]
        entries.append((f"path{p + 1}", members, edges))
    return entries


def make_problem(n=4, t=3, m=6, k=2, p=3, seed=0):
    """(Dataset, PathwayGraph, PathwayDesign) of matching dimensions."""
    data = make_dataset(n, t, m, k, seed)
    graph = build_pathway_graph(chain_entries(data.metabolites, p), data.metabolites)
    return data, graph, build_pathway_design(graph)


def long_frame(rows):
    """Data CSV frame from (subject, time, group, kind, variable, value) tuples."""
    return pd.DataFrame(rows, columns=['subject', 'time', 'group', 'kind', 'variable', 'value'])


def minimal_rows():
    """2 subjects x 2 times x 1 metabolite, complete grid."""
    return [
        ('a', 1, 'cases', 'metabolite', 'glucose', 1.0),
        ('a', 2, 'cases', 'metabolite', 'glucose', 2.0),
        ('b', 1, 'controls', 'metabolite', 'glucose', 3.0),
        ('b', 2, 'controls', 'metabolite', 'glucose', 5.0),
    ]


def draws_from_samples(names, samples, chains=1):
    """PosteriorDraws holding the given (draws, parameters) samples split evenly over chains."""
    samples = np.asarray(samples, dtype=float).reshape(-1, len(names))
    values = samples.reshape(chains, -1, len(names))
    shape = values.shape[:2]
    return PosteriorDraws(
        parameter_names=list(names),
        values=values,
        log_density=np.zeros(shape),
        accept_stat=np.ones(shape),
        divergent=np.zeros(shape, dtype=bool),
        n_leapfrog=np.ones(shape, dtype=int),
        step_size=np.ones(chains),
    )


class GaussianTarget:
    """Independent normal target with the sampler interface."""

    def __init__(self, mean, sd):
        self.mu = np.asarray(mean, dtype=float)
        self.sd = np.asarray(sd, dtype=float)
        self.dimension = self.mu.size
        self.parameter_names = [f"x[{i}]" for i in range(self.dimension)]

    def log_density_and_gradient(self, q):
        z = (q - self.mu) / self.sd
        return float(-0.5 * np.sum(z ** 2)), -z / self.sd

    def constrain(self, q):
        return np.array(q, dtype=float)

    def initial_point(self, rng):
        return rng.uniform(-1, 1, self.dimension)


class ArcsineTarget:
    """Beta(1/2, 1/2) sampled through the logit transform."""
    dimension = 1
    parameter_names = ['p']

    def log_density_and_gradient(self, q):
        u = q[0]
        value = 0.5 * special.log_expit(u) + 0.5 * special.log_expit(-u)
        return float(value), np.array([0.5 - special.expit(u)])

    def constrain(self, q):
        return special.expit(q)

    def initial_point(self, rng):
        return rng.uniform(-1, 1, 1)


class NowhereTarget(GaussianTarget):
    """Target with no finite point."""

    def log_density_and_gradient(self, q):
        return -np.inf, np.zeros_like(q)
