"""
iCARH CAR Structure

This module builds the per-pathway CAR operators and evaluates the structured
Gaussian density

    x ~ N(mu, (I - C(phi))^-1 sigma2),    C(phi) = sum_p phi_p S_p

where S_p = (G_p A_p + A_p G_p) / 2 is the symmetrized pathway operator.
A_p holds inverse shortest-path lengths inside pathway p and G_p the
reciprocal neighbour counts. The admissible interval for phi_p is
(1 / (P xi1_p), 1 / (P xi2_p)) with xi1_p, xi2_p the extreme eigenvalues of
S_p, which keeps I - C(phi) positive definite on the whole box.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import networkx as nx
import numpy as np
from scipy import linalg

from .data import PathwayGraph
from .exceptions import IcarhDomainError, IcarhPositiveDefiniteError

logger = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-10
INERT_BOUNDS = (-1.0, 1.0)


@dataclass(frozen=True)
class PathwayDesign:
    """
    Per-pathway CAR operators and admissible phi intervals.

    Attributes:
        pathway_ids: Pathway identifiers, length P
        adjacency: A_p stacked, shape (P, M, M)
        weights: Diagonals of G_p stacked, shape (P, M)
        operators: S_p stacked, shape (P, M, M)
        lower: L_p, shape (P,)
        upper: U_p, shape (P,)
        inert: True where S_p is the zero matrix
    """
    pathway_ids: tuple
    adjacency: np.ndarray
    weights: np.ndarray
    operators: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    inert: np.ndarray

    @property
    def n_pathways(self) -> int:
        return len(self.pathway_ids)

    @property
    def n_metabolites(self) -> int:
        return self.operators.shape[1]

    def in_bounds(self, phi: np.ndarray) -> bool:
        phi = np.asarray(phi, dtype=float)
        return bool(np.all(phi > self.lower) and np.all(phi < self.upper))

    def check_bounds(self, phi: np.ndarray) -> None:
        """Raise IcarhDomainError naming the first pathway whose phi is out of bounds."""
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        for row in phi:
            for p in range(self.n_pathways):
                if not (self.lower[p] < row[p] < self.upper[p]):
                    logger.error(f"phi for pathway '{self.pathway_ids[p]}' out of bounds: {row[p]}")
                    raise IcarhDomainError(
                        f"phi={row[p]} for pathway '{self.pathway_ids[p]}' is outside "
                        f"({self.lower[p]}, {self.upper[p]})"
                    )


def _pathway_adjacency(graph: PathwayGraph, members: tuple, edges: tuple) -> np.ndarray:
    m = len(graph.metabolites)
    adjacency = np.zeros((m, m))
    if len(members) < 2:
        return adjacency
    subgraph = nx.Graph()
    subgraph.add_nodes_from(members)
    subgraph.add_edges_from(edges)
    # unreachable pairs keep weight 0
    for source, lengths in nx.all_pairs_shortest_path_length(subgraph):
        i = graph.index_of(source)
        for target, length in lengths.items():
            if length > 0:
                adjacency[i, graph.index_of(target)] = 1.0 / length
    return adjacency


def build_pathway_design(g: PathwayGraph, M: Optional[int] = None) -> PathwayDesign:
    """
    Build A_p, G_p, S_p and the phi bounds for every pathway of the graph.

    Args:
        g: Pathway graph resolved against the profiled metabolites
        M: Metabolite count (defaults to the graph's metabolite list length)

    Returns:
        Immutable PathwayDesign
    """
    m = len(g.metabolites) if M is None else M
    if m != len(g.metabolites):
        raise IcarhDomainError(f"Pathway graph covers {len(g.metabolites)} metabolites, expected {m}")
    n_pathways = g.n_pathways
    adjacency = np.zeros((n_pathways, m, m))
    weights = np.zeros((n_pathways, m))
    operators = np.zeros((n_pathways, m, m))
    lower = np.empty(n_pathways)
    upper = np.empty(n_pathways)
    inert = np.zeros(n_pathways, dtype=bool)

    for p, pathway in enumerate(g.pathways):
        a = _pathway_adjacency(g, pathway.metabolites, pathway.edges)
        neighbours = (a > 0).sum(axis=1)
        w = np.divide(1.0, neighbours, out=np.zeros(m), where=neighbours > 0)
        s = 0.5 * (w[:, None] * a + a * w[None, :])
        adjacency[p], weights[p], operators[p] = a, w, s

        eigenvalues = linalg.eigvalsh(s) if m > 0 else np.zeros(1)
        xi1, xi2 = eigenvalues[0], eigenvalues[-1]
        if not np.any(s) or xi1 > -EIGEN_TOLERANCE or xi2 < EIGEN_TOLERANCE:
            inert[p] = True
            operators[p] = 0.0
            lower[p], upper[p] = INERT_BOUNDS
        else:
            lower[p] = 1.0 / (n_pathways * xi1)
            upper[p] = 1.0 / (n_pathways * xi2)
        logger.debug(f"Pathway {pathway.id}: bounds ({lower[p]:.6g}, {upper[p]:.6g}), inert={inert[p]}")

    for array in (adjacency, weights, operators, lower, upper, inert):
        array.setflags(write=False)
    return PathwayDesign(tuple(g.pathway_ids), adjacency, weights, operators, lower, upper, inert)


def car_matrix(phi: Sequence[float], design: PathwayDesign, check: bool = True) -> np.ndarray:
    """
    C(phi) = sum_p phi_p S_p.

    Raises:
        IcarhDomainError: If check is set and some phi_p lies outside (L_p, U_p)
    """
    phi = np.asarray(phi, dtype=float)
    if check:
        design.check_bounds(phi)
    return np.tensordot(phi, design.operators, axes=1)


class CarFactor:
    """
    Cholesky factorisation of I - C(phi), shared by every observation of a group.

    The factor is computed once; log-densities for many residual vectors
    reuse the log-determinant.
    """

    def __init__(self, phi: Sequence[float], design: PathwayDesign, check: bool = True):
        self.phi = np.asarray(phi, dtype=float)
        self.design = design
        self.precision = np.eye(design.n_metabolites) - car_matrix(self.phi, design, check=check)
        try:
            self.chol = linalg.cholesky(self.precision, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise IcarhPositiveDefiniteError(self.phi.tolist())
        diagonal = np.diag(self.chol)
        if not np.all(diagonal > 0):
            raise IcarhPositiveDefiniteError(self.phi.tolist())
        self.logdet = 2.0 * np.sum(np.log(diagonal))

    def inverse(self) -> np.ndarray:
        """(I - C(phi))^-1."""
        return linalg.cho_solve((self.chol, True), np.eye(self.design.n_metabolites), check_finite=False)

    def quadratic(self, residuals: np.ndarray) -> np.ndarray:
        """r' (I - C) r for each row of residuals."""
        residuals = np.atleast_2d(residuals)
        return np.einsum('ij,ij->i', residuals @ self.precision, residuals)

    def logpdf(self, residuals: np.ndarray, sigma2: float) -> np.ndarray:
        """Row-wise log N(r | 0, (I - C)^-1 sigma2)."""
        m = self.design.n_metabolites
        constant = -0.5 * m * np.log(2.0 * np.pi) - 0.5 * m * np.log(sigma2) + 0.5 * self.logdet
        return constant - 0.5 * self.quadratic(residuals) / sigma2

    def covariance_cholesky(self, sigma2: float) -> np.ndarray:
        """Lower Cholesky factor of the covariance (I - C)^-1 sigma2."""
        return linalg.cholesky(self.inverse() * sigma2, lower=True, check_finite=False)

    def sample(self, rng: np.random.Generator, sigma2: float, size: int) -> np.ndarray:
        """Zero-mean draws with covariance (I - C)^-1 sigma2, shape (size, M)."""
        z = rng.standard_normal((self.design.n_metabolites, size))
        # L' v = z gives v ~ N(0, (L L')^-1)
        v = linalg.solve_triangular(self.chol, z, lower=True, trans='T', check_finite=False)
        return np.sqrt(sigma2) * v.T


def car_gaussian_logpdf(x: np.ndarray, mu: np.ndarray, phi: Sequence[float], sigma2: float,
                        design: PathwayDesign, factor: Optional[CarFactor] = None) -> tuple:
    """
    log N(x | mu, (I - C(phi))^-1 sigma2).

    Args:
        x, mu: M-vectors, or (n, M) arrays evaluated row-wise
        phi: Per-pathway dependence parameters
        sigma2: CAR scale
        design: Pathway design
        factor: Optional cached factor for this phi (reused across observations)

    Returns:
        (log-density, CarFactor); the log-density is a float for vector input
        and an array of length n for matrix input

    Raises:
        IcarhDomainError: phi out of bounds or sigma2 not positive
        IcarhPositiveDefiniteError: Cholesky failure
    """
    if not sigma2 > 0:
        raise IcarhDomainError(f"sigma2 must be positive, got {sigma2}")
    if factor is None:
        factor = CarFactor(phi, design)
    residuals = np.asarray(x, dtype=float) - np.asarray(mu, dtype=float)
    values = factor.logpdf(residuals, sigma2)
    if residuals.ndim == 1:
        return float(values[0]), factor
    return values, factor


def phi_logdet_gradient(phi: Sequence[float], design: PathwayDesign,
                        factor: Optional[CarFactor] = None) -> np.ndarray:
    """d/dphi_p log det(I - C(phi)) = -trace((I - C(phi))^-1 S_p)."""
    if factor is None:
        factor = CarFactor(phi, design)
    return -np.einsum('ij,pij->p', factor.inverse(), design.operators)


def design_report(design: PathwayDesign) -> dict:
    """JSON-ready dump of A_p, G_p, S_p and the phi intervals."""
    return {
        'pathways': [
            {
                'id': pid,
                'inert': bool(design.inert[p]),
                'lower': float(design.lower[p]),
                'upper': float(design.upper[p]),
                'adjacency': design.adjacency[p].tolist(),
                'weights': design.weights[p].tolist(),
                'operator': design.operators[p].tolist(),
            }
            for p, pid in enumerate(design.pathway_ids)
        ]
    }
