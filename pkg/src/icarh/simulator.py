"""
iCARH Simulator

Synthetic benchmark data: random pathway membership with complete-subgraph
pathways, a two-component mixture for the per-group phi values, full data
generation from the model, and random corruption of a pathway design.

    omega_p ~ Bernoulli(pi_omega)
    omega_p = 1:  phi^controls_p ~ TN(U_p - rho, sigma_phi^2) on [0, U_p]
                  phi^cases_p    ~ TN(L_p + rho, sigma_phi^2) on [L_p, 0]
    omega_p = 0:  phi^controls_p ~ TN(0, psi_sim^2) on (L_p, U_p),  phi^cases_p = phi^controls_p
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .car import CarFactor, PathwayDesign, build_pathway_design
from .data import GROUP_LABELS, Dataset, Pathway, PathwayGraph, build_pathway_graph, write_dataset, write_pathways
from .exceptions import IcarhConfigError, IcarhIOError
from .model import ParameterState

logger = logging.getLogger(__name__)

DEFAULT_DENSITY = {1: 0.55, 2: 0.25, 3: 0.12, 4: 0.08}
DIMENSION_ALIASES = {'N': 'n_subjects', 'T': 'n_times', 'M': 'n_metabolites', 'K': 'n_covariates', 'P': 'n_pathways'}
SECTIONS = ('dims', 'phi', 'generator', 'run')


@dataclass
class SimulationConfig:
    """
    Settings of one simulation study.

    Attributes:
        n_subjects, n_times, n_metabolites, n_covariates, n_pathways: Dimensions N, T, M, K, P
        tau: Student-t degrees of freedom of the horseshoe scales
        pi_omega: Probability that a pathway is perturbed
        rho: Offset of the perturbed components from the phi bounds
        sigma_phi2: Variance of the perturbed components
        psi_sim: Standard deviation of the (truncated) null component
        density: Distribution of the number of pathways per metabolite
        seed: Root seed; replicates use streams spawned from it
        corruption: Fraction y of members moved by corrupt_design
        replicates: Number of datasets
        theta_range: theta_m ~ U(-theta_range, theta_range)
        variance_shape, variance_scale: Inverse-gamma draws of sigma_nu^2 and sigma_gamma^2
        sigma_beta, sigma2: Fixed scales
    """
    n_subjects: int = 22
    n_times: int = 7
    n_metabolites: int = 40
    n_covariates: int = 1
    n_pathways: int = 11
    tau: float = 1.2
    pi_omega: float = 0.7
    rho: float = 0.05
    sigma_phi2: float = 0.2
    psi_sim: float = 10.0
    density: dict = field(default_factory=lambda: dict(DEFAULT_DENSITY))
    seed: int = 0
    corruption: float = 0.0
    replicates: int = 1
    theta_range: float = 0.6
    variance_shape: float = 3.0
    variance_scale: float = 2.0
    sigma_beta: float = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        self.density = {int(k): float(v) for k, v in self.density.items()}
        if self.n_pathways < 1:
            raise IcarhConfigError('simulation.dims.n_pathways', "must be at least 1")
        if self.n_subjects < 2:
            raise IcarhConfigError('simulation.dims.n_subjects', "must be at least 2 (one per group)")
        for name in ('n_times', 'n_metabolites'):
            if getattr(self, name) < 1:
                raise IcarhConfigError(f'simulation.dims.{name}', "must be at least 1")
        if self.n_covariates < 0:
            raise IcarhConfigError('simulation.dims.n_covariates', "must be non-negative")
        if not 0 <= self.pi_omega <= 1:
            raise IcarhConfigError('simulation.phi.pi_omega', f"must lie in [0, 1], got {self.pi_omega}")
        if self.rho < 0:
            raise IcarhConfigError('simulation.phi.rho', f"must be non-negative, got {self.rho}")
        if self.sigma_phi2 < 0:
            raise IcarhConfigError('simulation.phi.sigma_phi2', "must be non-negative")
        if not self.psi_sim > 0:
            raise IcarhConfigError('simulation.phi.psi_sim', "must be positive")
        if not self.tau > 0:
            raise IcarhConfigError('simulation.generator.tau', "must be positive")
        if not self.density or any(k < 1 for k in self.density) or any(v < 0 for v in self.density.values()) \
                or sum(self.density.values()) <= 0:
            raise IcarhConfigError('simulation.dims.density',
                                   "must map pathway counts >= 1 to non-negative weights with positive sum")
        if not 0 <= self.corruption <= 1:
            raise IcarhConfigError('simulation.run.corruption', f"must lie in [0, 1], got {self.corruption}")
        if self.replicates < 1:
            raise IcarhConfigError('simulation.run.replicates', "must be at least 1")
        if not 0 <= self.theta_range < 1:
            raise IcarhConfigError('simulation.generator.theta_range', "must lie in [0, 1)")
        if self.sigma2 < 0 or not self.sigma_beta > 0:
            raise IcarhConfigError('simulation.generator.sigma2', "scales must be non-negative")
        if not (self.variance_shape > 0 and self.variance_scale > 0):
            raise IcarhConfigError('simulation.generator.variance_shape', "must be positive")

    def to_dict(self) -> dict:
        values = asdict(self)
        values['density'] = {str(k): v for k, v in self.density.items()}
        return values

    @classmethod
    def from_dict(cls, values: dict) -> 'SimulationConfig':
        """
        Build from flat or sectioned JSON.

        Sections ('dims', 'phi', 'generator', 'run') are merged into the flat
        field set; N, T, M, K and P are accepted for the dimensions. Unknown
        keys and wrongly typed values raise IcarhConfigError with a dotted path.
        """
        if not isinstance(values, dict):
            raise IcarhConfigError('simulation', "configuration must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        flat = {}

        def take(key, value, path):
            name = DIMENSION_ALIASES.get(key, key)
            if name not in known:
                raise IcarhConfigError(path, "unknown key")
            flat[name] = _coerce(known[name], value, path)

        for key, value in values.items():
            if key in SECTIONS and isinstance(value, dict):
                for inner, inner_value in value.items():
                    take(inner, inner_value, f"simulation.{key}.{inner}")
            else:
                take(key, value, f"simulation.{key}")
        return cls(**flat)


def _coerce(spec, value, path):
    kind = spec.type if isinstance(spec.type, str) else getattr(spec.type, '__name__', str(spec.type))
    try:
        if kind == 'int':
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind == 'float':
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind == 'dict':
            if not isinstance(value, dict):
                raise TypeError
            return {int(k): float(v) for k, v in value.items()}
    except (TypeError, ValueError):
        raise IcarhConfigError(path, f"expected {kind}, got {value!r}")
    return value


def _names(prefix: str, count: int) -> list:
    width = max(2, len(str(count)))
    return [f"{prefix}_{i + 1:0{width}d}" for i in range(count)]


def simulate_membership(M: int, P: int, density: Optional[dict] = None,
                        rng: Optional[np.random.Generator] = None) -> PathwayGraph:
    """
    Random pathway membership; every pathway is a complete subgraph of its members.

    Each metabolite joins a number of pathways drawn from `density` (capped
    at P), chosen uniformly without replacement.
    """
    if P < 1:
        raise IcarhConfigError('simulation.dims.n_pathways', "must be at least 1")
    rng = rng or np.random.default_rng()
    density = density or DEFAULT_DENSITY
    sizes = np.array(sorted(density), dtype=int)
    weights = np.array([density[k] for k in sizes], dtype=float)
    weights /= weights.sum()

    metabolites = _names('metabolite', M)
    members = [[] for _ in range(P)]
    for name in metabolites:
        count = min(int(rng.choice(sizes, p=weights)), P)
        for p in sorted(rng.choice(P, size=count, replace=False)):
            members[p].append(name)
    entries = [(pid, m, [list(e) for e in combinations(m, 2)]) for pid, m in zip(_names('pathway', P), members)]
    return build_pathway_graph(entries, metabolites)


def _truncated_normal(rng: np.random.Generator, mean: float, sd: float, low: float, high: float) -> float:
    if sd == 0:
        return float(np.clip(mean, low, high))
    a, b = (low - mean) / sd, (high - mean) / sd
    return float(stats.truncnorm.rvs(a, b, loc=mean, scale=sd, random_state=rng))


def simulate_phi(design: PathwayDesign, cfg: SimulationConfig, rng: np.random.Generator) -> tuple:
    """
    Draw (phi_controls, phi_cases, perturbed flags), one value per pathway.

    Values are kept strictly inside (L_p, U_p).
    """
    sd = float(np.sqrt(cfg.sigma_phi2))
    n = design.n_pathways
    controls, cases = np.empty(n), np.empty(n)
    perturbed = np.zeros(n, dtype=bool)
    for p in range(n):
        low, high = design.lower[p], design.upper[p]
        margin = 1e-9 * (high - low)
        perturbed[p] = rng.uniform() < cfg.pi_omega
        if perturbed[p]:
            controls[p] = _truncated_normal(rng, high - cfg.rho, sd, 0.0, high)
            cases[p] = _truncated_normal(rng, low + cfg.rho, sd, low, 0.0)
        else:
            controls[p] = _truncated_normal(rng, 0.0, cfg.psi_sim, low, high)
            cases[p] = controls[p]
        controls[p] = np.clip(controls[p], low + margin, high - margin)
        cases[p] = np.clip(cases[p], low + margin, high - margin)
    logger.debug(f"Simulated phi: {int(perturbed.sum())} of {n} pathway(s) perturbed")
    return controls, cases, perturbed


@dataclass
class SimulationTruth:
    """Every simulated parameter plus the perturbation flags."""
    state: ParameterState
    perturbed: dict
    pathways: PathwayGraph

    def to_dict(self) -> dict:
        blocks = {name: np.asarray(value).tolist() for name, value in vars(self.state).items()}
        return {
            'parameters': blocks,
            'phi_groups': list(GROUP_LABELS),
            'perturbed': {pid: bool(flag) for pid, flag in self.perturbed.items()},
            'true_pathways': self.pathways.to_dict()['pathways'],
        }


def load_truth(path: Path) -> dict:
    """Perturbation flags (pathway id -> bool) from a truth.json file."""
    try:
        with open(path) as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Cannot read truth file {path}: {e}")
        raise IcarhIOError(f"Cannot read truth file {path}: {e}")
    return {pid: bool(flag) for pid, flag in document.get('perturbed', {}).items()}


def simulate_dataset(design: PathwayDesign, phi_controls: np.ndarray, phi_cases: np.ndarray,
                     cfg: SimulationConfig, rng: np.random.Generator,
                     graph: Optional[PathwayGraph] = None, perturbed: Optional[np.ndarray] = None) -> tuple:
    """
    Generate a Dataset from the model at drawn parameters.

    The first half of the subjects are controls. The returned truth state
    uses phi rows ordered (cases, controls).

    Returns:
        (Dataset, SimulationTruth)
    """
    n, t, m, k = cfg.n_subjects, cfg.n_times, cfg.n_metabolites, cfg.n_covariates
    if design.n_metabolites != m:
        raise IcarhConfigError('simulation.dims.n_metabolites',
                               f"design covers {design.n_metabolites} metabolites, config has {m}")
    design.check_bounds(np.vstack([phi_cases, phi_controls]))

    theta = rng.uniform(-cfg.theta_range, cfg.theta_range, size=m)
    sigma_nu2 = stats.invgamma.rvs(cfg.variance_shape, scale=cfg.variance_scale, size=m, random_state=rng)
    sigma_gamma2 = stats.invgamma.rvs(cfg.variance_shape, scale=cfg.variance_scale, size=m, random_state=rng)
    alpha = rng.standard_normal(m)
    lam = np.abs(rng.standard_t(cfg.tau, size=(m, k)))
    sigma_beta = np.full(m if k > 0 else 0, cfg.sigma_beta)
    beta = rng.standard_normal((m, k)) * lam * cfg.sigma_beta
    y = rng.standard_normal((n, t, k))
    gamma = rng.standard_normal((n, m)) * np.sqrt(sigma_gamma2)

    nu = np.empty((n, t, m))
    nu[:, 0] = rng.standard_normal((n, m)) * np.sqrt(sigma_nu2 / (1.0 - theta ** 2))
    for step in range(1, t):
        nu[:, step] = theta * nu[:, step - 1] + rng.standard_normal((n, m)) * np.sqrt(sigma_nu2)
    mu = alpha + gamma[:, None, :] + np.einsum('itk,mk->itm', y, beta) + nu

    n_controls = n // 2
    group = ['controls'] * n_controls + ['cases'] * (n - n_controls)
    x = np.empty_like(mu)
    for label, phi in (('controls', phi_controls), ('cases', phi_cases)):
        idx = [i for i, g in enumerate(group) if g == label]
        noise = CarFactor(phi, design).sample(rng, cfg.sigma2, len(idx) * t)
        x[idx] = mu[idx] + noise.reshape(len(idx), t, m)

    metabolites = list(graph.metabolites) if graph is not None else _names('metabolite', m)
    data = Dataset(x, y, group, _names('subject', n), metabolites, _names('covariate', k))
    state = ParameterState(phi=np.vstack([phi_cases, phi_controls]), sigma2=float(cfg.sigma2), alpha=alpha,
                           gamma=gamma, nu=nu, theta=theta, beta=beta, lam=lam, sigma_beta=sigma_beta,
                           sigma_gamma2=sigma_gamma2, sigma_nu2=sigma_nu2)
    flags = perturbed if perturbed is not None else ~np.isclose(phi_controls, phi_cases)
    truth = SimulationTruth(state, dict(zip(design.pathway_ids, (bool(f) for f in flags))),
                            graph if graph is not None else PathwayGraph(tuple(metabolites)))
    return data, truth


def corrupt_design(g: PathwayGraph, y: float, rng: np.random.Generator) -> PathwayGraph:
    """
    Falsely reassign a fraction y of each pathway's members.

    Each chosen member leaves its pathway and, with equal probability, is
    dropped from every pathway or joins a uniformly chosen pathway it did not
    originally belong to (dropped when there is none). Complete pathways stay
    complete; otherwise the newcomer is linked to one random member. The
    input graph is not modified.
    """
    if not 0 <= y <= 1:
        raise IcarhConfigError('simulation.run.corruption', f"must lie in [0, 1], got {y}")
    original = [set(p.metabolites) for p in g.pathways]
    drops, moves = set(), []
    removals = [set() for _ in g.pathways]
    for p, pathway in enumerate(g.pathways):
        count = int(round(y * len(pathway.metabolites)))
        if count == 0:
            continue
        for name in rng.choice(list(pathway.metabolites), size=count, replace=False):
            removals[p].add(name)
            targets = [q for q in range(g.n_pathways) if name not in original[q]]
            if rng.uniform() < 0.5 or not targets:
                drops.add(name)
            else:
                moves.append((name, int(rng.choice(targets))))

    members = [[m for m in p.metabolites if m not in removals[i] and m not in drops] for i, p in enumerate(g.pathways)]
    edges = [[e for e in p.edges if e[0] in members[i] and e[1] in members[i]] for i, p in enumerate(g.pathways)]
    complete = [len(p.edges) == len(p.metabolites) * (len(p.metabolites) - 1) // 2 for p in g.pathways]
    for name, q in moves:
        if name in members[q]:
            continue
        if members[q]:
            partners = members[q] if complete[q] else [members[q][int(rng.integers(len(members[q])))]]
            edges[q].extend((partner, name) for partner in partners)
        members[q].append(name)

    pathways = tuple(Pathway(p.id, tuple(members[i]), tuple(edges[i]), inert=len(members[i]) < 2)
                     for i, p in enumerate(g.pathways))
    logger.debug(f"Corrupted design with y={y}: {len(drops)} dropped, {len(moves)} reassigned")
    return PathwayGraph(g.metabolites, pathways)


@dataclass
class SimulatedReplicate:
    """One synthetic dataset with the pathway file to fit and the ground truth."""
    data: Dataset
    graph: PathwayGraph
    truth: SimulationTruth

    def write(self, directory: Path) -> list:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / 'data.csv', directory / 'pathways.json', directory / 'truth.json']
        write_dataset(self.data, paths[0])
        write_pathways(self.graph, paths[1])
        paths[2].write_text(json.dumps(self.truth.to_dict(), indent=2), encoding='utf-8')
        return paths


def simulate_replicate(cfg: SimulationConfig, seed: np.random.SeedSequence) -> SimulatedReplicate:
    rng = np.random.default_rng(seed)
    graph = simulate_membership(cfg.n_metabolites, cfg.n_pathways, cfg.density, rng)
    design = build_pathway_design(graph)
    controls, cases, perturbed = simulate_phi(design, cfg, rng)
    data, truth = simulate_dataset(design, controls, cases, cfg, rng, graph, perturbed)
    fit_graph = corrupt_design(graph, cfg.corruption, rng) if cfg.corruption > 0 else graph
    return SimulatedReplicate(data, fit_graph, truth)


def simulate_replicates(cfg: SimulationConfig, n: Optional[int] = None, n_jobs: int = 1) -> list:
    """Generate n (default cfg.replicates) datasets in parallel from spawned seed streams."""
    n = cfg.replicates if n is None else n
    seeds = np.random.SeedSequence(cfg.seed).spawn(n)
    logger.info(f"Simulating {n} dataset(s) N={cfg.n_subjects} T={cfg.n_times} M={cfg.n_metabolites} "
                f"K={cfg.n_covariates} P={cfg.n_pathways}")
    return Parallel(n_jobs=n_jobs)(delayed(simulate_replicate)(cfg, s) for s in seeds)
