"""
iCARH Sampler

Hamiltonian Monte Carlo over an unconstrained target with

  * a fixed-length leapfrog trajectory (step count jittered by +/-20%, or
    derived from a target trajectory length),
  * dual-averaging step-size adaptation during warmup,
  * a diagonal mass matrix estimated from doubling warmup windows,
  * chains run in parallel with per-chain RNG streams spawned from one seed.

Any object exposing `dimension`, `parameter_names`, `initial_point(rng)`,
`log_density_and_gradient(q)` and `constrain(q)` can be sampled.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import arviz as az
import numpy as np
import pandas as pd
from humanfriendly import format_timespan
from joblib import Parallel, delayed

from .exceptions import IcarhConfigError, IcarhInitializationError, IcarhIOError, IcarhNumericError

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0
DIVERGENCE_WARNING_RATE = 0.2
RHAT_THRESHOLD = 1.05
SUMMARY_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)

DRAWS_FILE = 'draws.csv.gz'
STATS_FILE = 'sampler_stats.csv'
SAMPLER_FILE = 'sampler.json'


@dataclass
class SamplerConfig:
    """
    HMC run settings.

    `iterations` counts warmup iterations too; post-warmup draws are
    iterations - warmup, thinned by `thin`.
    """
    iterations: int = 2000
    warmup: int = 1000
    chains: int = 4
    seed: int = 0
    leapfrog_steps: int = 16
    trajectory_length: Optional[float] = None
    max_leapfrog_steps: int = 256
    target_accept: float = 0.8
    initial_step_size: Optional[float] = None
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25
    thin: int = 1
    jitter: float = 0.2
    init_retries: int = 100
    gradient_check: bool = True

    def __post_init__(self):
        if self.chains < 1:
            raise IcarhConfigError('sampler.chains', f"must be at least 1, got {self.chains}")
        if self.warmup < 0 or self.iterations < 0:
            raise IcarhConfigError('sampler.iterations', "iteration counts must be non-negative")
        if self.warmup > self.iterations:
            raise IcarhConfigError('sampler.warmup',
                                   f"warmup ({self.warmup}) exceeds iterations ({self.iterations})")
        if not 0 <= self.seed < 2 ** 64:
            raise IcarhConfigError('sampler.seed', "must be an unsigned 64-bit integer")
        if self.leapfrog_steps < 1 or self.max_leapfrog_steps < 1:
            raise IcarhConfigError('sampler.leapfrog_steps', "must be at least 1")
        if self.trajectory_length is not None and not self.trajectory_length > 0:
            raise IcarhConfigError('sampler.trajectory_length', "must be positive")
        if not 0 < self.target_accept < 1:
            raise IcarhConfigError('sampler.target_accept', "must lie in (0, 1)")
        if self.initial_step_size is not None and not self.initial_step_size > 0:
            raise IcarhConfigError('sampler.initial_step_size', "must be positive")
        if self.thin < 1:
            raise IcarhConfigError('sampler.thin', "must be at least 1")
        if not 0 <= self.jitter < 1:
            raise IcarhConfigError('sampler.jitter', "must lie in [0, 1)")

    @property
    def n_draws(self) -> int:
        return len(range(self.warmup, self.iterations, self.thin))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> 'SamplerConfig':
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


def leapfrog(target, q: np.ndarray, p: np.ndarray, grad: np.ndarray, step_size: float,
             n_steps: int, inv_mass: np.ndarray) -> tuple:
    """
    Integrate Hamilton's equations for n_steps with the leapfrog scheme.

    Args:
        target: Callable q -> (log-density, gradient)
        q, p: Position and momentum
        grad: Gradient of the log-density at q
        inv_mass: Diagonal of the inverse mass matrix

    Returns:
        (q, p, log-density, gradient) at the end of the trajectory; stops
        early when the log-density becomes non-finite
    """
    q = q.copy()
    p = p + 0.5 * step_size * grad
    logp = -np.inf
    for step in range(n_steps):
        q = q + step_size * inv_mass * p
        logp, grad = target(q)
        if not np.isfinite(logp):
            return q, p, logp, grad
        if step < n_steps - 1:
            p = p + step_size * grad
    p = p + 0.5 * step_size * grad
    return q, p, logp, grad


def hamiltonian(logp: float, p: np.ndarray, inv_mass: np.ndarray) -> float:
    return -logp + 0.5 * float(np.sum(inv_mass * p * p))


class DualAveraging:
    """Step-size adaptation toward a target acceptance statistic."""

    def __init__(self, step_size: float, target: float = 0.8, gamma: float = 0.05,
                 t0: float = 10.0, kappa: float = 0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size: float) -> None:
        self.mu = math.log(10.0 * step_size)
        self.count = 0
        self.h_bar = 0.0
        self.log_step_bar = 0.0

    def update(self, accept_stat: float) -> float:
        """Record one acceptance statistic and return the next step size."""
        self.count += 1
        eta = 1.0 / (self.count + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        log_step = self.mu - math.sqrt(self.count) / self.gamma * self.h_bar
        weight = self.count ** -self.kappa
        self.log_step_bar = weight * log_step + (1.0 - weight) * self.log_step_bar
        return math.exp(log_step)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.log_step_bar)


def find_reasonable_step_size(target, q: np.ndarray, logp: float, grad: np.ndarray,
                              inv_mass: np.ndarray, rng: np.random.Generator,
                              step_size: float = 1.0, max_rounds: int = 100) -> float:
    """Double or halve the step size until a one-step acceptance probability crosses 1/2."""
    def log_accept(eps):
        p = rng.standard_normal(q.shape) / np.sqrt(inv_mass)
        _, p_new, logp_new, _ = leapfrog(target, q, p, grad, eps, 1, inv_mass)
        if not np.isfinite(logp_new):
            return -np.inf
        return hamiltonian(logp, p, inv_mass) - hamiltonian(logp_new, p_new, inv_mass)

    current = log_accept(step_size)
    direction = 1.0 if current > math.log(0.5) else -1.0
    for _ in range(max_rounds):
        if direction * current <= -direction * math.log(2.0):
            break
        step_size *= 2.0 ** direction
        current = log_accept(step_size)
    return step_size


def adaptation_windows(warmup: int, init_buffer: int = 75, term_buffer: int = 50,
                       base_window: int = 25) -> list:
    """
    Slow-adaptation windows [start, end) for the mass matrix.

    Windows double in size after a fast initial buffer and stop before a
    fast terminal buffer; short warmups fall back to 15% / 75% / 10% of the
    warmup.
    """
    if warmup < 20:
        return []
    if init_buffer + term_buffer + base_window > warmup:
        init_buffer = int(0.15 * warmup)
        term_buffer = int(0.1 * warmup)
        base_window = warmup - init_buffer - term_buffer
    windows = []
    start, size = init_buffer, base_window
    last = warmup - term_buffer
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        windows.append((start, end))
        start, size = end, 2 * size
    return windows


def regularized_variance(samples: np.ndarray) -> np.ndarray:
    n = samples.shape[0]
    variance = np.var(samples, axis=0, ddof=1) if n > 1 else np.ones(samples.shape[1])
    return (n / (n + 5.0)) * variance + 1e-3 * (5.0 / (n + 5.0))


def check_gradient(model, q: np.ndarray, rng: Optional[np.random.Generator] = None,
                   n_coordinates: int = 10, step: float = 1e-6, rel_tol: float = 1e-3,
                   abs_tol: float = 1e-4) -> float:
    """
    Compare the analytic gradient with central finite differences on a
    random subset of coordinates.

    Returns:
        Largest absolute discrepancy found

    Raises:
        IcarhNumericError: If a coordinate disagrees beyond tolerance
    """
    rng = rng or np.random.default_rng(0)
    _, grad = model.log_density_and_gradient(q)
    n_coordinates = min(n_coordinates, q.size)
    worst = 0.0
    for j in rng.choice(q.size, size=n_coordinates, replace=False):
        shift = np.zeros_like(q)
        shift[j] = step
        upper = model.log_density_and_gradient(q + shift)[0]
        lower = model.log_density_and_gradient(q - shift)[0]
        numeric = (upper - lower) / (2.0 * step)
        error = abs(numeric - grad[j])
        worst = max(worst, error)
        if not np.isfinite(numeric) or error > abs_tol + rel_tol * abs(numeric):
            name = model.parameter_names[j] if j < len(model.parameter_names) else j
            logger.error(f"Gradient self-check failed at {name}: analytic {grad[j]:.6g}, numeric {numeric:.6g}")
            raise IcarhNumericError(f"Gradient self-check failed at coordinate {name}")
    logger.debug(f"Gradient self-check passed, largest discrepancy {worst:.3g}")
    return worst


def _initialize(model, rng: np.random.Generator, retries: int, start: Optional[np.ndarray]) -> tuple:
    for attempt in range(retries):
        if start is not None and attempt == 0:
            q = np.asarray(start, dtype=float).copy()
        else:
            q = model.initial_point(rng)
        logp, grad = model.log_density_and_gradient(q)
        if np.isfinite(logp) and np.all(np.isfinite(grad)):
            return q, logp, grad
    logger.error(f"No finite starting point after {retries} attempts")
    raise IcarhInitializationError(f"No finite log-density and gradient after {retries} initialization attempts")


@dataclass
class ChainResult:
    values: np.ndarray
    log_density: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    n_leapfrog: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    elapsed: float


def run_chain(model, cfg: SamplerConfig, chain: int, seed: np.random.SeedSequence,
              start: Optional[np.ndarray] = None) -> ChainResult:
    """Run one chain: initialisation, warmup adaptation, then draws in constrained coordinates."""
    started = time.monotonic()
    rng = np.random.default_rng(seed)
    target = model.log_density_and_gradient
    q, logp, grad = _initialize(model, rng, cfg.init_retries, start)
    if cfg.gradient_check:
        check_gradient(model, q, rng)

    inv_mass = np.ones(model.dimension)
    step_size = cfg.initial_step_size or find_reasonable_step_size(target, q, logp, grad, inv_mass, rng)
    adapter = DualAveraging(step_size, target=cfg.target_accept)
    windows = adaptation_windows(cfg.warmup, cfg.init_buffer, cfg.term_buffer, cfg.base_window)
    window_ends = {end: start_ for start_, end in windows}
    window_draws = []

    n_draws = cfg.n_draws
    values = np.empty((n_draws, len(model.parameter_names)))
    log_density = np.empty(n_draws)
    accept_stat = np.empty(n_draws)
    divergent = np.zeros(n_draws, dtype=bool)
    n_leapfrog = np.zeros(n_draws, dtype=int)
    draw = 0

    for iteration in range(cfg.iterations):
        if cfg.trajectory_length is not None:
            n_steps = int(np.clip(math.ceil(cfg.trajectory_length / step_size), 1, cfg.max_leapfrog_steps))
        else:
            low = max(1, int(math.floor((1.0 - cfg.jitter) * cfg.leapfrog_steps)))
            high = max(low, int(math.ceil((1.0 + cfg.jitter) * cfg.leapfrog_steps)))
            n_steps = min(int(rng.integers(low, high + 1)), cfg.max_leapfrog_steps)

        p = rng.standard_normal(q.shape) / np.sqrt(inv_mass)
        energy = hamiltonian(logp, p, inv_mass)
        q_new, p_new, logp_new, grad_new = leapfrog(target, q, p, grad, step_size, n_steps, inv_mass)
        energy_new = hamiltonian(logp_new, p_new, inv_mass) if np.isfinite(logp_new) else np.inf
        error = energy_new - energy
        is_divergent = not np.isfinite(error) or error > DIVERGENCE_THRESHOLD
        accept = 0.0 if is_divergent else float(min(1.0, math.exp(-error)))
        if rng.uniform() < accept:
            q, logp, grad = q_new, logp_new, grad_new

        if iteration < cfg.warmup:
            step_size = adapter.update(accept)
            in_window = any(s <= iteration < e for s, e in windows)
            if in_window:
                window_draws.append(q.copy())
            if iteration + 1 in window_ends:
                inv_mass = regularized_variance(np.asarray(window_draws))
                window_draws = []
                step_size = find_reasonable_step_size(target, q, logp, grad, inv_mass, rng, step_size)
                adapter.restart(step_size)
                logger.debug(f"Chain {chain}: mass matrix updated at iteration {iteration + 1}, "
                             f"step size {step_size:.4g}")
            if iteration + 1 == cfg.warmup:
                step_size = adapter.final_step_size
                logger.debug(f"Chain {chain}: warmup finished, step size {step_size:.4g}")
        elif (iteration - cfg.warmup) % cfg.thin == 0:
            values[draw] = model.constrain(q)
            log_density[draw] = logp
            accept_stat[draw] = accept
            divergent[draw] = is_divergent
            n_leapfrog[draw] = n_steps
            draw += 1

    elapsed = time.monotonic() - started
    rate = float(np.mean(accept_stat)) if n_draws else float('nan')
    logger.info(f"Chain {chain} finished in {format_timespan(elapsed)}: mean acceptance {rate:.3f}, "
                f"{int(divergent.sum())} divergent")
    return ChainResult(values, log_density, accept_stat, divergent, n_leapfrog, step_size, inv_mass, elapsed)


@dataclass
class PosteriorDraws:
    """
    Post-warmup draws in constrained coordinates.

    Attributes:
        parameter_names: Column schema, fixed by the model dimensions
        values: Shape (chains, draws, parameters)
        log_density, accept_stat, divergent, n_leapfrog: Shape (chains, draws)
        step_size: Adapted step size per chain
        warmup, thin: Iteration bookkeeping
    """
    parameter_names: list
    values: np.ndarray
    log_density: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    n_leapfrog: np.ndarray
    step_size: np.ndarray
    warmup: int = 0
    thin: int = 1

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_draws(self) -> int:
        return self.values.shape[1]

    @property
    def iterations(self) -> np.ndarray:
        return self.warmup + 1 + self.thin * np.arange(self.n_draws)

    @property
    def divergence_rate(self) -> float:
        return float(np.mean(self.divergent)) if self.divergent.size else 0.0

    def index(self, name: str) -> int:
        try:
            return self.parameter_names.index(name)
        except ValueError:
            raise KeyError(f"Unknown parameter '{name}'")

    def column(self, name: str) -> np.ndarray:
        """Draws of one parameter, shape (chains, draws)."""
        return self.values[:, :, self.index(name)]

    def block(self, prefix: str) -> tuple:
        """All parameters named prefix[...]: (names, array of shape (chains, draws, k))."""
        columns = [j for j, n in enumerate(self.parameter_names) if n.startswith(prefix + '[')]
        return [self.parameter_names[j] for j in columns], self.values[:, :, columns]

    def flat(self) -> np.ndarray:
        """Draws pooled across chains, shape (chains * draws, parameters)."""
        return self.values.reshape(-1, self.values.shape[2])

    def to_frame(self) -> pd.DataFrame:
        """Long format: chain, iteration, parameter, value."""
        chains, draws, count = self.values.shape
        return pd.DataFrame({
            'chain': np.repeat(np.arange(chains), draws * count),
            'iteration': np.tile(np.repeat(self.iterations, count), chains),
            'parameter': np.tile(np.asarray(self.parameter_names, dtype=object), chains * draws),
            'value': self.values.ravel(),
        })

    def stats_frame(self) -> pd.DataFrame:
        chains, draws = self.log_density.shape
        return pd.DataFrame({
            'chain': np.repeat(np.arange(chains), draws),
            'iteration': np.tile(self.iterations, chains),
            'log_density': self.log_density.ravel(),
            'accept_stat': self.accept_stat.ravel(),
            'divergent': self.divergent.ravel().astype(int),
            'n_leapfrog': self.n_leapfrog.ravel(),
            'step_size': np.repeat(self.step_size, draws),
        })

    def write(self, directory: Path) -> list:
        """Write draws, per-draw sampler statistics and the schema; returns the written paths."""
        directory = Path(directory)
        paths = [directory / DRAWS_FILE, directory / STATS_FILE, directory / SAMPLER_FILE]
        # mtime 0 keeps the archive bytes reproducible for the manifest digests
        self.to_frame().to_csv(paths[0], index=False, float_format='%.17g',
                               compression={'method': 'gzip', 'mtime': 0})
        self.stats_frame().to_csv(paths[1], index=False, float_format='%.17g')
        with open(paths[2], 'w') as f:
            json.dump({
                'chains': self.n_chains,
                'draws': self.n_draws,
                'warmup': self.warmup,
                'thin': self.thin,
                'step_size': [float(s) for s in self.step_size],
                'parameter_names': list(self.parameter_names),
            }, f, indent=2)
        return paths

    @classmethod
    def read(cls, directory: Path) -> 'PosteriorDraws':
        """Load draws written by `write`."""
        directory = Path(directory)
        for name in (DRAWS_FILE, STATS_FILE, SAMPLER_FILE):
            if not (directory / name).exists():
                logger.error(f"Missing {name} in {directory}")
                raise IcarhIOError(f"Fit directory {directory} has no {name}; run icarh-fit first")
        with open(directory / SAMPLER_FILE) as f:
            schema = json.load(f)
        names = schema['parameter_names']
        chains, draws = schema['chains'], schema['draws']
        frame = pd.read_csv(directory / DRAWS_FILE)
        stats = pd.read_csv(directory / STATS_FILE)
        if len(frame) != chains * draws * len(names) or len(stats) != chains * draws:
            raise IcarhIOError(f"Draw files in {directory} do not match the recorded schema")
        values = frame['value'].to_numpy(dtype=float).reshape(chains, draws, len(names))

        def per_draw(column, dtype=float):
            return stats[column].to_numpy(dtype=dtype).reshape(chains, draws)

        return cls(parameter_names=names, values=values, log_density=per_draw('log_density'),
                   accept_stat=per_draw('accept_stat'), divergent=per_draw('divergent', bool),
                   n_leapfrog=per_draw('n_leapfrog', int), step_size=np.asarray(schema['step_size']),
                   warmup=schema['warmup'], thin=schema['thin'])


def run_hmc(model, cfg: SamplerConfig, init: Optional[np.ndarray] = None, n_jobs: int = 1) -> PosteriorDraws:
    """
    Sample the model with cfg.chains independent chains.

    Args:
        model: Target exposing the sampler interface
        cfg: Sampler settings
        init: Optional unconstrained start, shape (d,) or (chains, d); None uses model.initial_point
        n_jobs: Parallel workers for the chains

    Returns:
        PosteriorDraws, chains merged in chain-index order
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    starts = [None] * cfg.chains
    if init is not None:
        init = np.asarray(init, dtype=float)
        starts = list(init) if init.ndim == 2 else [init] * cfg.chains
    logger.info(f"Sampling {cfg.chains} chain(s), {cfg.iterations} iterations "
                f"({cfg.warmup} warmup), dimension {model.dimension}")
    results = Parallel(n_jobs=n_jobs)(
        delayed(run_chain)(model, cfg, c, seeds[c], starts[c]) for c in range(cfg.chains)
    )
    draws = PosteriorDraws(
        parameter_names=list(model.parameter_names),
        values=np.stack([r.values for r in results]),
        log_density=np.stack([r.log_density for r in results]),
        accept_stat=np.stack([r.accept_stat for r in results]),
        divergent=np.stack([r.divergent for r in results]),
        n_leapfrog=np.stack([r.n_leapfrog for r in results]),
        step_size=np.array([r.step_size for r in results]),
        warmup=cfg.warmup,
        thin=cfg.thin,
    )
    if draws.divergence_rate > DIVERGENCE_WARNING_RATE:
        logger.warning(f"Divergence rate {draws.divergence_rate:.1%} after warmup exceeds "
                       f"{DIVERGENCE_WARNING_RATE:.0%}; results may be unreliable")
    return draws


@dataclass
class DiagnosticsReport:
    """Per-parameter split R-hat and bulk ESS plus per-chain sampler behaviour."""
    table: pd.DataFrame
    rhat_available: bool
    chain_acceptance: list
    chain_divergences: list

    @property
    def flagged(self) -> list:
        return self.table.index[self.table['flagged']].tolist()


def diagnostics(draws: PosteriorDraws, rhat_threshold: float = RHAT_THRESHOLD) -> DiagnosticsReport:
    """
    Split R-hat and bulk ESS per parameter.

    R-hat needs two chains of at least four draws; otherwise it is reported
    as unavailable (NaN). Parameters with zero variance get R-hat 1.0 and
    ESS equal to the number of draws.
    """
    chains, n, count = draws.values.shape
    rhat = np.full(count, np.nan)
    ess = np.full(count, np.nan)
    rhat_available = chains >= 2 and n >= 4
    if n >= 4 and count > 0:
        dataset = az.convert_to_dataset(draws.values)
        ess = np.asarray(az.ess(dataset, method='bulk')['x'].values, dtype=float)
        if rhat_available:
            rhat = np.asarray(az.rhat(dataset, method='rank')['x'].values, dtype=float)
        constant = np.ptp(draws.values.reshape(-1, count), axis=0) == 0
        ess[constant] = chains * n
        if rhat_available:
            rhat[constant] = 1.0
    if not rhat_available:
        logger.warning("R-hat unavailable: needs at least 2 chains with 4 draws each")

    table = pd.DataFrame({'rhat': rhat, 'ess_bulk': ess}, index=pd.Index(draws.parameter_names, name='parameter'))
    table['flagged'] = table['rhat'] > rhat_threshold
    if table['flagged'].any():
        logger.warning(f"{int(table['flagged'].sum())} parameter(s) with R-hat above {rhat_threshold}")
    acceptance = [float(np.mean(a)) if a.size else float('nan') for a in draws.accept_stat]
    divergences = [int(np.sum(d)) for d in draws.divergent]
    return DiagnosticsReport(table, rhat_available, acceptance, divergences)


def summarize(draws: PosteriorDraws, report: Optional[DiagnosticsReport] = None) -> dict:
    """
    Posterior summary: mean, SD, quantiles, R-hat and ESS per parameter,
    plus divergence counts and per-chain acceptance.
    """
    report = report or diagnostics(draws)
    flat = draws.flat()
    parameters = {}
    if flat.shape[0] > 0:
        means = flat.mean(axis=0)
        sds = flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.full(flat.shape[1], np.nan)
        quantiles = np.quantile(flat, SUMMARY_QUANTILES, axis=0)
        for j, name in enumerate(draws.parameter_names):
            row = report.table.iloc[j]
            parameters[name] = {
                'mean': float(means[j]),
                'sd': _json_float(sds[j]),
                'quantiles': {f"{100 * q:g}%": float(quantiles[k, j]) for k, q in enumerate(SUMMARY_QUANTILES)},
                'rhat': _json_float(row['rhat']),
                'ess_bulk': _json_float(row['ess_bulk']),
            }
    return {
        'chains': draws.n_chains,
        'draws_per_chain': draws.n_draws,
        'rhat_available': report.rhat_available,
        'rhat_flagged': report.flagged,
        'divergences': report.chain_divergences,
        'divergence_rate': draws.divergence_rate,
        'divergence_warning': draws.divergence_rate > DIVERGENCE_WARNING_RATE,
        'acceptance': [_json_float(a) for a in report.chain_acceptance],
        'step_size': [float(s) for s in draws.step_size],
        'parameters': parameters,
    }


def _json_float(value) -> Optional[float]:
    value = float(value)
    return value if np.isfinite(value) else None
