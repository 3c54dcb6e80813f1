"""
iCARH Posterior Analysis

Post-processing of PosteriorDraws: pathway perturbation tests and ROC
curves, WAIC, posterior predictive covariance checks, whitened residuals,
and coefficient / shrinkage summaries. Every function is a pure function of
the draws and the data.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import integrate, linalg, special, stats

from .car import CarFactor, PathwayDesign
from .data import Dataset, PathwayGraph
from .exceptions import IcarhDomainError, IcarhUndefinedStatisticError, IcarhUnsupportedModeError
from .model import IcarhModel, ModelConfig
from .sampler import PosteriorDraws
from .shrinkage import kappa

logger = logging.getLogger(__name__)

PPC_REPLICATE_AXIS = 'pooled subject x time rows'


def _inner(name: str) -> str:
    return name[name.index('[') + 1:-1]


def _interval(samples: np.ndarray, level: float) -> tuple:
    if not 0 < level < 1:
        raise IcarhDomainError(f"level must lie in (0, 1), got {level}")
    return tuple(np.quantile(samples, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0))


def _require_draws(draws: PosteriorDraws) -> np.ndarray:
    flat = draws.flat()
    if flat.shape[0] == 0:
        raise IcarhUndefinedStatisticError("The draw table is empty")
    return flat


@dataclass
class PerturbationReport:
    """
    Per-pathway test of phi^controls - phi^cases.

    Attributes:
        table: One row per pathway: mean, lower, upper, score, perturbed (and truth when known)
        level: Credible level of the intervals
        roc: ROC points (fpr, tpr, threshold) when truth was supplied
        auc: Area under the ROC curve when truth was supplied
    """
    table: pd.DataFrame
    level: float
    roc: Optional[pd.DataFrame] = None
    auc: Optional[float] = None

    def to_dict(self) -> dict:
        out = {
            'level': self.level,
            'statistic': 'phi_controls - phi_cases',
            'pathways': self.table.reset_index().to_dict(orient='records'),
        }
        if self.auc is not None:
            out['auc'] = self.auc
        return out


def tail_score(differences: np.ndarray) -> np.ndarray:
    """max(P(d > 0), P(d < 0)) per column, exact zeros split evenly; lies in [0.5, 1]."""
    differences = np.atleast_2d(np.asarray(differences, dtype=float).T).T
    zero = np.mean(differences == 0, axis=0)
    positive = np.mean(differences > 0, axis=0) + 0.5 * zero
    negative = np.mean(differences < 0, axis=0) + 0.5 * zero
    return np.maximum(positive, negative)


def phi_difference_test(draws: PosteriorDraws, level: float = 0.95,
                        truth: Optional[dict] = None) -> PerturbationReport:
    """
    Declare pathway p perturbed when the equal-tailed credible interval of
    phi^controls_p - phi^cases_p excludes zero.

    Args:
        draws: Draws of a two-group fit
        level: Credible level
        truth: Optional mapping pathway id -> perturbed flag; adds ROC/AUC

    Raises:
        IcarhUnsupportedModeError: For single-group fits
    """
    names, _ = draws.block('phi')
    cases = [n for n in names if _inner(n).startswith('cases,')]
    controls = [n for n in names if _inner(n).startswith('controls,')]
    if not cases or not controls:
        logger.error("Perturbation test requested on a single-group fit")
        raise IcarhUnsupportedModeError("phi_difference_test needs a two-group fit")
    _require_draws(draws)

    pathway_ids = [_inner(n).split(',', 1)[1] for n in cases]
    differences = np.stack([
        draws.column(f"phi[controls,{pid}]").ravel() - draws.column(f"phi[cases,{pid}]").ravel()
        for pid in pathway_ids
    ], axis=1)
    lower, upper = _interval(differences, level)
    table = pd.DataFrame({
        'mean': differences.mean(axis=0),
        'lower': lower,
        'upper': upper,
        'score': tail_score(differences),
        'perturbed': (lower > 0) | (upper < 0),
    }, index=pd.Index(pathway_ids, name='pathway'))
    logger.info(f"{int(table['perturbed'].sum())} of {len(table)} pathway(s) perturbed at level {level}")

    report = PerturbationReport(table, level)
    if truth is not None:
        missing = [pid for pid in pathway_ids if pid not in truth]
        if missing:
            raise IcarhDomainError(f"Truth labels missing for pathway(s) {missing}")
        table['truth'] = [bool(truth[pid]) for pid in pathway_ids]
        if table['truth'].nunique() < 2:
            logger.warning("Truth labels contain a single class; ROC and AUC are not reported")
        else:
            report.roc, report.auc = roc_auc(table['score'].to_numpy(), table['truth'].to_numpy())
    return report


def roc_auc(scores: Sequence[float], truth: Sequence[bool]) -> tuple:
    """
    ROC curve by a threshold sweep and its trapezoidal area.

    Tied scores move together, so the area equals the Mann-Whitney rank
    statistic.

    Returns:
        (DataFrame with fpr, tpr, threshold; AUC)

    Raises:
        IcarhUndefinedStatisticError: If truth contains a single class
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape:
        raise IcarhDomainError("scores and truth must have the same length")
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    if n_pos == 0 or n_neg == 0:
        raise IcarhUndefinedStatisticError("AUC is undefined when truth contains a single class")

    thresholds = np.unique(scores)[::-1]
    tpr = [0.0] + [float(np.sum(scores[truth] >= t)) / n_pos for t in thresholds]
    fpr = [0.0] + [float(np.sum(scores[~truth] >= t)) / n_neg for t in thresholds]
    roc = pd.DataFrame({'fpr': fpr, 'tpr': tpr, 'threshold': [np.inf] + list(thresholds)})
    auc = float(integrate.trapezoid(roc['tpr'], roc['fpr']))
    return roc, auc


@dataclass
class WaicResult:
    waic: float
    lppd: float
    p_waic: float
    pointwise: pd.DataFrame = field(repr=False)

    def to_dict(self) -> dict:
        return {'waic': self.waic, 'lppd': self.lppd, 'p_waic': self.p_waic,
                'observation_unit': 'subject x time metabolite vector'}


def waic_from_log_likelihood(log_lik: np.ndarray) -> tuple:
    """
    WAIC from a (draws, observations) log-likelihood table.

    Returns:
        (waic, lppd, p_waic, per-observation lppd, per-observation p_waic)

    Raises:
        IcarhUndefinedStatisticError: With fewer than two draws
    """
    log_lik = np.asarray(log_lik, dtype=float)
    if log_lik.ndim != 2 or log_lik.shape[0] < 2:
        raise IcarhUndefinedStatisticError("WAIC needs at least two draws")
    lppd_i = special.logsumexp(log_lik, axis=0) - np.log(log_lik.shape[0])
    p_waic_i = np.var(log_lik, axis=0, ddof=1)
    lppd, p_waic = float(np.sum(lppd_i)), float(np.sum(p_waic_i))
    return -2.0 * (lppd - p_waic), lppd, p_waic, lppd_i, p_waic_i


def _pointwise_chunk(model: IcarhModel, rows: np.ndarray) -> np.ndarray:
    return np.stack([model.pointwise_log_likelihood(model.state_from_flat(r)).ravel() for r in rows])


def waic(draws: PosteriorDraws, data: Dataset, design: PathwayDesign, cfg: ModelConfig,
         n_jobs: int = 1) -> WaicResult:
    """WAIC with one observation per (subject, time) metabolite vector."""
    model = IcarhModel(data, design, cfg)
    flat = draws.flat()
    if flat.shape[0] < 2:
        raise IcarhUndefinedStatisticError("WAIC needs at least two draws")
    chunks = np.array_split(flat, max(1, min(n_jobs, flat.shape[0])))
    log_lik = np.concatenate(Parallel(n_jobs=n_jobs)(delayed(_pointwise_chunk)(model, c) for c in chunks))
    value, lppd, p_waic, lppd_i, p_waic_i = waic_from_log_likelihood(log_lik)
    subjects = np.repeat(data.subjects, data.n_times)
    times = np.tile(np.arange(1, data.n_times + 1), data.n_subjects)
    pointwise = pd.DataFrame({'subject': subjects, 'time': times, 'lppd': lppd_i, 'p_waic': p_waic_i})
    logger.info(f"WAIC {value:.3f} (lppd {lppd:.3f}, p_waic {p_waic:.3f})")
    return WaicResult(value, lppd, p_waic, pointwise)


def covariance_mad(observed: np.ndarray, replicates: Sequence[np.ndarray], count: int) -> float:
    """
    Mean over replicates of the mean absolute elementwise difference between
    the covariance of the first `count` columns of observed and replicate rows.
    """
    if count < 2:
        raise IcarhUndefinedStatisticError(f"Covariance check needs at least 2 metabolites, got {count}")
    if count > observed.shape[1]:
        raise IcarhDomainError(f"Metabolite count {count} exceeds M={observed.shape[1]}")
    if len(replicates) == 0:
        raise IcarhUndefinedStatisticError("No posterior predictive replicates")
    target = np.cov(observed[:, :count], rowvar=False)
    return float(np.mean([np.mean(np.abs(target - np.cov(r[:, :count], rowvar=False))) for r in replicates]))


def ppc_mad(draws: PosteriorDraws, data: Dataset, design: PathwayDesign, cfg: ModelConfig,
            metabolite_counts: Sequence[int], replicates: int = 100, seed: int = 0) -> pd.DataFrame:
    """
    Posterior predictive check of the metabolite covariance.

    Replicate datasets are simulated at `replicates` draws spread evenly over
    the pooled draw table; covariances are computed over the pooled N x T
    rows.

    Returns:
        DataFrame with count, mad, replicates
    """
    counts = [int(c) for c in metabolite_counts]
    for c in counts:
        if c < 2:
            raise IcarhUndefinedStatisticError(f"Covariance check needs at least 2 metabolites, got {c}")
        if c > data.n_metabolites:
            raise IcarhDomainError(f"Metabolite count {c} exceeds M={data.n_metabolites}")
    flat = _require_draws(draws)
    model = IcarhModel(data, design, cfg)
    rng = np.random.default_rng(seed)
    n_rep = max(1, min(replicates, flat.shape[0]))
    picks = np.unique(np.linspace(0, flat.shape[0] - 1, n_rep).round().astype(int))
    rows = data.n_subjects * data.n_times
    simulated = [model.simulate(model.state_from_flat(flat[j]), rng).reshape(rows, -1) for j in picks]
    observed = data.x.reshape(rows, -1)
    out = pd.DataFrame({
        'count': counts,
        'mad': [covariance_mad(observed, simulated, c) for c in counts],
        'replicates': len(picks),
    })
    logger.info(f"PPC MAD over {len(picks)} replicate(s): {dict(zip(out['count'], out['mad'].round(4)))}")
    return out


def whiten(residuals: np.ndarray, phi: np.ndarray, sigma2: float, design: PathwayDesign) -> np.ndarray:
    """Psi^-1 r for each row, Psi the lower Cholesky factor of (I - C(phi))^-1 sigma2."""
    psi = CarFactor(phi, design).covariance_cholesky(sigma2)
    return linalg.solve_triangular(psi, np.atleast_2d(residuals).T, lower=True).T


def normal_quantile_pairs(values: np.ndarray) -> pd.DataFrame:
    """(theoretical, empirical) QQ pairs, both ascending."""
    empirical = np.sort(np.ravel(values))
    n = empirical.size
    theoretical = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    return pd.DataFrame({'theoretical': theoretical, 'empirical': empirical})


def whitened_residuals(draws: PosteriorDraws, data: Dataset, design: PathwayDesign,
                       cfg: ModelConfig) -> dict:
    """
    Residuals whitened at the posterior means of phi^e, sigma2 and mu.

    Returns:
        Mapping group name -> {'residuals': (rows, M) array, 'qq': DataFrame}
    """
    model = IcarhModel(data, design, cfg)
    state = model.state_from_flat(_require_draws(draws).mean(axis=0))
    residuals = data.x - model.mean(state)
    out = {}
    for g, name in enumerate(model.group_names):
        idx = model.members[g]
        rows = residuals[idx].reshape(-1, data.n_metabolites)
        white = whiten(rows, state.phi[g], state.sigma2, design)
        out[name] = {'residuals': white, 'qq': normal_quantile_pairs(white)}
    return out


def coefficient_summary(samples: np.ndarray, names: Sequence[str], level: float = 0.95) -> pd.DataFrame:
    """Mean, SD, equal-tailed interval and selection flag (0 outside the interval) per column."""
    columns = ['mean', 'sd', 'lower', 'upper', 'selected']
    if len(names) == 0:
        return pd.DataFrame(columns=columns, index=pd.Index([], name='parameter'))
    samples = np.asarray(samples, dtype=float).reshape(-1, len(names))
    if samples.shape[0] == 0:
        raise IcarhUndefinedStatisticError("The draw table is empty")
    lower, upper = _interval(samples, level)
    sd = samples.std(axis=0, ddof=1) if samples.shape[0] > 1 else np.full(len(names), np.nan)
    return pd.DataFrame({
        'mean': samples.mean(axis=0),
        'sd': sd,
        'lower': lower,
        'upper': upper,
        'selected': (lower > 0) | (upper < 0),
    }, index=pd.Index(list(names), name='parameter'))


def beta_summary(draws: PosteriorDraws, tau: float, level: float = 0.95) -> pd.DataFrame:
    """
    Covariate effects beta_mk with their shrinkage coefficients.

    kappa is computed per draw from lambda_mk, sigma_beta_m and tau. A fit
    without covariates gives an empty table.
    """
    names, values = draws.block('beta')
    table = coefficient_summary(values, names, level)
    table['metabolite'] = [_inner(n).rsplit(',', 1)[0] for n in names]
    table['covariate'] = [_inner(n).rsplit(',', 1)[1] for n in names]
    if not names:
        for column in ('kappa_mean', 'kappa_lower', 'kappa_upper'):
            table[column] = pd.Series(dtype=float)
        return table

    lam = np.stack([draws.column(f"lambda[{_inner(n)}]").ravel() for n in names], axis=1)
    sigma_beta = np.stack([draws.column(f"sigma_beta[{m}]").ravel() for m in table['metabolite']], axis=1)
    k = kappa(lam, sigma_beta, tau)
    k_lower, k_upper = _interval(k, level)
    table['kappa_mean'] = k.mean(axis=0)
    table['kappa_lower'] = k_lower
    table['kappa_upper'] = k_upper
    return table


def treatment_summary(draws: PosteriorDraws, level: float = 0.95) -> pd.DataFrame:
    """
    Treatment effects beta^alpha_m of a treatment-as-covariate fit.

    Raises:
        IcarhUnsupportedModeError: If the fit has no treatment covariate
    """
    names, values = draws.block('beta_alpha')
    if not names:
        raise IcarhUnsupportedModeError("The fit was not run with a treatment covariate")
    table = coefficient_summary(values, names, level)
    table['metabolite'] = [_inner(n) for n in names]
    return table


def phi_group_summary(draws: PosteriorDraws, level: float = 0.95) -> pd.DataFrame:
    """Posterior mean, SD and interval of phi^e_p per group and pathway."""
    names, values = draws.block('phi')
    table = coefficient_summary(values, names, level)
    parts = [_inner(n).split(',', 1) for n in names]
    table['group'] = [p[0] for p in parts]
    table['pathway'] = [p[1] for p in parts]
    return table.drop(columns='selected')


def design_misspecification(data: Dataset, graph: PathwayGraph, threshold: float = 0.3) -> dict:
    """
    Share of metabolites correlated (|r| >= threshold over pooled rows) with
    at least one metabolite they share no pathway with.
    """
    if not 0 <= threshold <= 1:
        raise IcarhDomainError(f"threshold must lie in [0, 1], got {threshold}")
    m = data.n_metabolites
    rows = data.x.reshape(-1, m)
    with np.errstate(invalid='ignore', divide='ignore'):
        correlation = np.corrcoef(rows, rowvar=False) if m > 1 else np.ones((1, 1))
    correlation = np.nan_to_num(np.atleast_2d(correlation))
    z = graph.membership_matrix().astype(int)
    shared = (z @ z.T) > 0
    unexplained = (np.abs(correlation) >= threshold) & ~shared
    np.fill_diagonal(unexplained, False)
    flagged = unexplained.any(axis=1)
    partners = {
        data.metabolites[i]: [data.metabolites[j] for j in np.flatnonzero(unexplained[i])]
        for i in np.flatnonzero(flagged)
    }
    fraction = float(flagged.mean())
    logger.info(f"{fraction:.1%} of metabolites correlate with a metabolite outside their pathways")
    return {'threshold': threshold, 'fraction': fraction, 'unexplained_partners': partners}
