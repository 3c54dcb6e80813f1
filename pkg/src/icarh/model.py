"""
iCARH Model

Joint log-density of the integrative CAR horseshoe model and its analytic
gradient over an unconstrained parameterization.

    x_it ~ N(mu_it, (I - C(phi^e(i)))^-1 sigma2)
    mu_itm = alpha_m h_it + gamma_im + y_it beta_m + nu_itm
    beta_mk ~ N(0, lambda_mk^2 sigma_beta_m^2),   lambda_mk ~ St+(tau, 0, 1)
    gamma_im ~ N(0, sigma_gamma_m^2)
    nu_itm ~ N(theta_m nu_i,t-1,m, sigma_nu_m^2),  nu_i1m ~ N(0, sigma_nu_m^2 / (1 - theta_m^2))

h_it is 1, or the treatment covariate profile when treatment-as-covariate
mode replaces alpha_m by beta^alpha_m y_drug.
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy import special, stats

from .car import CarFactor, PathwayDesign
from .data import GROUP_LABELS, Dataset
from .exceptions import (
    IcarhConfigError,
    IcarhDomainError,
    IcarhNumericError,
    IcarhPositiveDefiniteError,
    IcarhSchemaError,
)
from .shrinkage import conditional_beta_mean, kappa

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
PHI_PRIORS = ('beta', 'uniform')
BLOCKS = ('phi', 'sigma2', 'alpha', 'gamma', 'nu', 'theta', 'beta', 'lam',
          'sigma_beta', 'sigma_gamma2', 'sigma_nu2')

# Notes recorded in the run manifest next to the model configuration.
DENSITY_CORRECTIONS = {
    'kappa_density': 'exponent (tau+1)/2 on (1-kappa+kappa*sigma^2) and constant 1/B(tau/2,1/2)',
    'conditional_beta_penalty': 'tau^-1 diag(kappa/(1-kappa)) = diag(1/(lambda^2 sigma_beta^2))',
    'phi_operator': 'S_p = (G_p A_p + A_p G_p)/2',
}


@dataclass
class ModelConfig:
    """
    Model hyperparameters and mode flags.

    Attributes:
        tau: Student-t degrees of freedom of the local shrinkage scales
        psi: Shape of the inverse-gamma(psi, psi - 1) prior on sigma2; None means N*T/4
        two_group: Separate phi for cases and controls
        treatment_covariate: Covariate used as the treatment profile (alpha_m = beta^alpha_m y_drug)
        phi_prior: 'beta' (beta-type prior on the admissible interval) or 'uniform'
        alpha_bounds: Support of the flat prior on alpha (or beta^alpha)
        sigma_nu2_max: Upper bound of the flat prior on sigma_nu^2
        sigma_beta_max: Upper bound of the flat prior on sigma_beta
        sigma_gamma2_shape, sigma_gamma2_scale: Inverse-gamma prior on sigma_gamma^2
        non_centered: Sample standardized subject effects and AR innovations
    """
    tau: float = 1.0
    psi: Optional[float] = None
    two_group: bool = True
    treatment_covariate: Optional[str] = None
    phi_prior: str = 'beta'
    alpha_bounds: tuple = (-10.0, 10.0)
    sigma_nu2_max: float = 10.0
    sigma_beta_max: float = 10.0
    sigma_gamma2_shape: float = 1.0
    sigma_gamma2_scale: float = 0.1
    non_centered: bool = True

    def __post_init__(self):
        self.alpha_bounds = tuple(float(b) for b in self.alpha_bounds)
        if not self.tau > 0:
            raise IcarhConfigError('model.tau', f"must be positive, got {self.tau}")
        if self.psi is not None and not self.psi > 1:
            raise IcarhConfigError('model.psi', f"must exceed 1, got {self.psi}")
        if self.phi_prior not in PHI_PRIORS:
            raise IcarhConfigError('model.phi_prior', f"must be one of {PHI_PRIORS}, got {self.phi_prior!r}")
        if len(self.alpha_bounds) != 2 or not self.alpha_bounds[0] < self.alpha_bounds[1]:
            raise IcarhConfigError('model.alpha_bounds', f"must be an increasing pair, got {self.alpha_bounds}")
        for name in ('sigma_nu2_max', 'sigma_beta_max', 'sigma_gamma2_shape', 'sigma_gamma2_scale'):
            if not getattr(self, name) > 0:
                raise IcarhConfigError(f'model.{name}', "must be positive")

    def resolve(self, data: Dataset) -> 'ModelConfig':
        """Copy with psi materialised (N*T/4 when unset)."""
        if self.psi is not None:
            return self
        psi = data.n_subjects * data.n_times / 4.0
        if not psi > 1:
            raise IcarhConfigError('model.psi', f"default N*T/4 = {psi} must exceed 1; set psi explicitly")
        values = asdict(self)
        values['psi'] = psi
        return ModelConfig(**values)

    def to_dict(self) -> dict:
        values = asdict(self)
        values['alpha_bounds'] = list(self.alpha_bounds)
        values['density_corrections'] = dict(DENSITY_CORRECTIONS)
        return values

    @classmethod
    def from_dict(cls, values: dict) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


@dataclass(frozen=True)
class ParameterLayout:
    """Shapes of the parameter blocks; the flat dimension is a pure function of these counts."""
    n_subjects: int
    n_times: int
    n_metabolites: int
    n_covariates: int
    n_pathways: int
    n_groups: int

    @property
    def shapes(self) -> 'OrderedDict':
        n, t, m, k = self.n_subjects, self.n_times, self.n_metabolites, self.n_covariates
        return OrderedDict([
            ('phi', (self.n_groups, self.n_pathways)),
            ('sigma2', ()),
            ('alpha', (m,)),
            ('gamma', (n, m)),
            ('nu', (n, t, m)),
            ('theta', (m,)),
            ('beta', (m, k)),
            ('lam', (m, k)),
            ('sigma_beta', (m if k > 0 else 0,)),
            ('sigma_gamma2', (m,)),
            ('sigma_nu2', (m,)),
        ])

    @property
    def slices(self) -> dict:
        out, start = {}, 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape, dtype=int))
            out[name] = slice(start, start + size)
            start += size
        return out

    @property
    def dimension(self) -> int:
        return sum(int(np.prod(s, dtype=int)) for s in self.shapes.values())

    def split(self, vector: np.ndarray) -> dict:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.dimension,):
            raise IcarhNumericError(f"Expected a vector of length {self.dimension}, got shape {vector.shape}")
        return {name: vector[self.slices[name]].reshape(shape) for name, shape in self.shapes.items()}


@dataclass
class ParameterState:
    """
    All model unknowns in constrained coordinates.

    `alpha` holds beta^alpha in treatment-as-covariate mode; `phi` has one row
    per group (cases, controls) or a single row in single-group mode.
    """
    phi: np.ndarray
    sigma2: float
    alpha: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    sigma_beta: np.ndarray
    sigma_gamma2: np.ndarray
    sigma_nu2: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, name)) for name in BLOCKS])

    @classmethod
    def from_flat(cls, layout: ParameterLayout, vector: np.ndarray) -> 'ParameterState':
        blocks = layout.split(vector)
        blocks['sigma2'] = float(blocks['sigma2'])
        return cls(**blocks)


POSITIVE_BLOCKS = ('lam', 'sigma_beta', 'sigma_gamma2', 'sigma_nu2')


class IcarhModel:
    """
    Posterior of the iCARH model for one dataset and pathway design.

    Exposes the constrained joint density (log_joint) and the unconstrained
    target used by the sampler (log_density_and_gradient), with

        target(q) = log_joint(untransform(q)) + log|d untransform / dq|.
    """

    def __init__(self, data: Dataset, design: PathwayDesign, cfg: Optional[ModelConfig] = None):
        cfg = (cfg or ModelConfig()).resolve(data)
        if design.n_metabolites != data.n_metabolites:
            raise IcarhSchemaError(
                f"Pathway design covers {design.n_metabolites} metabolites, dataset has {data.n_metabolites}")
        if cfg.two_group:
            data.require_both_groups()

        self.data = data
        self.design = design
        self.cfg = cfg
        self.x = data.x
        if cfg.treatment_covariate:
            k = data.covariate_index(cfg.treatment_covariate)
            self.exposure = data.y[:, :, k]
            self.y = np.delete(data.y, k, axis=2)
            self.covariates = tuple(c for j, c in enumerate(data.covariates) if j != k)
        else:
            self.exposure = np.ones(data.x.shape[:2])
            self.y = data.y
            self.covariates = data.covariates

        self.groups = data.group_index(cfg.two_group)
        n_groups = 2 if cfg.two_group else 1
        self.members = [np.flatnonzero(self.groups == g) for g in range(n_groups)]
        self.group_names = GROUP_LABELS if cfg.two_group else ('all',)
        self.layout = ParameterLayout(data.n_subjects, data.n_times, data.n_metabolites,
                                      self.y.shape[2], design.n_pathways, n_groups)
        self.parameter_names = self._parameter_names()
        logger.debug(f"Model dimension {self.dimension} ({self.layout})")

    @property
    def dimension(self) -> int:
        return self.layout.dimension

    def _parameter_names(self) -> list:
        d, mets = self.data, self.data.metabolites
        alpha = 'beta_alpha' if self.cfg.treatment_covariate else 'alpha'
        names = [f"phi[{g},{p}]" for g in self.group_names for p in self.design.pathway_ids]
        names.append('sigma2')
        names += [f"{alpha}[{m}]" for m in mets]
        names += [f"gamma[{s},{m}]" for s in d.subjects for m in mets]
        names += [f"nu[{s},{t + 1},{m}]" for s in d.subjects for t in range(d.n_times) for m in mets]
        names += [f"theta[{m}]" for m in mets]
        names += [f"beta[{m},{k}]" for m in mets for k in self.covariates]
        names += [f"lambda[{m},{k}]" for m in mets for k in self.covariates]
        if self.covariates:
            names += [f"sigma_beta[{m}]" for m in mets]
        names += [f"sigma_gamma2[{m}]" for m in mets]
        names += [f"sigma_nu2[{m}]" for m in mets]
        return names

    # -- transforms ---------------------------------------------------------

    def _phi_bounds(self):
        return self.design.lower[None, :], self.design.upper[None, :]

    def untransform(self, vector: np.ndarray) -> tuple:
        """
        Map an unconstrained vector to a ParameterState.

        Returns:
            (ParameterState, log-Jacobian of the map)
        """
        vector = np.asarray(vector, dtype=float)
        if not np.all(np.isfinite(vector)):
            raise IcarhNumericError("Unconstrained vector contains non-finite values")
        b = self.layout.split(vector)
        lo, hi = self._phi_bounds()
        phi = lo + (hi - lo) * special.expit(b['phi'])
        log_jac = np.sum(np.log(hi - lo) + special.log_expit(b['phi']) + special.log_expit(-b['phi']))

        sigma2 = float(np.exp(b['sigma2']))
        log_jac += float(b['sigma2'])

        theta = 2.0 * special.expit(b['theta']) - 1.0
        log_one_minus_theta2 = np.log(4.0) + special.log_expit(b['theta']) + special.log_expit(-b['theta'])
        log_jac += np.sum(np.log(2.0) + special.log_expit(b['theta']) + special.log_expit(-b['theta']))

        positive = {}
        for name in POSITIVE_BLOCKS:
            positive[name] = np.exp(b[name])
            log_jac += np.sum(b[name])

        gamma, nu = b['gamma'], b['nu']
        if self.cfg.non_centered:
            n, t = self.layout.n_subjects, self.layout.n_times
            gamma = np.sqrt(positive['sigma_gamma2'])[None, :] * gamma
            nu = self._ar_forward(nu, theta, np.sqrt(positive['sigma_nu2']), log_one_minus_theta2)
            log_jac += 0.5 * n * np.sum(b['sigma_gamma2'])
            log_jac += n * np.sum(0.5 * t * b['sigma_nu2'] - 0.5 * log_one_minus_theta2)

        state = ParameterState(phi=phi, sigma2=sigma2, alpha=b['alpha'].copy(), gamma=gamma, nu=nu,
                               theta=theta, beta=b['beta'].copy(), **positive)
        return state, float(log_jac)

    @staticmethod
    def _ar_forward(eta: np.ndarray, theta: np.ndarray, sigma_nu: np.ndarray,
                    log_one_minus_theta2: np.ndarray) -> np.ndarray:
        nu = np.empty_like(eta)
        nu[:, 0] = sigma_nu * np.exp(-0.5 * log_one_minus_theta2) * eta[:, 0]
        for t in range(1, eta.shape[1]):
            nu[:, t] = theta * nu[:, t - 1] + sigma_nu * eta[:, t]
        return nu

    def transform(self, state: ParameterState) -> np.ndarray:
        """Map a constrained ParameterState to the unconstrained vector."""
        flat = state.flatten()
        if not np.all(np.isfinite(flat)):
            raise IcarhNumericError("Parameter state contains non-finite values")
        if not self._in_support(state):
            raise IcarhDomainError("Parameter state lies outside the model support")
        lo, hi = self._phi_bounds()
        blocks = OrderedDict()
        blocks['phi'] = special.logit((state.phi - lo) / (hi - lo))
        blocks['sigma2'] = np.log(state.sigma2)
        blocks['alpha'] = state.alpha
        gamma, nu = state.gamma, state.nu
        if self.cfg.non_centered:
            gamma = gamma / np.sqrt(state.sigma_gamma2)[None, :]
            sigma_nu = np.sqrt(state.sigma_nu2)
            eta = np.empty_like(nu)
            eta[:, 0] = nu[:, 0] * np.sqrt(1.0 - state.theta ** 2) / sigma_nu
            eta[:, 1:] = (nu[:, 1:] - state.theta * nu[:, :-1]) / sigma_nu
            nu = eta
        blocks['gamma'] = gamma
        blocks['nu'] = nu
        blocks['theta'] = special.logit((state.theta + 1.0) / 2.0)
        blocks['beta'] = state.beta
        for name in POSITIVE_BLOCKS:
            blocks[name] = np.log(getattr(state, name))
        return np.concatenate([np.ravel(v) for v in blocks.values()])

    def constrain(self, vector: np.ndarray) -> np.ndarray:
        """Flat constrained vector for an unconstrained point (the draw-table row)."""
        return self.untransform(vector)[0].flatten()

    def state_from_flat(self, values: np.ndarray) -> ParameterState:
        return ParameterState.from_flat(self.layout, values)

    # -- density ------------------------------------------------------------

    def _in_support(self, st: ParameterState) -> bool:
        cfg = self.cfg
        with np.errstate(invalid='ignore'):
            checks = (
                np.all(np.isfinite(st.flatten())),
                all(self.design.in_bounds(row) for row in st.phi),
                st.sigma2 > 0,
                np.all(np.abs(st.theta) < 1),
                np.all(st.alpha >= cfg.alpha_bounds[0]) and np.all(st.alpha <= cfg.alpha_bounds[1]),
                np.all(st.lam > 0),
                np.all(st.sigma_beta > 0) and np.all(st.sigma_beta <= cfg.sigma_beta_max),
                np.all(st.sigma_gamma2 > 0),
                np.all(st.sigma_nu2 > 0) and np.all(st.sigma_nu2 <= cfg.sigma_nu2_max),
            )
        return bool(all(checks))

    def mean(self, st: ParameterState) -> np.ndarray:
        """mu, shape (N, T, M)."""
        return (st.alpha[None, None, :] * self.exposure[:, :, None]
                + st.gamma[:, None, :]
                + np.einsum('itk,mk->itm', self.y, st.beta)
                + st.nu)

    def _factors(self, st: ParameterState) -> list:
        return [CarFactor(st.phi[g], self.design, check=False) for g in range(self.layout.n_groups)]

    def pointwise_log_likelihood(self, st: ParameterState) -> np.ndarray:
        """log N(x_it | mu_it, (I - C(phi^e))^-1 sigma2) for every (i, t), shape (N, T)."""
        residuals = self.x - self.mean(st)
        out = np.empty(self.x.shape[:2])
        for g, factor in enumerate(self._factors(st)):
            idx = self.members[g]
            rows = residuals[idx].reshape(-1, self.layout.n_metabolites)
            out[idx] = factor.logpdf(rows, st.sigma2).reshape(len(idx), self.layout.n_times)
        return out

    def log_joint(self, st: ParameterState) -> float:
        """Joint log-density in constrained coordinates; -inf outside the support."""
        value, _ = self._evaluate(st, gradient=False)
        return value

    def _evaluate(self, st: ParameterState, gradient: bool) -> tuple:
        if not self._in_support(st):
            return -np.inf, None
        cfg, design, lay = self.cfg, self.design, self.layout
        n, t, m = lay.n_subjects, lay.n_times, lay.n_metabolites
        s2 = st.sigma2
        residuals = self.x - self.mean(st)
        w = np.zeros_like(residuals)
        g_phi = np.zeros_like(st.phi)
        g_s2 = 0.0
        logp = 0.0

        for g in range(lay.n_groups):
            idx = self.members[g]
            if len(idx) == 0:
                continue
            try:
                factor = CarFactor(st.phi[g], design, check=False)
            except IcarhPositiveDefiniteError:
                return -np.inf, None
            rows = residuals[idx].reshape(-1, m)
            n_obs = rows.shape[0]
            weighted = rows @ factor.precision
            quad = float(np.sum(weighted * rows))
            logp += n_obs * (-0.5 * m * LOG_2PI - 0.5 * m * np.log(s2) + 0.5 * factor.logdet) - 0.5 * quad / s2
            if gradient:
                w[idx] = (weighted / s2).reshape(len(idx), t, m)
                scatter = rows.T @ rows
                g_phi[g] = (-0.5 * n_obs * np.einsum('ij,pij->p', factor.inverse(), design.operators)
                            + 0.5 / s2 * np.einsum('ij,pij->p', scatter, design.operators))
                g_s2 += -0.5 * n_obs * m / s2 + 0.5 * quad / s2 ** 2

        # phi prior
        lo, hi = self._phi_bounds()
        if cfg.phi_prior == 'beta':
            logp += np.sum(-special.betaln(0.5, 0.5) - 0.5 * np.log(st.phi - lo) - 0.5 * np.log(hi - st.phi))
            g_phi += -0.5 / (st.phi - lo) + 0.5 / (hi - st.phi)
        else:
            logp += -lay.n_groups * np.sum(np.log(hi - lo))

        # sigma2 ~ inverse-gamma(psi, psi - 1)
        psi = cfg.psi
        logp += (psi * np.log(psi - 1.0) - special.gammaln(psi)
                 - (psi + 1.0) * np.log(s2) - (psi - 1.0) / s2)
        g_s2 += -(psi + 1.0) / s2 + (psi - 1.0) / s2 ** 2

        # flat priors: alpha, theta, sigma_nu2 and (with covariates) sigma_beta
        logp += -m * np.log(cfg.alpha_bounds[1] - cfg.alpha_bounds[0])
        logp += -m * np.log(2.0)
        logp += -m * np.log(cfg.sigma_nu2_max)
        if lay.n_covariates > 0:
            logp += -m * np.log(cfg.sigma_beta_max)

        # subject effects
        sg2 = st.sigma_gamma2
        logp += np.sum(-0.5 * LOG_2PI - 0.5 * np.log(sg2)[None, :] - 0.5 * st.gamma ** 2 / sg2[None, :])
        a0, b0 = cfg.sigma_gamma2_shape, cfg.sigma_gamma2_scale
        logp += np.sum(a0 * np.log(b0) - special.gammaln(a0) - (a0 + 1.0) * np.log(sg2) - b0 / sg2)

        # AR(1) temporal effects with stationary start
        theta, sn2, nu = st.theta, st.sigma_nu2, st.nu
        one_minus = 1.0 - theta ** 2
        innovations = nu[:, 1:] - theta * nu[:, :-1]
        first_sq = np.sum(nu[:, 0] ** 2, axis=0)
        innov_sq = np.sum(innovations ** 2, axis=(0, 1))
        logp += np.sum(-0.5 * n * t * LOG_2PI - 0.5 * n * t * np.log(sn2) + 0.5 * n * np.log(one_minus)
                       - (one_minus * first_sq + innov_sq) / (2.0 * sn2))

        # horseshoe block
        k_count = lay.n_covariates
        if k_count > 0:
            lam, sb, beta, tau = st.lam, st.sigma_beta, st.beta, cfg.tau
            prior_var = lam ** 2 * sb[:, None] ** 2
            logp += np.sum(-0.5 * LOG_2PI - 0.5 * np.log(prior_var) - 0.5 * beta ** 2 / prior_var)
            logp += np.sum(np.log(2.0) + special.gammaln((tau + 1.0) / 2.0) - special.gammaln(tau / 2.0)
                           - 0.5 * np.log(tau * np.pi) - 0.5 * (tau + 1.0) * np.log1p(lam ** 2 / tau))

        if not gradient:
            return float(logp), None

        grads = {'phi': g_phi, 'sigma2': g_s2}
        grads['alpha'] = np.einsum('itm,it->m', w, self.exposure)
        grads['gamma'] = w.sum(axis=1) - st.gamma / sg2[None, :]
        grads['sigma_gamma2'] = (np.sum(-0.5 / sg2[None, :] + 0.5 * st.gamma ** 2 / sg2[None, :] ** 2, axis=0)
                                 - (a0 + 1.0) / sg2 + b0 / sg2 ** 2)

        g_nu = w.copy()
        g_nu[:, 0] -= one_minus * nu[:, 0] / sn2
        g_nu[:, 1:] -= innovations / sn2
        g_nu[:, :-1] += theta * innovations / sn2
        grads['nu'] = g_nu
        grads['theta'] = (-n * theta / one_minus
                          + (theta * first_sq + np.sum(innovations * nu[:, :-1], axis=(0, 1))) / sn2)
        grads['sigma_nu2'] = -0.5 * n * t / sn2 + (one_minus * first_sq + innov_sq) / (2.0 * sn2 ** 2)

        if k_count > 0:
            grads['beta'] = np.einsum('itm,itk->mk', w, self.y) - beta / prior_var
            grads['lam'] = (-1.0 / lam + beta ** 2 / (lam ** 3 * sb[:, None] ** 2)
                            - (tau + 1.0) * lam / (tau + lam ** 2))
            grads['sigma_beta'] = np.sum(-1.0 / sb[:, None] + beta ** 2 / (lam ** 2 * sb[:, None] ** 3), axis=1)
        else:
            grads['beta'] = np.zeros_like(st.beta)
            grads['lam'] = np.zeros_like(st.lam)
            grads['sigma_beta'] = np.zeros_like(st.sigma_beta)
        return float(logp), grads

    def log_density(self, vector: np.ndarray) -> float:
        """Unconstrained target: log_joint(untransform(q)) + log-Jacobian."""
        state, log_jac = self.untransform(vector)
        return self.log_joint(state) + log_jac

    def log_density_and_gradient(self, vector: np.ndarray) -> tuple:
        """
        Unconstrained target and its exact gradient.

        Returns:
            (log-density, gradient); the log-density is -inf and the gradient
            zero outside the support
        """
        state, log_jac = self.untransform(vector)
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            logp, g = self._evaluate(state, gradient=True)
        if g is None or not np.isfinite(logp):
            return -np.inf, np.zeros(self.dimension)

        b = self.layout.split(vector)
        out = OrderedDict()
        lo, hi = self._phi_bounds()
        s_phi = special.expit(b['phi'])
        out['phi'] = g['phi'] * (hi - lo) * s_phi * (1.0 - s_phi) + (1.0 - 2.0 * s_phi)
        out['sigma2'] = np.atleast_1d(g['sigma2'] * state.sigma2 + 1.0)
        out['alpha'] = g['alpha']

        theta = state.theta
        g_theta = g['theta']
        g_sg2 = g['sigma_gamma2'] * state.sigma_gamma2 + 1.0
        g_sn2 = g['sigma_nu2'] * state.sigma_nu2 + 1.0
        extra_theta_u = 0.0
        if self.cfg.non_centered:
            n, t = self.layout.n_subjects, self.layout.n_times
            sigma_gamma = np.sqrt(state.sigma_gamma2)
            out['gamma'] = g['gamma'] * sigma_gamma[None, :]
            g_sg2 = g_sg2 + 0.5 * np.sum(g['gamma'] * state.gamma, axis=0) + 0.5 * n

            # reverse pass through nu_t = theta nu_t-1 + sigma_nu eta_t
            g_nu, nu = g['nu'], state.nu
            adjoint = np.empty_like(g_nu)
            adjoint[:, -1] = g_nu[:, -1]
            for step in range(t - 2, -1, -1):
                adjoint[:, step] = g_nu[:, step] + theta * adjoint[:, step + 1]
            sigma_nu = np.sqrt(state.sigma_nu2)
            g_eta = adjoint * sigma_nu
            g_eta[:, 0] = adjoint[:, 0] * sigma_nu / np.sqrt(1.0 - theta ** 2)
            out['nu'] = g_eta
            g_theta = (g_theta + np.sum(adjoint[:, 1:] * nu[:, :-1], axis=(0, 1))
                       + np.sum(adjoint[:, 0] * nu[:, 0], axis=0) * theta / (1.0 - theta ** 2))
            g_sn2 = g_sn2 + 0.5 * np.sum(g_nu * nu, axis=(0, 1)) + 0.5 * n * t
            extra_theta_u = 0.5 * n * theta
        else:
            out['gamma'] = g['gamma']
            out['nu'] = g['nu']

        out['theta'] = g_theta * (1.0 - theta ** 2) / 2.0 - theta + extra_theta_u
        out['beta'] = g['beta']
        out['lam'] = g['lam'] * state.lam + 1.0
        out['sigma_beta'] = g['sigma_beta'] * state.sigma_beta + 1.0
        out['sigma_gamma2'] = g_sg2
        out['sigma_nu2'] = g_sn2
        gradient = np.concatenate([np.ravel(v) for v in out.values()])
        return logp + log_jac, gradient

    # -- derived quantities ---------------------------------------------------

    def initial_point(self, rng: np.random.Generator, jitter: float = 1.0) -> np.ndarray:
        """
        Prior-median-derived unconstrained point plus uniform(-jitter, jitter) noise.

        Proper priors contribute their median; flat-prior scales start at 1.
        """
        center = {name: np.zeros(shape) for name, shape in self.layout.shapes.items()}
        center['sigma2'] = np.log(stats.invgamma(self.cfg.psi, scale=self.cfg.psi - 1.0).median())
        center['sigma_gamma2'][:] = np.log(stats.invgamma(self.cfg.sigma_gamma2_shape,
                                                          scale=self.cfg.sigma_gamma2_scale).median())
        center['lam'][:] = np.log(stats.t(self.cfg.tau).ppf(0.75))
        vector = np.concatenate([np.ravel(center[name]) for name in self.layout.shapes])
        return vector + rng.uniform(-jitter, jitter, size=vector.shape)

    def simulate(self, st: ParameterState, rng: np.random.Generator) -> np.ndarray:
        """Posterior predictive replicate of x given a parameter state, shape (N, T, M)."""
        mu = self.mean(st)
        out = np.empty_like(mu)
        t, m = self.layout.n_times, self.layout.n_metabolites
        for g, factor in enumerate(self._factors(st)):
            idx = self.members[g]
            noise = factor.sample(rng, st.sigma2, len(idx) * t)
            out[idx] = mu[idx] + noise.reshape(len(idx), t, m)
        return out

    def conditional_beta_mean(self, st: ParameterState, metabolite: int) -> np.ndarray:
        """Ridge-analogy conditional mean of beta_m at this state (response: mu_m net of the intercept)."""
        m = metabolite
        if self.layout.n_covariates == 0:
            return np.zeros(0)
        response = self.mean(st)[:, :, m] - st.alpha[m] * self.exposure
        kappa_m = kappa(st.lam[m], st.sigma_beta[m], self.cfg.tau)
        return conditional_beta_mean(self.y, response, st.sigma_nu2[m], st.theta[m],
                                     st.sigma_gamma2[m], kappa_m, self.cfg.tau)


def transform(state: ParameterState, data: Dataset, design: PathwayDesign,
              cfg: Optional[ModelConfig] = None) -> np.ndarray:
    """Constrained state to unconstrained vector."""
    return IcarhModel(data, design, cfg).transform(state)


def untransform(vector: np.ndarray, data: Dataset, design: PathwayDesign,
                cfg: Optional[ModelConfig] = None) -> tuple:
    """Unconstrained vector to (constrained state, log-Jacobian)."""
    return IcarhModel(data, design, cfg).untransform(vector)


def log_joint(state: ParameterState, data: Dataset, design: PathwayDesign,
              cfg: Optional[ModelConfig] = None) -> float:
    """Joint log-density of the iCARH model; -inf outside the support."""
    return IcarhModel(data, design, cfg).log_joint(state)


def grad_log_joint(state: ParameterState, data: Dataset, design: PathwayDesign,
                   cfg: Optional[ModelConfig] = None) -> np.ndarray:
    """Gradient of log_joint(untransform(q)) + log-Jacobian with respect to q = transform(state)."""
    model = IcarhModel(data, design, cfg)
    return model.log_density_and_gradient(model.transform(state))[1]
