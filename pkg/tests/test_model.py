"""Tests for the iCARH joint density, transforms and gradient."""

from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from icarh.car import build_pathway_design, car_gaussian_logpdf, car_matrix
from icarh.data import Dataset, build_pathway_graph
from icarh.exceptions import IcarhConfigError, IcarhDomainError, IcarhSchemaError
from icarh.model import (
    BLOCKS,
    IcarhModel,
    ModelConfig,
    ParameterState,
    grad_log_joint,
    log_joint,
    transform,
    untransform,
)

from tests.fixtures.synthetic import make_dataset, make_problem


MODES = {
    'non_centered': dict(non_centered=True),
    'centered': dict(non_centered=False),
    'uniform_phi': dict(phi_prior='uniform'),
    'single_group': dict(two_group=False),
    'treatment': dict(treatment_covariate='b1'),
}


def build_model(k=2, **overrides):
    data, _, design = make_problem(n=4, t=3, m=4, k=k, p=2, seed=7)
    cfg = ModelConfig(tau=1.5, psi=3.0, **overrides)
    return IcarhModel(data, design, cfg)


def numeric_gradient(model, q, h=1e-5):
    out = np.empty_like(q)
    for i in range(q.size):
        step = np.zeros_like(q)
        step[i] = h
        out[i] = (model.log_density(q + step) - model.log_density(q - step)) / (2 * h)
    return out


def five_point_gradient(model, q, h=1e-3):
    """Central five-point stencil, O(h^4) truncation."""
    out = np.empty_like(q)
    for i in range(q.size):
        step = np.zeros_like(q)
        step[i] = h
        f = [model.log_density(q + c * step) for c in (-2, -1, 1, 2)]
        out[i] = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
    return out


def ar1_log_density(nu, theta, sigma_nu2):
    """Stationary AR(1) log-density of an (N, T) array of one metabolite's series."""
    sd = np.sqrt(sigma_nu2)
    value = np.sum(stats.norm.logpdf(nu[:, 0], 0.0, sd / np.sqrt(1.0 - theta ** 2)))
    return value + np.sum(stats.norm.logpdf(nu[:, 1:], theta * nu[:, :-1], sd))


def car_mixed_model_log_joint(model, state):
    """Joint density of the CAR mixed model without covariates, term by term from scipy densities."""
    data, design, cfg = model.data, model.design, model.cfg
    m = data.n_metabolites
    value = 0.0
    for i in range(data.n_subjects):
        phi = state.phi[model.group_names.index(data.group[i])]
        mu = state.alpha + state.gamma[i] + state.nu[i]
        value += np.sum(car_gaussian_logpdf(data.x[i], mu, phi, state.sigma2, design)[0])
    for row in state.phi:
        value += np.sum(stats.beta(0.5, 0.5, loc=design.lower, scale=design.upper - design.lower).logpdf(row))
    value += stats.invgamma(cfg.psi, scale=cfg.psi - 1.0).logpdf(state.sigma2)
    value += m * (stats.uniform(-10.0, 20.0).logpdf(0.0) + stats.uniform(-1.0, 2.0).logpdf(0.0)
                  + stats.uniform(0.0, 10.0).logpdf(1.0))
    value += np.sum(stats.norm.logpdf(state.gamma, 0.0, np.sqrt(state.sigma_gamma2)))
    value += np.sum(stats.invgamma(1.0, scale=0.1).logpdf(state.sigma_gamma2))
    for j in range(m):
        value += ar1_log_density(state.nu[:, :, j], state.theta[j], state.sigma_nu2[j])
    return value


def relabelled(data, group=None, order=None):
    """Dataset with new group labels and/or subjects reordered."""
    order = np.arange(data.n_subjects) if order is None else np.asarray(order)
    group = data.group if group is None else group
    return Dataset(data.x[order], data.y[order], [group[i] for i in order],
                   [data.subjects[i] for i in order], data.metabolites, data.covariates)


@pytest.mark.unit
class TestModelConfig:
    """Tests for model configuration validation."""

    def test_defaults(self):
        cfg = ModelConfig()

        assert cfg.tau == 1.0
        assert cfg.psi is None
        assert cfg.two_group
        assert cfg.non_centered

    @pytest.mark.parametrize('field,value', [
        ('tau', 0.0), ('psi', 1.0), ('phi_prior', 'gaussian'), ('alpha_bounds', (1.0, -1.0)), ('sigma_nu2_max', -1.0),
    ])
    def test_invalid_values_name_the_field(self, field, value):
        with pytest.raises(IcarhConfigError) as excinfo:
            ModelConfig(**{field: value})

        assert excinfo.value.field == f"model.{field}"

    def test_default_psi_is_quarter_of_observations(self):
        data = make_dataset(n=4, t=3)

        assert ModelConfig().resolve(data).psi == 3.0

    def test_default_psi_too_small(self):
        data = make_dataset(n=2, t=2)

        with pytest.raises(IcarhConfigError):
            ModelConfig().resolve(data)

    def test_dict_round_trip(self):
        cfg = ModelConfig(tau=2.0, psi=4.0, two_group=False, phi_prior='uniform')

        values = cfg.to_dict()

        assert 'density_corrections' in values
        assert ModelConfig.from_dict(values) == cfg


@pytest.mark.unit
class TestLayout:
    """Tests for the parameter layout and naming."""

    def test_dimension_formula(self):
        """2P + 1 + M + NM + NTM + M + 2MK + M + M + M for two groups."""
        model = build_model()
        n, t, m, k, p = 4, 3, 4, 2, 2

        assert model.dimension == 2 * p + 1 + m + n * m + n * t * m + m + 2 * m * k + m + m + m
        assert len(model.parameter_names) == model.dimension

    def test_no_covariates_drops_sigma_beta(self):
        model = build_model(k=0)

        assert model.layout.shapes['sigma_beta'] == (0,)
        assert not any(name.startswith('sigma_beta') for name in model.parameter_names)
        assert len(model.parameter_names) == model.dimension

    def test_treatment_mode_renames_alpha(self):
        model = build_model(treatment_covariate='b1')

        assert 'beta_alpha[m1]' in model.parameter_names
        assert model.covariates == ('b2',)
        assert model.layout.n_covariates == 1

    def test_unknown_treatment_covariate(self):
        with pytest.raises(IcarhSchemaError):
            build_model(treatment_covariate='nope')

    def test_two_group_needs_both_groups(self):
        data = make_dataset(n=4, t=3, m=6, groups=['cases'] * 4)
        _, _, design = make_problem(n=4, t=3, m=6)

        with pytest.raises(IcarhSchemaError, match='controls'):
            IcarhModel(data, design, ModelConfig(psi=3.0))

    def test_state_flatten_round_trip(self, rng):
        model = build_model()
        values = rng.standard_normal(model.dimension)

        state = ParameterState.from_flat(model.layout, values)

        np.testing.assert_array_equal(state.flatten(), values)
        assert list(model.layout.shapes) == list(BLOCKS)


@pytest.mark.unit
class TestTransforms:
    """Tests for the unconstrained parameterization."""

    @pytest.mark.parametrize('mode', ['non_centered', 'centered'])
    def test_transform_inverts_untransform(self, mode, rng):
        model = build_model(**MODES[mode])
        q = model.initial_point(rng, jitter=1.0)

        state, _ = model.untransform(q)

        np.testing.assert_allclose(model.transform(state), q, atol=1e-9)

    @pytest.mark.parametrize('mode', ['non_centered', 'centered'])
    def test_log_jacobian_matches_numeric_jacobian(self, mode, rng):
        model = build_model(**MODES[mode])
        q = model.initial_point(rng, jitter=0.5)
        h = 1e-6

        jacobian = np.empty((model.dimension, model.dimension))
        for i in range(model.dimension):
            step = np.zeros_like(q)
            step[i] = h
            jacobian[:, i] = (model.constrain(q + step) - model.constrain(q - step)) / (2 * h)
        sign, logdet = np.linalg.slogdet(jacobian)

        assert sign > 0
        assert model.untransform(q)[1] == pytest.approx(logdet, abs=1e-5)

    def test_phi_stays_inside_the_box(self, rng):
        model = build_model()
        q = model.initial_point(rng) * 20

        state, _ = model.untransform(q)

        assert all(model.design.in_bounds(row) for row in state.phi)
        assert np.all(np.abs(state.theta) <= 1)

    def test_transform_rejects_outside_support(self, rng):
        model = build_model()
        state, _ = model.untransform(model.initial_point(rng))
        state.theta = np.full_like(state.theta, 1.5)

        with pytest.raises(IcarhDomainError):
            model.transform(state)


@pytest.mark.unit
class TestDensity:
    """Tests for the joint density and its gradient."""

    @pytest.mark.parametrize('mode', sorted(MODES))
    def test_gradient_matches_finite_differences(self, mode, rng):
        model = build_model(**MODES[mode])
        q = model.initial_point(rng, jitter=0.5)

        value, gradient = model.log_density_and_gradient(q)

        assert value == pytest.approx(model.log_density(q), rel=1e-12)
        np.testing.assert_allclose(gradient, numeric_gradient(model, q), rtol=1e-5, atol=1e-5)

    def test_gradient_on_random_states(self, small_problem, rng):
        """20 random states at N=4, T=3, M=6, K=2, P=3."""
        data, _, design = small_problem
        model = IcarhModel(data, design, ModelConfig(tau=1.5))

        for _ in range(20):
            q = model.initial_point(rng, jitter=1.0)
            _, gradient = model.log_density_and_gradient(q)
            np.testing.assert_allclose(gradient, five_point_gradient(model, q), rtol=1e-5, atol=1e-8)

    def test_gradient_without_covariates(self, rng):
        model = build_model(k=0)
        q = model.initial_point(rng, jitter=0.5)

        _, gradient = model.log_density_and_gradient(q)

        np.testing.assert_allclose(gradient, numeric_gradient(model, q), rtol=1e-5, atol=1e-5)

    def test_outside_support_is_minus_infinity(self, rng):
        model = build_model()
        q = model.initial_point(rng)
        q[model.layout.slices['sigma_nu2']] = np.log(50.0)

        value, gradient = model.log_density_and_gradient(q)

        assert value == -np.inf
        assert not np.any(gradient)

    def test_log_joint_outside_support(self, rng):
        model = build_model()
        state, _ = model.untransform(model.initial_point(rng))
        state.sigma2 = -1.0

        assert model.log_joint(state) == -np.inf

    def test_pointwise_log_likelihood_matches_dense_normal(self, rng):
        model = build_model()
        state, _ = model.untransform(model.initial_point(rng))

        pointwise = model.pointwise_log_likelihood(state)

        mu = model.mean(state)
        for i in range(model.layout.n_subjects):
            phi = state.phi[model.groups[i]]
            covariance = np.linalg.inv(np.eye(4) - car_matrix(phi, model.design)) * state.sigma2
            for t in range(model.layout.n_times):
                expected = stats.multivariate_normal(mu[i, t], covariance).logpdf(model.x[i, t])
                assert pointwise[i, t] == pytest.approx(expected, rel=1e-10)

    def test_cases_use_their_own_phi(self):
        """Controls are the first half of the subjects and read phi row 1."""
        model = build_model()

        assert model.groups.tolist() == [1, 1, 0, 0]
        assert model.group_names == ('cases', 'controls')

    def test_module_level_functions_agree(self, rng):
        data, _, design = make_problem(n=4, t=3, m=4, k=2, p=2, seed=7)
        cfg = ModelConfig(tau=1.5, psi=3.0)
        model = IcarhModel(data, design, cfg)
        q = model.initial_point(rng)
        state, log_jac = untransform(q, data, design, cfg)

        np.testing.assert_allclose(transform(state, data, design, cfg), q, atol=1e-9)
        assert log_joint(state, data, design, cfg) + log_jac == pytest.approx(model.log_density(q))
        np.testing.assert_allclose(grad_log_joint(state, data, design, cfg),
                                   model.log_density_and_gradient(q)[1], rtol=1e-6, atol=1e-8)

    def test_simulate_shape(self, rng):
        model = build_model()
        state, _ = model.untransform(model.initial_point(rng))

        replicate = model.simulate(state, rng)

        assert replicate.shape == model.x.shape
        assert np.all(np.isfinite(replicate))

    def test_conditional_beta_mean_length(self, rng):
        model = build_model()
        state, _ = model.untransform(model.initial_point(rng))

        assert model.conditional_beta_mean(state, 0).shape == (2,)
        assert build_model(k=0).conditional_beta_mean(state, 0).shape == (0,)


@pytest.mark.unit
class TestDensityOracles:
    """The joint density against hand-built references and its symmetries."""

    def test_scalar_model(self):
        """One metabolite, no covariates, an inert pathway and unit variances."""
        data = make_dataset(n=2, t=3, m=1, k=0, seed=9)
        design = build_pathway_design(build_pathway_graph([('p1', ['m1'], [])], data.metabolites))
        cfg = ModelConfig(psi=3.0)
        gamma = np.array([[0.2], [-0.4]])
        nu = np.array([[[0.1], [0.3], [-0.2]], [[-0.5], [0.0], [0.4]]])
        state = ParameterState(
            phi=np.zeros((2, 1)), sigma2=1.0, alpha=np.array([0.3]), gamma=gamma, nu=nu,
            theta=np.array([0.5]), beta=np.zeros((1, 0)), lam=np.zeros((1, 0)),
            sigma_beta=np.zeros(0), sigma_gamma2=np.ones(1), sigma_nu2=np.ones(1),
        )

        mu = 0.3 + gamma + nu[:, :, 0]
        expected = np.sum(stats.norm.logpdf(data.x[:, :, 0], mu, 1.0))
        expected += 2 * np.log(1.0 / np.pi)                      # arcsine density at 0 on (-1, 1)
        expected += 2.0 * np.log(2.0) - 2.0                      # inverse-gamma(3, 2) at 1
        expected += -np.log(20.0) - np.log(2.0) - np.log(10.0)   # flat alpha, theta, sigma_nu2
        expected += np.sum(stats.norm.logpdf(gamma))
        expected += np.log(0.1) - 0.1                            # inverse-gamma(1, 0.1) at 1
        expected += np.sum(stats.norm.logpdf(nu[:, 0, 0], 0.0, 1.0 / np.sqrt(0.75)))
        expected += np.sum(stats.norm.logpdf(nu[:, 1:, 0], 0.5 * nu[:, :-1, 0], 1.0))

        assert log_joint(state, data, design, cfg) == pytest.approx(expected, rel=1e-12)

    def test_no_covariates_is_car_mixed_model(self, rng):
        data, _, design = make_problem(n=4, t=3, m=4, k=0, p=2, seed=7)
        model = IcarhModel(data, design, ModelConfig(tau=1.5, psi=3.0))

        for _ in range(5):
            state, _ = model.untransform(model.initial_point(rng, jitter=0.5))
            expected = car_mixed_model_log_joint(model, state)
            assert model.log_joint(state) == pytest.approx(expected, rel=1e-10)

    def test_phi_prior_integrates_to_one(self, rng):
        """The beta-type prior over (L, U), read off as the beta-minus-uniform density ratio."""
        data, _, design = make_problem(n=4, t=3, m=4, k=1, p=1, seed=7)
        beta_model = IcarhModel(data, design, ModelConfig(psi=3.0, two_group=False))
        flat_cfg = ModelConfig(psi=3.0, two_group=False, phi_prior='uniform')
        flat_model = IcarhModel(data, design, flat_cfg)
        state, _ = beta_model.untransform(beta_model.initial_point(rng, jitter=0.5))
        low, high = design.lower[0], design.upper[0]

        def integrand(u):
            # phi = L + (U - L)(1 - cos u)/2 removes the endpoint singularities
            at = replace(state, phi=np.array([[low + (high - low) * (1.0 - np.cos(u)) / 2.0]]))
            ratio = np.exp(beta_model.log_joint(at) - flat_model.log_joint(at))
            return ratio * np.sin(u) / 2.0

        total, _ = integrate.quad(integrand, 0.0, np.pi)

        assert total == pytest.approx(1.0, abs=1e-4)

    def test_group_swap(self, small_problem, rng):
        """Swapping group labels together with the phi rows leaves the density unchanged."""
        data, _, design = small_problem
        cfg = ModelConfig(tau=1.5, psi=3.0)
        model = IcarhModel(data, design, cfg)
        state, _ = model.untransform(model.initial_point(rng, jitter=0.5))
        other = {'cases': 'controls', 'controls': 'cases'}

        swapped = relabelled(data, group=[other[g] for g in data.group])
        swapped_state = replace(state, phi=state.phi[::-1].copy())

        assert not np.allclose(state.phi[0], state.phi[1])
        value = IcarhModel(swapped, design, cfg).log_joint(swapped_state)
        assert value == pytest.approx(model.log_joint(state), rel=1e-12)

    def test_subject_permutation_within_group(self, small_problem, rng):
        data, _, design = small_problem
        cfg = ModelConfig(tau=1.5, psi=3.0)
        model = IcarhModel(data, design, cfg)
        state, _ = model.untransform(model.initial_point(rng, jitter=0.5))
        order = [1, 0, 3, 2]

        permuted = relabelled(data, order=order)
        permuted_state = replace(state, gamma=state.gamma[order], nu=state.nu[order])

        assert permuted.group == data.group
        value = IcarhModel(permuted, design, cfg).log_joint(permuted_state)
        assert value == pytest.approx(model.log_joint(state), rel=1e-12)
