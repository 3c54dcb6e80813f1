"""Tests for the HMC sampler, draw storage and convergence diagnostics."""

import numpy as np
import pytest
from scipy import stats

from icarh.exceptions import IcarhConfigError, IcarhInitializationError, IcarhIOError, IcarhNumericError
from icarh.model import IcarhModel, ModelConfig
from icarh.sampler import (
    DualAveraging,
    PosteriorDraws,
    SamplerConfig,
    adaptation_windows,
    check_gradient,
    diagnostics,
    hamiltonian,
    leapfrog,
    run_hmc,
    summarize,
)

from tests.fixtures.synthetic import ArcsineTarget, GaussianTarget, NowhereTarget, draws_from_samples, make_problem


class DoubledGradient(GaussianTarget):
    """Gaussian target reporting twice its true gradient."""

    def log_density_and_gradient(self, q):
        value, gradient = super().log_density_and_gradient(q)
        return value, 2.0 * gradient


@pytest.mark.unit
class TestSamplerConfig:
    """Tests for sampler settings."""

    def test_warmup_cannot_exceed_iterations(self):
        with pytest.raises(IcarhConfigError) as excinfo:
            SamplerConfig(iterations=10, warmup=20)

        assert excinfo.value.field == 'sampler.warmup'

    def test_draw_count_includes_thinning(self):
        assert SamplerConfig(iterations=100, warmup=40, thin=1).n_draws == 60
        assert SamplerConfig(iterations=100, warmup=40, thin=7).n_draws == 9
        assert SamplerConfig(iterations=50, warmup=50).n_draws == 0

    def test_dict_round_trip(self):
        cfg = SamplerConfig(iterations=300, warmup=100, chains=2, seed=9, trajectory_length=1.5)

        assert SamplerConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.unit
class TestIntegrator:
    """Tests for the leapfrog integrator and step-size adaptation."""

    def test_leapfrog_is_reversible(self):
        target = GaussianTarget([0.0, 1.0, -2.0], [1.0, 0.5, 2.0]).log_density_and_gradient
        inv_mass = np.array([1.0, 0.3, 2.0])
        q0 = np.array([0.4, -0.2, 1.0])
        p0 = np.array([0.3, 1.1, -0.7])
        _, grad0 = target(q0)

        q1, p1, _, grad1 = leapfrog(target, q0, p0, grad0, 0.1, 25, inv_mass)
        q2, p2, _, _ = leapfrog(target, q1, -p1, grad1, 0.1, 25, inv_mass)

        np.testing.assert_allclose(q2, q0, atol=1e-10)
        np.testing.assert_allclose(-p2, p0, atol=1e-10)

    def test_energy_error_is_second_order(self):
        target = GaussianTarget([0.0], [1.0]).log_density_and_gradient
        inv_mass = np.ones(1)
        q0, p0 = np.array([1.0]), np.array([0.5])
        logp0, grad0 = target(q0)

        errors = []
        for step_size in (0.1, 0.01):
            n_steps = int(round(1.0 / step_size))
            _, p1, logp1, _ = leapfrog(target, q0, p0, grad0, step_size, n_steps, inv_mass)
            errors.append(abs(hamiltonian(logp1, p1, inv_mass) - hamiltonian(logp0, p0, inv_mass)))

        assert errors[0] < 1e-2
        assert errors[1] < 1e-4

    def test_leapfrog_stops_on_non_finite_density(self):
        target = NowhereTarget([0.0], [1.0]).log_density_and_gradient

        _, _, logp, _ = leapfrog(target, np.zeros(1), np.ones(1), np.zeros(1), 0.1, 10, np.ones(1))

        assert logp == -np.inf

    def test_dual_averaging_moves_toward_target(self):
        adapter = DualAveraging(1.0, target=0.8)

        smaller = adapter.update(0.1)
        adapter.restart(1.0)
        larger = adapter.update(1.0)

        assert smaller < larger

    def test_windows_for_default_warmup(self):
        assert adaptation_windows(1000) == [(75, 100), (100, 150), (150, 250), (250, 450), (450, 950)]

    def test_windows_for_short_warmup(self):
        assert adaptation_windows(100) == [(15, 90)]
        assert adaptation_windows(10) == []


@pytest.mark.unit
class TestRunHmc:
    """Tests for chain execution and reproducibility."""

    def test_same_seed_same_draws(self):
        cfg = SamplerConfig(iterations=120, warmup=60, chains=2, seed=42)
        target = GaussianTarget([1.0, -1.0], [1.0, 2.0])

        first = run_hmc(target, cfg)
        second = run_hmc(target, cfg)
        other = run_hmc(target, SamplerConfig(iterations=120, warmup=60, chains=2, seed=43))

        np.testing.assert_array_equal(first.values, second.values)
        assert not np.array_equal(first.values, other.values)

    def test_parallel_chains_match_sequential(self):
        cfg = SamplerConfig(iterations=80, warmup=40, chains=2, seed=5)
        target = GaussianTarget([0.0], [1.0])

        np.testing.assert_array_equal(run_hmc(target, cfg, n_jobs=1).values, run_hmc(target, cfg, n_jobs=2).values)

    def test_warmup_only_run_has_empty_table(self):
        draws = run_hmc(GaussianTarget([0.0], [1.0]), SamplerConfig(iterations=30, warmup=30, chains=2))

        assert draws.values.shape == (2, 0, 1)
        assert draws.to_frame().empty

    def test_trajectory_length_fixes_step_count(self):
        cfg = SamplerConfig(iterations=100, warmup=50, chains=1, trajectory_length=2.0)

        draws = run_hmc(GaussianTarget([0.0, 0.0], [1.0, 1.0]), cfg)

        assert len(np.unique(draws.n_leapfrog)) == 1

    def test_initialization_failure(self):
        cfg = SamplerConfig(iterations=10, warmup=5, chains=1, init_retries=3)

        with pytest.raises(IcarhInitializationError):
            run_hmc(NowhereTarget([0.0], [1.0]), cfg)

    def test_gradient_self_check_detects_wrong_gradient(self, rng):
        target = DoubledGradient([0.0, 0.0], [1.0, 1.0])

        with pytest.raises(IcarhNumericError):
            check_gradient(target, np.array([0.7, -1.2]), rng)

    def test_gradient_self_check_on_model(self, rng):
        data, _, design = make_problem(n=4, t=3, m=4, k=1, p=2, seed=2)
        model = IcarhModel(data, design, ModelConfig(psi=3.0))

        assert check_gradient(model, model.initial_point(rng, jitter=0.5), rng, n_coordinates=20) < 1e-3

    def test_short_model_run(self):
        data, _, design = make_problem(n=4, t=3, m=4, k=1, p=2, seed=2)
        model = IcarhModel(data, design, ModelConfig(psi=3.0))

        draws = run_hmc(model, SamplerConfig(iterations=40, warmup=20, chains=1, leapfrog_steps=5))

        assert draws.values.shape == (1, 20, model.dimension)
        assert np.all(np.isfinite(draws.values))
        assert draws.parameter_names == model.parameter_names

    @pytest.mark.slow
    @pytest.mark.parametrize('seed', [11, 12, 13])
    def test_standard_normal_moments(self, seed):
        """Four chains of 1000 draws on a 5-d standard normal."""
        cfg = SamplerConfig(iterations=2000, warmup=1000, chains=4, seed=seed)

        draws = run_hmc(GaussianTarget(np.zeros(5), np.ones(5)), cfg)

        flat = draws.flat()
        assert flat.shape == (4000, 5)
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, rtol=0, atol=0.05)
        np.testing.assert_allclose(flat.var(axis=0), 1.0, rtol=0, atol=0.1)
        assert diagnostics(draws).table['rhat'].max() < 1.01

    @pytest.mark.slow
    def test_arcsine_distribution(self):
        """Beta(1/2, 1/2) through the logit transform, checked by the KS distance."""
        cfg = SamplerConfig(iterations=3000, warmup=500, chains=2, seed=8, leapfrog_steps=8)

        draws = run_hmc(ArcsineTarget(), cfg)

        result = stats.kstest(draws.flat()[:, 0], stats.beta(0.5, 0.5).cdf)
        assert result.statistic < 0.03


@pytest.mark.unit
class TestPosteriorDraws:
    """Tests for the draw table and its files."""

    def test_write_then_read(self, tmp_path, rng):
        draws = draws_from_samples(['a', 'b[1]', 'b[2]'], rng.standard_normal((20, 3)), chains=2)
        draws.warmup, draws.thin = 100, 2

        paths = draws.write(tmp_path)
        loaded = PosteriorDraws.read(tmp_path)

        assert [p.name for p in paths] == ['draws.csv.gz', 'sampler_stats.csv', 'sampler.json']
        np.testing.assert_array_equal(loaded.values, draws.values)
        assert loaded.parameter_names == draws.parameter_names
        assert loaded.iterations.tolist() == [101, 103, 105, 107, 109, 111, 113, 115, 117, 119]

    def test_write_is_byte_reproducible(self, tmp_path, rng):
        draws = draws_from_samples(['a'], rng.standard_normal((8, 1)))
        (tmp_path / 'one').mkdir()
        (tmp_path / 'two').mkdir()

        draws.write(tmp_path / 'one')
        draws.write(tmp_path / 'two')

        assert (tmp_path / 'one' / 'draws.csv.gz').read_bytes() == (tmp_path / 'two' / 'draws.csv.gz').read_bytes()

    def test_read_missing_files(self, tmp_path):
        with pytest.raises(IcarhIOError):
            PosteriorDraws.read(tmp_path)

    def test_block(self, rng):
        draws = draws_from_samples(['a', 'b[1]', 'b[2]'], rng.standard_normal((6, 3)))

        names, values = draws.block('b')

        assert names == ['b[1]', 'b[2]']
        assert values.shape == (1, 6, 2)


@pytest.mark.unit
class TestDiagnostics:
    """Tests for R-hat, ESS and the posterior summary."""

    def test_single_chain_has_no_rhat(self, rng):
        draws = draws_from_samples(['a'], rng.standard_normal((50, 1)))

        report = diagnostics(draws)

        assert not report.rhat_available
        assert report.table['rhat'].isna().all()
        assert report.table['ess_bulk'].notna().all()

    def test_mixed_chains_pass(self, rng):
        draws = draws_from_samples(['a', 'b'], rng.standard_normal((400, 2)), chains=4)

        report = diagnostics(draws)

        assert report.rhat_available
        assert report.flagged == []

    def test_separated_chains_are_flagged(self, rng):
        samples = rng.standard_normal((400, 1))
        samples[200:] += 5.0

        report = diagnostics(draws_from_samples(['a'], samples, chains=2))

        assert report.flagged == ['a']

    def test_constant_parameter(self, rng):
        samples = np.column_stack([rng.standard_normal(40), np.full(40, 2.5)])

        report = diagnostics(draws_from_samples(['a', 'c'], samples, chains=2))

        assert report.table.loc['c', 'rhat'] == 1.0
        assert report.table.loc['c', 'ess_bulk'] == 40

    def test_summary(self, rng):
        draws = draws_from_samples(['a'], rng.normal(3.0, 1.0, (400, 1)), chains=2)
        draws.divergent[0, :100] = True

        summary = summarize(draws)

        assert summary['chains'] == 2
        assert summary['divergences'] == [100, 0]
        assert summary['divergence_warning']
        assert summary['parameters']['a']['mean'] == pytest.approx(3.0, abs=0.2)
        assert set(summary['parameters']['a']['quantiles']) == {'2.5%', '25%', '50%', '75%', '97.5%'}

    def test_empty_summary(self):
        draws = draws_from_samples(['a'], np.empty((0, 1)), chains=2)

        summary = summarize(draws)

        assert summary['draws_per_chain'] == 0
        assert summary['parameters'] == {}
