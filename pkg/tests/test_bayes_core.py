import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from utils.bayes_core import (MAP_HISTOGRAM_BINS, LogDensity, McmcSettings, PosteriorEnsemble, autocorrelation_time,
                              build_log_posterior, load_ensemble, log_prior_library, reset_stuck_walkers,
                              run_ensemble_mcmc, run_with_settings, save_ensemble, summarize, summarize_all,
                              summarize_samples)
from utils.errors import PriorDomainError, SamplerError, SummaryError


def _gaussian_target(dim=2):
    return LogDensity(dim=dim, bounds=[(-50.0, 50.0)] * dim, evaluate=lambda t: -0.5 * float(t @ t))


@pytest.fixture(scope='module')
def gaussian_ensemble():
    return run_ensemble_mcmc(_gaussian_target(), walkers=32, steps=4000, seed=1, n_burn=1000, thin=10)


def test_gaussian_target_moments(gaussian_ensemble):
    samples = gaussian_ensemble.samples()
    assert samples.shape == (32 * 300, 2)
    assert np.all(np.abs(samples.mean(axis=0)) < 0.08)
    np.testing.assert_allclose(np.cov(samples.T), np.eye(2), atol=0.12)
    assert 0 < gaussian_ensemble.acceptance_rate < 1


def test_uniform_target_is_ks_consistent():
    target = LogDensity(dim=1, bounds=[(0.0, 1.0)], evaluate=lambda t: 0.0)
    ens = run_ensemble_mcmc(target, walkers=32, steps=4000, seed=2, n_burn=1000, thin=5)
    samples = ens.samples()[:, 0]
    assert samples.min() >= 0 and samples.max() <= 1
    assert stats.kstest(samples, 'uniform').statistic < 0.05


def test_invalid_proposals_are_never_accepted():
    target = LogDensity(dim=2, bounds=[(0.0, 1.0), (0.0, 1.0)], evaluate=lambda t: -float(t.sum()))
    ens = run_ensemble_mcmc(target, walkers=8, steps=300, seed=3)
    chains = ens.chains
    assert (chains >= 0).all() and (chains <= 1).all()
    assert np.isfinite(ens.log_prob).all()


def test_seed_reproduces_chains():
    first = run_ensemble_mcmc(_gaussian_target(), walkers=8, steps=200, seed=9)
    second = run_ensemble_mcmc(_gaussian_target(), walkers=8, steps=200, seed=9)
    np.testing.assert_array_equal(first.chains, second.chains)
    assert first.seed == 9


def test_run_with_settings_applies_layout():
    settings = McmcSettings(walkers=8, steps=120, n_burn=20, thin=4, seed=0)
    ens = run_with_settings(_gaussian_target(), settings)
    assert ens.chains.shape == (8, 120, 2)
    assert ens.n_retained == 8 * 25 == ens.samples().shape[0]
    assert settings.retained_per_walker() == 25


@pytest.mark.parametrize('walkers', [2, 3])
def test_too_few_walkers(walkers):
    with pytest.raises(SamplerError):
        run_ensemble_mcmc(_gaussian_target(), walkers=walkers, steps=10, seed=0)


def test_nowhere_valid_target():
    target = LogDensity(dim=1, bounds=[(0.0, 1.0)], evaluate=lambda t: -np.inf)
    with pytest.raises(SamplerError):
        run_ensemble_mcmc(target, walkers=4, steps=10, seed=0)


def test_ensemble_that_never_moves_is_an_error():
    seen = set()

    def first_points_only(theta):
        key = tuple(theta.tolist())
        if key in seen or len(seen) < 8:
            seen.add(key)
            return 0.0
        return -np.inf

    target = LogDensity(dim=2, bounds=[(0.0, 1.0), (0.0, 1.0)], evaluate=first_points_only)
    with pytest.raises(SamplerError, match='acceptance'):
        run_ensemble_mcmc(target, walkers=8, steps=20, seed=0)


def test_stuck_walkers_are_moved_next_to_healthy_ones():
    gen = np.random.default_rng(0)
    coords = 0.1 * gen.standard_normal((8, 2))
    coords[3] = [40.0, -40.0]
    mean_log_prob = np.array([-1.0, -1.2, -0.9, -1600.0, -1.1, -1.0, -0.8, -1.3])

    moved = reset_stuck_walkers(_gaussian_target(), coords, mean_log_prob, gen)

    assert np.all(np.abs(moved[3]) < 1.0)
    np.testing.assert_array_equal(np.delete(moved, 3, axis=0), np.delete(coords, 3, axis=0))


def test_healthy_ensemble_is_left_alone(rng):
    coords = rng.standard_normal((8, 2))
    moved = reset_stuck_walkers(_gaussian_target(), coords, np.full(8, -2.0), rng)
    np.testing.assert_array_equal(moved, coords)


def test_thinning_arithmetic():
    chains = np.arange(4 * 23 * 2, dtype=float).reshape(4, 23, 2)
    ens = PosteriorEnsemble(chains=chains, n_burn=3, thin=4, acceptance_rate=0.5, seed=0)
    samples = ens.samples()
    assert ens.n_retained == 4 * ((23 - 3) // 4)
    assert samples.shape == (ens.n_retained, 2)
    # first retained step of the first walker is step n_burn + thin - 1
    np.testing.assert_array_equal(samples[0], chains[0, 6])


def test_summary_of_uniform_grid():
    summary = summarize_samples(np.arange(1, 1001) / 1000.0, 'u')
    assert summary.ci95[0] == pytest.approx(0.025, abs=2e-3)
    assert summary.ci95[1] == pytest.approx(0.975, abs=2e-3)
    assert summary.mean == pytest.approx(0.5005)
    assert summary.n_samples == 1000


def test_summary_of_identical_samples():
    summary = summarize_samples(np.full(200, 0.1))
    assert summary.mean == pytest.approx(0.1)
    assert summary.map == 0.1
    assert summary.ci95 == (0.1, 0.1)


def test_summary_map_of_standard_normal(rng):
    values = rng.standard_normal(10 ** 6)
    summary = summarize_samples(values)
    # the histogram mode is a bin centre, so allow half a bin on top of the target
    assert abs(summary.map) < 0.12
    assert abs(summary.mean) < 0.01
    assert MAP_HISTOGRAM_BINS == 50


def test_summary_needs_enough_samples():
    with pytest.raises(SummaryError):
        summarize_samples(np.zeros(99))


def test_summarize_uses_names(gaussian_ensemble):
    summaries = summarize_all(gaussian_ensemble)
    assert [s.name for s in summaries] == ['p0', 'p1']
    first = summarize(gaussian_ensemble, 0)
    assert first.ci95[0] < first.mean < first.ci95[1]
    assert first.as_dict()['ci95'] == list(first.ci95)


def test_prior_library_values():
    assert math.exp(log_prior_library('flat_line_invariant')([3.0, 0.0])) == pytest.approx(1 / (2 * math.pi))
    assert log_prior_library('jeffreys_scale')([1.0]) == 0.0
    assert log_prior_library('gaussian', mu=0.0, sigma=4.0)([0.0]) == pytest.approx(
        -0.5 * math.log(2 * math.pi) - math.log(4.0))
    assert log_prior_library('ou_invariant')([1.0]) == pytest.approx(-math.log(2 * math.pi) - 1.5 * math.log(2.0))
    assert log_prior_library('uniform', low=-2.0, high=2.0)([0.5]) == pytest.approx(-math.log(4.0))


def test_prior_domains():
    with pytest.raises(PriorDomainError):
        log_prior_library('jeffreys_scale')([0.0])
    with pytest.raises(PriorDomainError):
        log_prior_library('ou_invariant')([-1.0])
    with pytest.raises(PriorDomainError):
        log_prior_library('uniform', low=0.0, high=1.0)([2.0])
    with pytest.raises(ValueError):
        log_prior_library('gaussian', sigma=0.0)
    with pytest.raises(ValueError):
        log_prior_library('lognormal')


@pytest.mark.parametrize('kind, params, grid', [
    ('flat_line_invariant', {}, np.linspace(-50, 50, 20001)),
    ('jeffreys_scale', {}, np.linspace(0.01, 50, 20001)),
    ('gaussian', {'mu': 0.0, 'sigma': 8.0}, np.linspace(-50, 50, 20001)),
    ('ou_invariant', {}, np.linspace(1e-3, 50, 20001)),
    ('uniform', {'low': -50.0, 'high': 50.0}, np.linspace(-50, 50, 20001)),
])
def test_priors_integrate_to_finite_values(kind, params, grid):
    component = log_prior_library(kind, **params)
    if kind == 'flat_line_invariant':
        density = [math.exp(component([0.0, g])) for g in grid]
    else:
        density = [math.exp(component([g])) for g in grid]
    total = integrate.trapezoid(density, grid)
    assert math.isfinite(total) and total > 0


def test_build_log_posterior_sums_priors_and_likelihood():
    prior = log_prior_library('gaussian', mu=0.0, sigma=1.0)
    target = build_log_posterior(['a', 'b'], [(-5, 5), (0, 5)], [(prior, [0]), (log_prior_library('jeffreys_scale'), [1])],
                                 lambda t: -2.0)
    value = target(np.array([0.0, 1.0]))
    assert value == pytest.approx(-0.5 * math.log(2 * math.pi) - 2.0)
    assert target(np.array([6.0, 1.0])) == -np.inf
    assert target(np.array([0.0, 0.0])) == -np.inf
    assert target(np.array([np.nan, 1.0])) == -np.inf
    assert target.names == ['a', 'b']


def test_log_density_rejects_unordered_bounds():
    with pytest.raises(ValueError):
        LogDensity(dim=1, bounds=[(1.0, 0.0)], evaluate=lambda t: 0.0)


def test_ensemble_persistence(gaussian_ensemble, tmp_path):
    data_path, header_path = save_ensemble(gaussian_ensemble, tmp_path / 'chains', {'note': 'gaussian'})
    header = json.loads(header_path.read_text())
    assert header['shape'] == [32, 4000, 2]
    assert header['seed'] == 1
    assert header['note'] == 'gaussian'

    loaded = load_ensemble(tmp_path / 'chains')
    np.testing.assert_array_equal(loaded.chains, gaussian_ensemble.chains)
    assert (loaded.n_burn, loaded.thin) == (1000, 10)
    np.testing.assert_array_equal(loaded.samples(), gaussian_ensemble.samples())


def test_autocorrelation_time(gaussian_ensemble):
    tau = autocorrelation_time(gaussian_ensemble)
    assert tau.shape == (2,)
    assert np.all(np.isfinite(tau)) and np.all(tau > 0)
