"""Binned-coefficient generalised Langevin equation: likelihood, fitting and memory aggregation.

Model (one Euler-Maruyama step of size h):

    x_{t+1} = x_t + h * (D1[b(x_t)] + sum_k K_k x_{t-k}) + sqrt(h * D2[b(x_t)]) * xi_t

The sampler works on the parameter vector [D1 per bin, log D2 per bin, K_1..K_kmax].
Transitions that would need values before the start of the series are dropped.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from utils.bayes_core import (McmcSettings, PosteriorEnsemble, autocorrelation_time, build_log_posterior,
                              log_prior_library, run_ensemble_mcmc, summarize_all)
from utils.errors import InputDataError, LikelihoodError
from utils.helpers import export_to_json, import_from_json

logger = logging.getLogger(__name__)

BIN_MODES = ('equal_width', 'equal_count')
DEFAULT_N_BINS = 10
DEFAULT_PLATEAU_TOL = 0.1

# prior ranges for the binned coefficients
DRIFT_BOUND = 50.0
KERNEL_BOUND = 50.0
DIFFUSION_MAX = 50.0
LOG_DIFFUSION_FLOOR = -30.0

# full-length sampler settings for GLE fits
GLE_MCMC_DEFAULTS = McmcSettings(walkers=100, steps=100000, n_burn=450, thin=450)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GleModel:
    bin_edges: np.ndarray
    drift_per_bin: np.ndarray
    diffusion_per_bin: np.ndarray
    kernel: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_h: float = 1.0
    bin_mode: str = 'equal_width'

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.drift_per_bin = np.asarray(self.drift_per_bin, dtype=float)
        self.diffusion_per_bin = np.asarray(self.diffusion_per_bin, dtype=float)
        self.kernel = np.asarray(self.kernel, dtype=float).ravel()

        if self.bin_edges.size < 2 or (np.diff(self.bin_edges) <= 0).any():
            raise ValueError('bin_edges must hold at least two strictly increasing values')
        n_bins = self.bin_edges.size - 1
        if self.drift_per_bin.shape != (n_bins,) or self.diffusion_per_bin.shape != (n_bins,):
            raise ValueError(f'drift and diffusion need one value per bin ({n_bins})')
        if (self.diffusion_per_bin < 0).any():
            raise ValueError('diffusion_per_bin must be non-negative')
        if not self.step_h > 0:
            raise ValueError(f'step_h must be > 0 (got {self.step_h})')

    @property
    def n_bins(self):
        return self.bin_edges.size - 1

    @property
    def k_max(self):
        return self.kernel.size

    def bin_index(self, x):
        """Bin of x; values outside the edges fall into the nearest edge bin"""
        return np.searchsorted(self.bin_edges[1:-1], x, side='right')

    def drift_at(self, x):
        return self.drift_per_bin[self.bin_index(x)]

    def diffusion_at(self, x):
        return self.diffusion_per_bin[self.bin_index(x)]

    def as_dict(self):
        return {
            'bin_edges': self.bin_edges.tolist(),
            'drift_per_bin': self.drift_per_bin.tolist(),
            'diffusion_per_bin': self.diffusion_per_bin.tolist(),
            'kernel': self.kernel.tolist(),
            'step_h': float(self.step_h),
            'bin_mode': self.bin_mode,
            'k_max': self.k_max,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(bin_edges=data['bin_edges'], drift_per_bin=data['drift_per_bin'],
                   diffusion_per_bin=data['diffusion_per_bin'], kernel=data.get('kernel', []),
                   step_h=data.get('step_h', 1.0), bin_mode=data.get('bin_mode', 'equal_width'))


@dataclass(frozen=True)
class BinAssignment:
    edges: np.ndarray
    assignment: np.ndarray
    mode: str

    def counts(self):
        return np.bincount(self.assignment, minlength=self.edges.size - 1)


@dataclass(frozen=True)
class MemoryAggregation:
    k_values: np.ndarray
    K_cumulative: np.ndarray
    plateau_estimate: Optional[int]

    def as_dict(self):
        return {'k': self.k_values.tolist(), 'K': self.K_cumulative.tolist(),
                'plateau_estimate': self.plateau_estimate}


def _values_of(series):
    values = getattr(series, 'values', series)
    values = np.asarray(values, dtype=float).ravel()
    if not np.isfinite(values).all():
        raise InputDataError('series contains non-finite values')
    return values


def bin_series(series, n_bins=DEFAULT_N_BINS, mode='equal_width'):
    """Bin edges over the series range plus the bin of every sample"""
    values = _values_of(series)
    if n_bins < 2:
        raise ValueError(f'n_bins must be >= 2 (got {n_bins})')
    if values.size < n_bins:
        raise InputDataError(f'series of length {values.size} cannot fill {n_bins} bins')
    if mode not in BIN_MODES:
        raise ValueError(f'mode must be one of {BIN_MODES} (got {mode!r})')

    low, high = values.min(), values.max()
    if low == high:
        raise InputDataError('cannot bin a constant series')

    if mode == 'equal_width':
        edges = np.linspace(low, high, n_bins + 1)
    else:
        edges = np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1))
        if (np.diff(edges) <= 0).any():
            raise InputDataError(f'too many tied values for {n_bins} equal-count bins')

    assignment = np.searchsorted(edges[1:-1], values, side='right')
    return BinAssignment(edges=edges, assignment=assignment, mode=mode)


def parameter_names(n_bins, k_max):
    return ([f'D1_{b}' for b in range(n_bins)] + [f'D2_{b}' for b in range(n_bins)]
            + [f'K_{k}' for k in range(1, k_max + 1)])


def memory_matrix(values, k_max, start, stop):
    """Row t holds x_{t-1} .. x_{t-kmax} for t in [start, stop)"""
    if k_max == 0:
        return np.zeros((stop - start, 0))
    return np.column_stack([values[start - k:stop - k] for k in range(1, k_max + 1)])


class GleLikelihood:
    """Gaussian transition likelihood backed by per-bin sufficient statistics"""

    def __init__(self, values, bin_edges, k_max, step_h=1.0):
        values = _values_of(values)
        if values.size <= k_max + 1:
            raise LikelihoodError(f'series of length {values.size} is too short for k_max={k_max}')
        if not step_h > 0:
            raise ValueError(f'step_h must be > 0 (got {step_h})')

        self.values = values
        self.bin_edges = np.asarray(bin_edges, dtype=float)
        self.n_bins = self.bin_edges.size - 1
        self.k_max = int(k_max)
        self.step_h = float(step_h)

        stop = values.size - 1
        self.velocity = (values[k_max + 1:] - values[k_max:stop]) / step_h
        self.memory = memory_matrix(values, k_max, k_max, stop)
        self.bins = np.searchsorted(self.bin_edges[1:-1], values[k_max:stop], side='right')
        self.n_transitions = self.velocity.size

        nb, km = self.n_bins, self.k_max
        self.n = np.bincount(self.bins, minlength=nb).astype(float)
        self.s_y = np.bincount(self.bins, weights=self.velocity, minlength=nb)
        self.s_yy = np.bincount(self.bins, weights=self.velocity ** 2, minlength=nb)
        self.s_m = np.zeros((nb, km))
        self.s_my = np.zeros((nb, km))
        self.s_mm = np.zeros((nb, km, km))
        for b in range(nb):
            rows = self.bins == b
            m = self.memory[rows]
            self.s_m[b] = m.sum(axis=0)
            self.s_my[b] = m.T @ self.velocity[rows]
            self.s_mm[b] = m.T @ m

        empty = np.flatnonzero(self.n == 0)
        if empty.size:
            logger.warning('bins %s hold no transitions; their coefficients follow the prior only', empty.tolist())

    @property
    def dim(self):
        return 2 * self.n_bins + self.k_max

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        nb = self.n_bins
        return theta[:nb], theta[nb:2 * nb], theta[2 * nb:]

    def residual_sum_of_squares(self, drift, kernel):
        """Per-bin sum of (y - D1 - K.m)^2 from the sufficient statistics"""
        cross = self.s_my @ kernel
        quad = np.einsum('i,bij,j->b', kernel, self.s_mm, kernel)
        mem_sum = self.s_m @ kernel
        rss = (self.s_yy - 2 * drift * self.s_y - 2 * cross + self.n * drift ** 2
               + 2 * drift * mem_sum + quad)
        return np.maximum(rss, 0.0)

    def log_likelihood_coefficients(self, drift, diffusion, kernel):
        diffusion = np.asarray(diffusion, dtype=float)
        if (diffusion <= 0).any():
            raise LikelihoodError('diffusion must be positive in every bin')
        h = self.step_h
        rss = self.residual_sum_of_squares(np.asarray(drift, dtype=float), np.asarray(kernel, dtype=float))
        return float(np.sum(-0.5 * self.n * (_LOG_2PI + np.log(h * diffusion)) - h * rss / (2 * diffusion)))

    def __call__(self, theta):
        drift, log_diffusion, kernel = self.split(theta)
        return self.log_likelihood_coefficients(drift, np.exp(log_diffusion), kernel)

    def transition_log_densities(self, theta):
        """Log density of every retained transition, evaluated one by one"""
        drift, log_diffusion, kernel = self.split(theta)
        diffusion = np.exp(log_diffusion)
        h = self.step_h
        mean = drift[self.bins] + self.memory @ kernel
        var = diffusion[self.bins]
        return -0.5 * (_LOG_2PI + np.log(h * var)) - h * (self.velocity - mean) ** 2 / (2 * var)

    def initial_estimate(self):
        """Weighted least-squares coefficients and their Fisher standard errors (internal layout)"""
        nb, km, h = self.n_bins, self.k_max, self.step_h
        design = np.hstack([np.eye(nb)[self.bins], self.memory])

        coef = np.linalg.lstsq(design, self.velocity, rcond=None)[0]
        diffusion = np.full(nb, np.nan)
        for _ in range(3):
            residual = self.velocity - design @ coef
            occupied = self.n > 0
            diffusion[occupied] = h * np.bincount(self.bins, weights=residual ** 2, minlength=nb)[occupied] / self.n[occupied]
            fallback = h * np.mean(residual ** 2)
            diffusion = np.where(occupied & (diffusion > 0), diffusion, max(fallback, 1e-12))
            weights = np.sqrt(h / diffusion[self.bins])
            coef = np.linalg.lstsq(design * weights[:, None], self.velocity * weights, rcond=None)[0]

        weight = h / diffusion[self.bins]
        fisher = (design * weight[:, None]).T @ design
        stderr = np.sqrt(np.clip(np.diag(np.linalg.pinv(fisher)), 1e-16, None))

        drift = np.clip(coef[:nb], -0.99 * DRIFT_BOUND, 0.99 * DRIFT_BOUND)
        kernel = np.clip(coef[nb:], -0.99 * KERNEL_BOUND, 0.99 * KERNEL_BOUND)
        log_diffusion = np.clip(np.log(diffusion), LOG_DIFFUSION_FLOOR + 1, math.log(DIFFUSION_MAX) - 1e-3)

        drift_se = np.where(self.n > 0, stderr[:nb], 1.0)
        log_diffusion_se = np.where(self.n > 0, np.sqrt(2.0 / np.maximum(self.n, 1)), 1.0)
        center = np.concatenate([drift, log_diffusion, kernel])
        scale = np.concatenate([drift_se, log_diffusion_se, stderr[nb:]])
        return center, scale


def gle_log_likelihood(model: GleModel, series):
    """Log-likelihood of a series under a GleModel, excluding the first k_max transitions"""
    likelihood = GleLikelihood(series, model.bin_edges, model.k_max, model.step_h)
    return likelihood.log_likelihood_coefficients(model.drift_per_bin, model.diffusion_per_bin, model.kernel)


def _log_diffusion_prior(log_diffusion):
    # uniform on D2 in (0, DIFFUSION_MAX], expressed for log D2
    return float(np.sum(log_diffusion)) - log_diffusion.size * math.log(DIFFUSION_MAX)


def build_gle_posterior(likelihood: GleLikelihood):
    nb, km = likelihood.n_bins, likelihood.k_max
    names = [f'D1_{b}' for b in range(nb)] + [f'logD2_{b}' for b in range(nb)] + [f'K_{k}' for k in range(1, km + 1)]
    bounds = ([(-DRIFT_BOUND, DRIFT_BOUND)] * nb + [(LOG_DIFFUSION_FLOOR, math.log(DIFFUSION_MAX))] * nb
              + [(-KERNEL_BOUND, KERNEL_BOUND)] * km)

    drift_prior = log_prior_library('uniform', low=-DRIFT_BOUND, high=DRIFT_BOUND)
    priors = [(drift_prior, range(nb))]
    if km:
        priors.append((log_prior_library('uniform', low=-KERNEL_BOUND, high=KERNEL_BOUND), range(2 * nb, 2 * nb + km)))

    def log_likelihood(theta):
        return _log_diffusion_prior(theta[nb:2 * nb]) + likelihood(theta)

    return build_log_posterior(names, bounds, priors, log_likelihood)


@dataclass
class GleFitResult:
    ensemble: PosteriorEnsemble
    map_model: GleModel
    mean_model: GleModel
    summaries: list
    n_transitions: int
    autocorr_time: Optional[List[float]] = None

    @property
    def k_max(self):
        return self.map_model.k_max

    def coefficient_table(self):
        rows = []
        for summary in self.summaries:
            lo, hi = summary.ci95
            rows.append({'name': summary.name, 'mean': summary.mean, 'map': summary.map,
                         'ci_lo': lo, 'ci_hi': hi, 'excludes_zero': bool(lo > 0 or hi < 0)})
        return rows

    def kernel_table(self):
        return [row for row in self.coefficient_table() if row['name'].startswith('K_')]


def _model_from(values, edges, k_max, step_h, mode):
    values = np.asarray(values, dtype=float)
    nb = edges.size - 1
    return GleModel(bin_edges=edges, drift_per_bin=values[:nb], diffusion_per_bin=values[nb:2 * nb],
                    kernel=values[2 * nb:2 * nb + k_max], step_h=step_h, bin_mode=mode)


def fit_gle(series, n_bins=DEFAULT_N_BINS, k_max=0, mode='equal_width', settings: McmcSettings = None,
            step_h=1.0):
    """Sample the binned GLE posterior; returns MAP and posterior-mean models with coefficient CIs"""
    settings = settings or GLE_MCMC_DEFAULTS
    values = _values_of(series)
    binning = bin_series(values, n_bins=n_bins, mode=mode)
    likelihood = GleLikelihood(values, binning.edges, k_max, step_h)
    target = build_gle_posterior(likelihood)
    center, scale = likelihood.initial_estimate()

    logger.info('fitting GLE: %d bins (%s), k_max=%d, %d transitions', n_bins, mode, k_max, likelihood.n_transitions)
    raw = run_ensemble_mcmc(target, settings.walkers, settings.steps, settings.seed,
                            n_burn=settings.n_burn, thin=settings.thin, center=center, scale=scale)

    # report diffusion in D2 units
    chains = raw.chains.copy()
    chains[:, :, n_bins:2 * n_bins] = np.exp(chains[:, :, n_bins:2 * n_bins])
    bounds = raw.bounds.copy()
    bounds[n_bins:2 * n_bins] = (0.0, DIFFUSION_MAX)
    ensemble = PosteriorEnsemble(chains=chains, n_burn=raw.n_burn, thin=raw.thin,
                                 acceptance_rate=raw.acceptance_rate, seed=raw.seed,
                                 names=parameter_names(n_bins, k_max), bounds=bounds, log_prob=raw.log_prob)

    summaries = summarize_all(ensemble)
    try:
        tau = autocorrelation_time(ensemble).tolist()
    except (ValueError, FloatingPointError) as e:
        logger.warning('autocorrelation time unavailable: %s', e)
        tau = None

    map_values = np.array([s.map for s in summaries])
    map_values[n_bins:2 * n_bins] = np.maximum(map_values[n_bins:2 * n_bins], np.finfo(float).tiny)
    return GleFitResult(
        ensemble=ensemble,
        map_model=_model_from(map_values, binning.edges, k_max, step_h, mode),
        mean_model=_model_from([s.mean for s in summaries], binning.edges, k_max, step_h, mode),
        summaries=summaries,
        n_transitions=likelihood.n_transitions,
        autocorr_time=tau,
    )


def aggregate_kernel(kernel_means, plateau_tol=DEFAULT_PLATEAU_TOL):
    """Cumulative memory strength K_k and the lag where it settles"""
    kernel_means = np.asarray(kernel_means, dtype=float).ravel()
    k_max = kernel_means.size
    if k_max < 1:
        raise ValueError('memory aggregation needs k_max >= 1')

    cumulative = np.cumsum(kernel_means)
    spread = cumulative.max() - cumulative.min()
    if spread == 0:
        plateau = 1
    else:
        inside = np.abs(cumulative - cumulative[-1]) <= plateau_tol * spread
        # first lag from which every later K_k stays inside the band
        outside = np.flatnonzero(~inside)
        k0 = 1 if outside.size == 0 else int(outside[-1]) + 2
        plateau = None if k0 >= k_max else k0

    return MemoryAggregation(k_values=np.arange(1, k_max + 1), K_cumulative=cumulative, plateau_estimate=plateau)


def memory_aggregation(ens: PosteriorEnsemble, k_max, plateau_tol=DEFAULT_PLATEAU_TOL):
    if k_max < 1:
        raise ValueError('memory aggregation needs a fitted kernel (k_max >= 1)')
    kernel = ens.samples()[:, ens.dim - k_max:]
    return aggregate_kernel(kernel.mean(axis=0), plateau_tol=plateau_tol)


def save_gle_model(model: GleModel, path, extra=None):
    data = model.as_dict()
    data.update(extra or {})
    result = export_to_json(data, path)
    if not result['success']:
        raise OSError(result['error'])
    return Path(path)


def load_gle_model(path):
    loaded = import_from_json(path)
    if not loaded['success']:
        raise InputDataError(f'cannot read GLE model {path}: {loaded["error"]}')
    data = loaded['data']
    if 'map_model' in data:
        data = data['map_model']
    return GleModel.from_dict(data)
