"""Log-posterior composition, ensemble MCMC and posterior summaries.

Sampling uses emcee's affine-invariant stretch move (a = 2). A log density
returns -inf outside its bounds, so emcee always rejects such proposals.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import emcee
import numpy as np

from utils.errors import LikelihoodError, PriorDomainError, SamplerError, SummaryError
from utils.helpers import export_to_json, import_from_json

logger = logging.getLogger(__name__)

STRETCH_SCALE = 2.0
MAP_HISTOGRAM_BINS = 50
MIN_SUMMARY_SAMPLES = 100
PRIOR_KINDS = ('flat_line_invariant', 'jeffreys_scale', 'gaussian', 'ou_invariant', 'uniform')

_LOG_2PI = math.log(2.0 * math.pi)
_INIT_ATTEMPTS = 100
# walkers whose burn-in log density trails the ensemble median by more than this per parameter are stuck
STUCK_LOG_PROB_GAP = 5.0


@dataclass
class McmcSettings:
    walkers: int = 50
    steps: int = 15000
    n_burn: int = 200
    thin: int = 1
    seed: Optional[int] = None

    def retained_per_walker(self):
        return max(0, (self.steps - self.n_burn) // self.thin)


@dataclass(frozen=True)
class PriorComponent:
    kind: str
    params: dict
    evaluate: Callable

    def __call__(self, values):
        return self.evaluate(np.atleast_1d(np.asarray(values, dtype=float)))


def _flat_line_invariant(values):
    # values = (intercept, slope)
    return -_LOG_2PI - 1.5 * math.log1p(values[1] ** 2)


def _jeffreys_scale(values):
    if (values <= 0).any():
        raise PriorDomainError('Jeffreys prior needs a positive scale')
    return float(-np.log(values).sum())


def _ou_invariant(values):
    if (values <= 0).any():
        raise PriorDomainError('OU prior needs theta5 > 0')
    return float((np.log(values) - _LOG_2PI - 1.5 * np.log1p(values ** -4.0)).sum())


def log_prior_library(kind, **params):
    """Build one prior component; the returned callable maps a parameter sub-vector to a log density"""
    if kind == 'flat_line_invariant':
        return PriorComponent(kind, {}, _flat_line_invariant)

    if kind == 'jeffreys_scale':
        return PriorComponent(kind, {}, _jeffreys_scale)

    if kind == 'ou_invariant':
        return PriorComponent(kind, {}, _ou_invariant)

    if kind == 'gaussian':
        mu = float(params.get('mu', 0.0))
        sigma = float(params.get('sigma', 1.0))
        if not sigma > 0:
            raise ValueError(f'gaussian prior needs sigma > 0 (got {sigma})')
        norm = -0.5 * _LOG_2PI - math.log(sigma)

        def gaussian(values):
            return float((norm - 0.5 * ((values - mu) / sigma) ** 2).sum())

        return PriorComponent(kind, {'mu': mu, 'sigma': sigma}, gaussian)

    if kind == 'uniform':
        low, high = float(params['low']), float(params['high'])
        if not (math.isfinite(low) and math.isfinite(high) and low < high):
            raise ValueError(f'uniform prior needs finite low < high (got {low}, {high})')
        log_width = math.log(high - low)

        def uniform(values):
            if ((values < low) | (values > high)).any():
                raise PriorDomainError('outside the uniform support')
            return -log_width * values.size

        return PriorComponent(kind, {'low': low, 'high': high}, uniform)

    raise ValueError(f'unknown prior kind {kind!r}; expected one of {PRIOR_KINDS}')


@dataclass
class LogDensity:
    dim: int
    bounds: np.ndarray
    evaluate: Callable
    names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(self.dim, 2)
        if not (self.bounds[:, 0] < self.bounds[:, 1]).all():
            raise ValueError('every parameter bound must satisfy lo < hi')
        if not self.names:
            self.names = [f'p{i}' for i in range(self.dim)]
        if len(self.names) != self.dim:
            raise ValueError(f'{len(self.names)} names for {self.dim} parameters')

    def in_bounds(self, theta):
        return bool(((theta >= self.bounds[:, 0]) & (theta <= self.bounds[:, 1])).all())

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if not (np.isfinite(theta).all() and self.in_bounds(theta)):
            return -np.inf
        try:
            with np.errstate(all='ignore'):
                value = float(self.evaluate(theta))
        except (PriorDomainError, LikelihoodError, ZeroDivisionError, OverflowError, ValueError):
            return -np.inf
        return value if not math.isnan(value) else -np.inf


def build_log_posterior(names, bounds, priors, log_likelihood):
    """Sum of prior components (each bound to parameter indices) and a log-likelihood"""
    names = list(names)
    priors = [(component, np.asarray(indices, dtype=int)) for component, indices in priors]

    def log_posterior(theta):
        total = 0.0
        for component, indices in priors:
            total += component(theta[indices])
        if not math.isfinite(total):
            return -np.inf
        return total + log_likelihood(theta)

    return LogDensity(dim=len(names), bounds=bounds, evaluate=log_posterior, names=names)


@dataclass
class PosteriorEnsemble:
    chains: np.ndarray
    n_burn: int
    thin: int
    acceptance_rate: float
    seed: Optional[int]
    names: List[str] = field(default_factory=list)
    bounds: Optional[np.ndarray] = None
    log_prob: Optional[np.ndarray] = None

    @property
    def walkers(self):
        return self.chains.shape[0]

    @property
    def steps(self):
        return self.chains.shape[1]

    @property
    def dim(self):
        return self.chains.shape[2]

    @property
    def n_retained(self):
        return self.walkers * max(0, (self.steps - self.n_burn) // self.thin)

    def samples(self):
        """Retained samples after burn-in and thinning, shape [n_retained, dim]"""
        kept = self.chains[:, self.n_burn + self.thin - 1::self.thin, :]
        return kept.reshape(-1, self.dim)


@dataclass(frozen=True)
class PosteriorSummary:
    name: str
    mean: float
    map: float
    ci95: tuple
    n_samples: int

    def as_dict(self):
        return {'name': self.name, 'mean': self.mean, 'map': self.map,
                'ci95': list(self.ci95), 'n_samples': self.n_samples}


def _initial_positions(target, walkers, rng, center, scale):
    lo, hi = target.bounds[:, 0], target.bounds[:, 1]
    finite = np.isfinite(lo) & np.isfinite(hi)

    if center is None:
        center = np.where(finite, 0.5 * (lo + hi), 0.0)
    center = np.asarray(center, dtype=float)
    if scale is None:
        scale = np.where(finite, 0.01 * (hi - lo), 1e-2)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), center.shape)

    positions = center + scale * rng.standard_normal((walkers, target.dim))
    valid = np.array([math.isfinite(target(p)) for p in positions])

    for _ in range(_INIT_ATTEMPTS):
        if valid.all():
            return positions
        bad = np.flatnonzero(~valid)
        positions[bad] = center + scale * rng.standard_normal((bad.size, target.dim))
        valid[bad] = [math.isfinite(target(p)) for p in positions[bad]]

    # fall back to draws over the whole prior box
    box_lo = np.where(np.isfinite(lo), lo, center - 10 * scale)
    box_hi = np.where(np.isfinite(hi), hi, center + 10 * scale)
    for _ in range(_INIT_ATTEMPTS):
        if valid.all():
            return positions
        bad = np.flatnonzero(~valid)
        positions[bad] = rng.uniform(box_lo, box_hi, size=(bad.size, target.dim))
        valid[bad] = [math.isfinite(target(p)) for p in positions[bad]]

    good = np.flatnonzero(valid)
    if good.size == 0:
        raise SamplerError('all initial walker positions have zero posterior density')

    for _ in range(_INIT_ATTEMPTS):
        if valid.all():
            return positions
        bad = np.flatnonzero(~valid)
        donors = positions[rng.choice(good, size=bad.size)]
        positions[bad] = donors * (1 + 1e-4 * rng.standard_normal(donors.shape)) + 1e-8 * rng.standard_normal(donors.shape)
        valid[bad] = [math.isfinite(target(p)) for p in positions[bad]]

    raise SamplerError(f'only {good.size} of {walkers} initial walker positions are valid')


def reset_stuck_walkers(target, coords, mean_log_prob, rng):
    """Move walkers that trail the ensemble median log density onto jittered copies of healthy walkers"""
    coords = np.array(coords, dtype=float)
    mean_log_prob = np.asarray(mean_log_prob, dtype=float)
    stuck = np.median(mean_log_prob) - mean_log_prob > STUCK_LOG_PROB_GAP * coords.shape[1]
    if not stuck.any():
        return coords

    healthy = np.flatnonzero(~stuck)
    spread = coords[healthy].std(axis=0)
    logger.warning('resetting %d stuck walker(s) after burn-in', int(stuck.sum()))
    for index in np.flatnonzero(stuck):
        donor = coords[rng.choice(healthy)]
        coords[index] = donor
        for _ in range(_INIT_ATTEMPTS):
            candidate = donor + 1e-3 * spread * rng.standard_normal(donor.size)
            if math.isfinite(target(candidate)):
                coords[index] = candidate
                break
    return coords


def run_ensemble_mcmc(target: LogDensity, walkers, steps, seed, n_burn=0, thin=1,
                      center=None, scale=None, progress=False):
    """Sample target with emcee's stretch-move ensemble sampler"""
    dim = target.dim
    if dim >= walkers:
        raise SamplerError(f'{walkers} walkers cannot sample {dim} parameters')
    if walkers < 2 * dim:
        raise SamplerError(f'walkers must be >= 2 * dim = {2 * dim} (got {walkers})')
    if steps < 1 or thin < 1 or not 0 <= n_burn < steps:
        raise SamplerError(f'invalid chain layout: steps={steps}, n_burn={n_burn}, thin={thin}')

    rng = np.random.default_rng(seed)
    p0 = _initial_positions(target, walkers, rng, center, scale)

    sampler = emcee.EnsembleSampler(walkers, dim, target, moves=emcee.moves.StretchMove(a=STRETCH_SCALE))
    sampler.random_state = np.random.RandomState(seed).get_state()
    try:
        if n_burn > 0:
            state = sampler.run_mcmc(p0, n_burn, progress=progress)
            tail = sampler.get_log_prob()[n_burn // 2:]
            positions = reset_stuck_walkers(target, state.coords, tail.mean(axis=0), rng)
            sampler.run_mcmc(positions, steps - n_burn, progress=progress, skip_initial_state_check=True)
        else:
            sampler.run_mcmc(p0, steps, progress=progress)
    except ValueError as e:
        raise SamplerError(f'ensemble sampler failed: {e}') from e

    acceptance = float(np.mean(sampler.acceptance_fraction))
    logger.info('MCMC finished: %d walkers x %d steps, acceptance %.3f', walkers, steps, acceptance)
    if not 0 < acceptance < 1:
        raise SamplerError(f'degenerate acceptance rate {acceptance:.3f}, the ensemble did not mix')

    return PosteriorEnsemble(
        chains=np.swapaxes(sampler.get_chain(), 0, 1).copy(),
        n_burn=n_burn,
        thin=thin,
        acceptance_rate=acceptance,
        seed=seed,
        names=list(target.names),
        bounds=target.bounds.copy(),
        log_prob=np.swapaxes(sampler.get_log_prob(), 0, 1).copy(),
    )


def run_with_settings(target, settings: McmcSettings, center=None, scale=None):
    return run_ensemble_mcmc(target, settings.walkers, settings.steps, settings.seed,
                             n_burn=settings.n_burn, thin=settings.thin, center=center, scale=scale)


def summarize_samples(values, name='theta'):
    """Mean, histogram MAP and central 95% interval of one marginal"""
    values = np.asarray(values, dtype=float).ravel()
    if values.size < MIN_SUMMARY_SAMPLES:
        raise SummaryError(f'{values.size} samples of {name}; at least {MIN_SUMMARY_SAMPLES} needed')

    lo, hi = np.quantile(values, [0.025, 0.975])
    if values.min() == values.max():
        mode = float(values[0])
    else:
        counts, edges = np.histogram(values, bins=MAP_HISTOGRAM_BINS)
        peak = int(np.argmax(counts))
        mode = float(0.5 * (edges[peak] + edges[peak + 1]))

    return PosteriorSummary(name=name, mean=float(values.mean()), map=mode,
                            ci95=(float(lo), float(hi)), n_samples=int(values.size))


def summarize(ens: PosteriorEnsemble, param_index):
    name = ens.names[param_index] if ens.names else f'p{param_index}'
    return summarize_samples(ens.samples()[:, param_index], name)


def summarize_all(ens: PosteriorEnsemble):
    return [summarize(ens, i) for i in range(ens.dim)]


def autocorrelation_time(ens: PosteriorEnsemble):
    """Integrated autocorrelation time per parameter over the post-burn chain"""
    chain = np.swapaxes(ens.chains[:, ens.n_burn:, :], 0, 1)
    return emcee.autocorr.integrated_time(chain, quiet=True)


def save_ensemble(ens: PosteriorEnsemble, path, extra=None):
    """Raw float64 chains to `<path>.bin` with a JSON header in `<path>.json`"""
    path = Path(path)
    data_path = path.with_suffix('.bin')
    header_path = path.with_suffix('.json')
    np.ascontiguousarray(ens.chains, dtype='<f8').tofile(data_path)

    header = {
        'shape': list(ens.chains.shape),
        'layout': 'walker,step,dim',
        'dtype': 'float64-le',
        'n_burn': ens.n_burn,
        'thin': ens.thin,
        'acceptance_rate': ens.acceptance_rate,
        'seed': ens.seed,
        'names': list(ens.names),
        'bounds': None if ens.bounds is None else np.asarray(ens.bounds).tolist(),
        'map_histogram_bins': MAP_HISTOGRAM_BINS,
    }
    header.update(extra or {})
    result = export_to_json(header, header_path)
    if not result['success']:
        raise OSError(result['error'])
    return data_path, header_path


def load_ensemble(path):
    path = Path(path)
    loaded = import_from_json(path.with_suffix('.json'))
    if not loaded['success']:
        raise OSError(loaded['error'])
    header = loaded['data']

    chains = np.fromfile(path.with_suffix('.bin'), dtype='<f8').reshape(header['shape'])
    bounds = header.get('bounds')
    return PosteriorEnsemble(
        chains=chains,
        n_burn=header['n_burn'],
        thin=header['thin'],
        acceptance_rate=header['acceptance_rate'],
        seed=header.get('seed'),
        names=header.get('names', []),
        bounds=None if bounds is None else np.asarray(bounds, dtype=float),
    )
