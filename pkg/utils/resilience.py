"""Rolling-window Bayesian resilience estimation.

Two models share the cubic drift D1(x) = theta0 + theta1 x + theta2 x^2 + theta3 x^3:

* markov:     dx = D1(x) dt + theta4 dW
* non-Markov: dx = (D1(x) + theta4 lambda) dt with a hidden OU process
              d lambda = -lambda / theta5^2 dt + (1 / theta5) dW

The drift slope zeta = D1'(x*) at the window mean x* is the resilience measure.
For the non-Markov model lambda is reconstructed from the first differences of x
and scored with its OU transition density.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import lsq_linear, minimize

from utils.bayes_core import (McmcSettings, PosteriorEnsemble, PriorComponent, build_log_posterior,
                              log_prior_library, run_ensemble_mcmc, summarize_samples)
from utils.errors import (AnalysisError, DegenerateWindowError, InfiniteTimescaleError, InputDataError,
                          LikelihoodError)
from utils.helpers import export_to_json

logger = logging.getLogger(__name__)

MODEL_TAGS = ('markov', 'nonmarkov_slow_hidden', 'nonmarkov_fast_hidden')
SEPARATIONS = ('slow_hidden', 'fast_hidden')
DEFAULT_WINDOW_SIZE = 500
DEFAULT_WINDOW_SHIFT = 15
DEFAULT_GAMMA = 2.0
DEFAULT_DETREND_WIDTH = 10.0
MIN_WINDOW_VARIANCE = 1e-12

MARKOV_MCMC = McmcSettings(walkers=50, steps=15000, n_burn=200, thin=1)
NONMARKOV_MCMC = McmcSettings(walkers=50, steps=20000, n_burn=200, thin=1)

THETA_NAMES = ('theta0', 'theta1', 'theta2', 'theta3', 'theta4', 'theta5')
_LOG_2PI = math.log(2.0 * math.pi)
# stationary variance of the hidden OU process
_LAMBDA_VARIANCE = 0.5


@dataclass(frozen=True)
class DriftThetaVector:
    theta0: float
    theta1: float
    theta2: float
    theta3: float
    theta4: float
    theta5: Optional[float] = None
    fixed_point: float = 0.0

    def __post_init__(self):
        if not self.theta4 > 0:
            raise ValueError(f'theta4 must be > 0 (got {self.theta4})')
        if self.theta5 is not None and not self.theta5 > 0:
            raise ValueError(f'theta5 must be > 0 (got {self.theta5})')

    @classmethod
    def from_array(cls, values, fixed_point):
        values = [float(v) for v in values]
        theta5 = values[5] if len(values) > 5 else None
        return cls(*values[:5], theta5=theta5, fixed_point=float(fixed_point))

    @property
    def drift_coefficients(self):
        return np.array([self.theta0, self.theta1, self.theta2, self.theta3])

    def drift(self, x):
        return np.polynomial.polynomial.polyval(x, self.drift_coefficients)


@dataclass(frozen=True)
class ResiliencePriors:
    name: str
    drift_bounds: Tuple[Tuple[float, float], ...]
    theta4_bounds: Tuple[float, float]
    theta5_bounds: Optional[Tuple[float, float]] = None
    theta2_sigma: float = 4.0
    theta3_sigma: float = 8.0
    theta4_sigma: float = 4.0

    def bounds(self, with_theta5):
        bounds = list(self.drift_bounds) + [self.theta4_bounds]
        if with_theta5:
            if self.theta5_bounds is None:
                raise ValueError(f'prior preset {self.name!r} has no theta5 range')
            bounds.append(self.theta5_bounds)
        return np.asarray(bounds, dtype=float)

    def as_dict(self):
        return {'name': self.name, 'drift_bounds': [list(b) for b in self.drift_bounds],
                'theta4_bounds': list(self.theta4_bounds),
                'theta5_bounds': None if self.theta5_bounds is None else list(self.theta5_bounds),
                'theta2_sigma': self.theta2_sigma, 'theta3_sigma': self.theta3_sigma,
                'theta4_sigma': self.theta4_sigma}


def _box(limit):
    return ((-limit, limit),) * 4


PRIOR_PRESETS: Dict[str, ResiliencePriors] = {
    'markov': ResiliencePriors('markov', _box(50.0), (0.0, 50.0)),
    'nonmarkov_slow': ResiliencePriors('nonmarkov_slow', _box(50.0), (0.0, 50.0), (0.0, 50.0)),
    'nonmarkov_fast': ResiliencePriors('nonmarkov_fast', _box(25.0), (0.0, 5.0), (0.01, 5.0)),
    'nonmarkov_slow_wide': ResiliencePriors('nonmarkov_slow_wide', _box(100.0), (0.0, 250.0), (0.01, 2000.0)),
}


def default_priors(model_tag):
    return PRIOR_PRESETS['markov' if model_tag == 'markov' else
                         'nonmarkov_slow' if model_tag == 'nonmarkov_slow_hidden' else 'nonmarkov_fast']


@dataclass(frozen=True)
class WindowPlan:
    window_size: int
    window_shift: int
    windows: List[Tuple[int, int]]

    def __len__(self):
        return len(self.windows)

    @property
    def centers(self):
        return np.array([start + self.window_size // 2 for start, _ in self.windows], dtype=int)


def plan_windows(length, size=DEFAULT_WINDOW_SIZE, shift=DEFAULT_WINDOW_SHIFT):
    """Windows [start, start + size) at starts 0, shift, 2 shift, ... inside the series"""
    if shift < 1:
        raise ValueError(f'window shift must be >= 1 (got {shift})')
    if size < 2:
        raise ValueError(f'window size must be >= 2 (got {size})')
    if size > length:
        raise InputDataError(f'window size {size} exceeds series length {length}')
    return WindowPlan(size, shift, [(start, start + size) for start in range(0, length - size + 1, shift)])


def drift_slope(theta: DriftThetaVector):
    """zeta = theta1 + 2 theta2 x* + 3 theta3 x*^2"""
    x = theta.fixed_point
    return theta.theta1 + 2 * theta.theta2 * x + 3 * theta.theta3 * x * x


def _slopes(samples, fixed_point):
    return samples[:, 1] + 2 * samples[:, 2] * fixed_point + 3 * samples[:, 3] * fixed_point ** 2


def characteristic_timescale(theta: DriftThetaVector, variable='observed'):
    if variable == 'observed':
        zeta = drift_slope(theta)
        if zeta == 0:
            raise InfiniteTimescaleError('drift slope is zero, the observed time scale is infinite')
        return abs(1.0 / zeta)
    if variable == 'hidden':
        if theta.theta5 is None:
            raise ValueError('the hidden time scale needs theta5')
        return theta.theta5 ** 2
    raise ValueError(f"variable must be 'observed' or 'hidden' (got {variable!r})")


def composite_noise(theta4, theta5, step_h=1.0):
    """Psi = theta4 * h / theta5"""
    return np.asarray(theta4) * step_h / np.asarray(theta5)


def detrend_gaussian(series, kernel_width=DEFAULT_DETREND_WIDTH):
    """Subtract a Gaussian-smoothed trend (standard deviation in samples, reflected edges)"""
    if not kernel_width > 0:
        raise ValueError(f'kernel width must be > 0 (got {kernel_width})')
    values = np.asarray(getattr(series, 'values', series), dtype=float)
    trend = gaussian_filter1d(values, sigma=kernel_width, mode='reflect')
    return values - trend, trend


def _design(x):
    return np.column_stack([np.ones_like(x), x, x ** 2, x ** 3])


class MarkovLikelihood:
    """Euler-Maruyama transitions with cubic drift and constant diffusion theta4^2"""

    def __init__(self, window, step_h=1.0):
        x = np.asarray(window, dtype=float)
        self.step_h = step_h
        self.n = x.size - 1
        self.velocity = np.diff(x) / step_h
        self.design = _design(x[:-1])
        z = np.column_stack([self.velocity, self.design])
        self.gram = z.T @ z

    def __call__(self, theta):
        theta4 = theta[4]
        if theta4 <= 0:
            raise LikelihoodError('theta4 must be positive')
        c = np.concatenate([[1.0], -theta[:4]])
        rss = max(c @ self.gram @ c, 0.0)
        h = self.step_h
        return -0.5 * self.n * (_LOG_2PI + math.log(h * theta4 ** 2)) - h * rss / (2 * theta4 ** 2)


class NonMarkovLikelihood:
    """OU transition density of lambda_t = (dx_t / h - D1(x_t)) / theta4, with its Jacobian"""

    def __init__(self, window, step_h=1.0):
        x = np.asarray(window, dtype=float)
        if x.size < 3:
            raise InputDataError('non-Markov likelihood needs at least three values')
        self.step_h = step_h
        velocity = np.diff(x) / step_h
        design = _design(x[:-1])
        self.m = velocity.size
        self.first = np.concatenate([[velocity[0]], design[0]])
        # columns: y_{t+1}, X_{t+1}, y_t, X_t over consecutive reconstructed pairs
        z = np.column_stack([velocity[1:], design[1:], velocity[:-1], design[:-1]])
        self.gram = z.T @ z

    def __call__(self, theta):
        theta4, theta5 = theta[4], theta[5]
        if theta4 <= 0 or theta5 <= 0:
            raise LikelihoodError('theta4 and theta5 must be positive')
        h = self.step_h
        rate = h / theta5 ** 2
        decay = 1.0 - rate
        drift = theta[:4]

        c_next = np.concatenate([[1.0], -drift])
        c = np.concatenate([c_next, -decay * c_next])
        ss = max(c @ self.gram @ c, 0.0) / theta4 ** 2
        lambda0 = (self.first @ c_next) / theta4

        return (-0.5 * (_LOG_2PI + math.log(_LAMBDA_VARIANCE)) - lambda0 ** 2 / (2 * _LAMBDA_VARIANCE)
                - 0.5 * (self.m - 1) * (_LOG_2PI + math.log(rate)) - ss / (2 * rate)
                - self.m * math.log(theta4 * h))

    def reconstruct(self, theta, window):
        """Hidden path implied by theta"""
        x = np.asarray(window, dtype=float)
        velocity = np.diff(x) / self.step_h
        return (velocity - _design(x[:-1]) @ np.asarray(theta[:4])) / theta[4]


def _timescale_prior(separation, gamma, fixed_point):
    def prior(values):
        # values = (theta1, theta2, theta3, theta5)
        zeta = values[0] + 2 * values[1] * fixed_point + 3 * values[2] * fixed_point ** 2
        tau_hidden = values[3] ** 2
        if separation == 'slow_hidden':
            # tau_hidden > gamma / |zeta|, impossible for zeta = 0
            ok = abs(zeta) * tau_hidden > gamma
        else:
            # 1 / |zeta| > gamma * tau_hidden
            ok = gamma * tau_hidden * abs(zeta) < 1.0
        return 0.0 if ok else -np.inf
    return prior


def _markov_priors(priors):
    return [
        (log_prior_library('flat_line_invariant'), [0, 1]),
        (log_prior_library('gaussian', mu=0.0, sigma=priors.theta2_sigma), [2]),
        (log_prior_library('gaussian', mu=0.0, sigma=priors.theta3_sigma), [3]),
        (log_prior_library('jeffreys_scale'), [4]),
    ]


def _nonmarkov_priors(priors, separation, gamma, fixed_point):
    return [
        (log_prior_library('flat_line_invariant'), [0, 1]),
        (log_prior_library('gaussian', mu=0.0, sigma=priors.theta2_sigma), [2]),
        (log_prior_library('gaussian', mu=0.0, sigma=priors.theta3_sigma), [3]),
        (log_prior_library('gaussian', mu=0.0, sigma=priors.theta4_sigma), [4]),
        (log_prior_library('ou_invariant'), [5]),
        (PriorComponent('timescale_separation', {'separation': separation, 'gamma': gamma},
                        _timescale_prior(separation, gamma, fixed_point)), [1, 2, 3, 5]),
    ]


@dataclass
class WindowPosterior:
    ensemble: PosteriorEnsemble
    fixed_point: float
    zeta_samples: np.ndarray
    noise_samples: np.ndarray
    model_tag: str
    degenerate: bool = False
    start_point: Optional[np.ndarray] = None

    def zeta_summary(self):
        return summarize_samples(self.zeta_samples, 'zeta')

    def noise_summary(self):
        return summarize_samples(self.noise_samples, 'noise')


def _check_window(window):
    window = np.asarray(window, dtype=float).ravel()
    if window.size < 4:
        raise InputDataError(f'window of {window.size} values is too short')
    if not np.isfinite(window).all():
        raise InputDataError('window contains non-finite values')
    if window.var() < MIN_WINDOW_VARIANCE:
        raise DegenerateWindowError(f'window variance {window.var():.3g} below {MIN_WINDOW_VARIANCE}')
    return window


def _interior_limits(bounds):
    lo, hi = bounds[:, 0], bounds[:, 1]
    margin = 1e-6 * (hi - lo)
    return lo + margin, hi - margin


def _interior(point, bounds):
    return np.clip(point, *_interior_limits(bounds))


def _least_squares_start(window, step_h, bounds=None):
    """Cubic drift fitted on the rescaled domain, converted to raw coefficients.

    When the raw coefficients leave the prior box the fit is redone with box
    constraints instead of clipping the unconstrained solution.
    """
    x = window[:-1]
    if np.ptp(x) == 0:
        raise DegenerateWindowError('window has a single distinct state before its last value')
    velocity = np.diff(window) / step_h
    fitted = np.polynomial.Polynomial.fit(x, velocity, 3).convert().coef
    drift = np.zeros(4)
    drift[:fitted.size] = fitted

    design = _design(x)
    if bounds is not None:
        lo, hi = _interior_limits(bounds[:4])
        if np.any(drift < lo) or np.any(drift > hi):
            drift = lsq_linear(design, velocity, bounds=(lo, hi), method='bvls').x
    residual = velocity - design @ drift
    return drift, residual, velocity


def _optimise(target, start):
    """Maximise the log posterior from start; keeps start if the optimiser ends outside the support"""
    def objective(theta):
        value = target(theta)
        return -value if math.isfinite(value) else 1e300

    result = minimize(objective, start, method='Nelder-Mead',
                      options={'maxiter': 4000 * start.size, 'xatol': 1e-10, 'fatol': 1e-10})
    if math.isfinite(target(result.x)) and target(result.x) >= target(start):
        return result.x
    return start


def _walker_scale(center, bounds):
    width = bounds[:, 1] - bounds[:, 0]
    return 1e-3 * np.abs(center) + 1e-6 * width


def markov_window_posterior(window, priors: ResiliencePriors = None, settings: McmcSettings = None, step_h=1.0):
    """Posterior over (theta0..theta4) of the Markov model for one window"""
    window = _check_window(window)
    priors = priors or PRIOR_PRESETS['markov']
    settings = settings or MARKOV_MCMC
    fixed_point = float(window.mean())
    bounds = priors.bounds(with_theta5=False)

    likelihood = MarkovLikelihood(window, step_h)
    target = build_log_posterior(THETA_NAMES[:5], bounds, _markov_priors(priors), likelihood)

    drift, residual, velocity = _least_squares_start(window, step_h, bounds)
    noise_scale = residual.std() * math.sqrt(step_h)
    degenerate = residual.std() <= 1e-8 * (np.abs(velocity).mean() + 1e-300)
    theta4 = max(noise_scale, 1e-6 * (np.abs(velocity).mean() * math.sqrt(step_h) + 1e-12))
    start = _interior(np.concatenate([drift, [theta4]]), bounds)
    if math.isfinite(target(start)):
        start = _optimise(target, start)
    if degenerate:
        logger.warning('window has no residual noise; theta4 collapses onto its lower bound')

    ens = run_ensemble_mcmc(target, settings.walkers, settings.steps, settings.seed, n_burn=settings.n_burn,
                            thin=settings.thin, center=start, scale=_walker_scale(start, bounds))
    samples = ens.samples()
    return WindowPosterior(ensemble=ens, fixed_point=fixed_point, zeta_samples=_slopes(samples, fixed_point),
                           noise_samples=samples[:, 4].copy(), model_tag='markov', degenerate=bool(degenerate),
                           start_point=start)


def _nonmarkov_start(window, step_h, separation, gamma, bounds):
    drift, residual, _ = _least_squares_start(window, step_h, bounds)
    rho = np.corrcoef(residual[:-1], residual[1:])[0, 1] if residual.std() > 0 else 0.0
    rho = float(np.clip(rho, 0.0, 1.0 - 1e-3))
    theta5 = math.sqrt(step_h / (1.0 - rho))
    theta4 = residual.std() / math.sqrt(_LAMBDA_VARIANCE)
    fixed_point = window.mean()

    theta5_lo, theta5_hi = bounds[5, 0] + 1e-3, bounds[5, 1] * 0.999
    theta5 = float(np.clip(theta5, theta5_lo, theta5_hi))
    zeta = drift[1] + 2 * drift[2] * fixed_point + 3 * drift[3] * fixed_point ** 2
    # move theta5 first, the drift slope only when theta5 cannot satisfy the constraint
    if separation == 'slow_hidden' and not abs(zeta) * theta5 ** 2 > gamma:
        if zeta != 0:
            theta5 = min(max(theta5, math.sqrt(2.0 * gamma / abs(zeta))), theta5_hi)
        if not abs(zeta) * theta5 ** 2 > gamma:
            drift[1] += -2.0 * gamma / theta5 ** 2 - zeta
    elif separation == 'fast_hidden' and not gamma * theta5 ** 2 * abs(zeta) < 1.0:
        if zeta != 0:
            theta5 = max(math.sqrt(0.5 / (gamma * abs(zeta))), theta5_lo)
        if not gamma * theta5 ** 2 * abs(zeta) < 1.0:
            drift[1] += -0.5 / (gamma * theta5 ** 2) - zeta
    return _interior(np.concatenate([drift, [max(theta4, 1e-8), theta5]]), bounds)


def nonmarkov_window_posterior(window, separation='slow_hidden', gamma=DEFAULT_GAMMA, priors: ResiliencePriors = None,
                               settings: McmcSettings = None, step_h=1.0):
    """Posterior over (theta0..theta5) of the two-time-scale model for one window"""
    if separation not in SEPARATIONS:
        raise ValueError(f'separation must be one of {SEPARATIONS} (got {separation!r})')
    if not gamma >= 1:
        raise ValueError(f'gamma must be >= 1 (got {gamma})')
    window = _check_window(window)
    priors = priors or PRIOR_PRESETS['nonmarkov_slow' if separation == 'slow_hidden' else 'nonmarkov_fast']
    settings = settings or NONMARKOV_MCMC
    fixed_point = float(window.mean())
    bounds = priors.bounds(with_theta5=True)

    likelihood = NonMarkovLikelihood(window, step_h)
    target = build_log_posterior(THETA_NAMES, bounds, _nonmarkov_priors(priors, separation, gamma, fixed_point),
                                 likelihood)

    start = _nonmarkov_start(window, step_h, separation, gamma, bounds)
    if math.isfinite(target(start)):
        start = _optimise(target, start)

    ens = run_ensemble_mcmc(target, settings.walkers, settings.steps, settings.seed, n_burn=settings.n_burn,
                            thin=settings.thin, center=start, scale=_walker_scale(start, bounds))
    samples = ens.samples()
    return WindowPosterior(ensemble=ens, fixed_point=fixed_point, zeta_samples=_slopes(samples, fixed_point),
                           noise_samples=composite_noise(samples[:, 4], samples[:, 5], step_h),
                           model_tag=f'nonmarkov_{separation}', start_point=start)


@dataclass
class ResilienceTrack:
    window_centers: np.ndarray
    zeta_mean: np.ndarray
    zeta_ci_lower: np.ndarray
    zeta_ci_upper: np.ndarray
    noise_mean: np.ndarray
    noise_ci_lower: np.ndarray
    noise_ci_upper: np.ndarray
    model_tag: str
    gaps: Dict[int, str] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.window_centers)

    def to_frame(self):
        return pd.DataFrame({
            'center': self.window_centers,
            'zeta_mean': self.zeta_mean, 'zeta_lo': self.zeta_ci_lower, 'zeta_hi': self.zeta_ci_upper,
            'noise_mean': self.noise_mean, 'noise_lo': self.noise_ci_lower, 'noise_hi': self.noise_ci_upper,
        })


def _window_job(index, window, model_tag, priors, settings, gamma, step_h):
    try:
        if model_tag == 'markov':
            posterior = markov_window_posterior(window, priors, settings, step_h)
        else:
            separation = model_tag[len('nonmarkov_'):]
            posterior = nonmarkov_window_posterior(window, separation, gamma, priors, settings, step_h)
        logger.debug('window %d: sampler started at %s', index, np.array2string(posterior.start_point, precision=4))
        zeta, noise = posterior.zeta_summary(), posterior.noise_summary()
        return index, (zeta.mean, *zeta.ci95, noise.mean, *noise.ci95), None
    except (AnalysisError, ValueError, np.linalg.LinAlgError) as e:
        return index, None, f'{type(e).__name__}: {e}'


def run_resilience(series, model_tag='markov', plan: WindowPlan = None, priors: ResiliencePriors = None,
                   settings: McmcSettings = None, gamma=DEFAULT_GAMMA, step_h=1.0, detrend_width=None, n_jobs=1):
    """Per-window drift slope and noise level with 95% credible bands; failed windows become NaN gaps"""
    if model_tag not in MODEL_TAGS:
        raise ValueError(f'model_tag must be one of {MODEL_TAGS} (got {model_tag!r})')
    values = np.asarray(getattr(series, 'values', series), dtype=float).ravel()
    if detrend_width:
        values, _ = detrend_gaussian(values, detrend_width)
    plan = plan or plan_windows(values.size)
    if plan.windows and plan.windows[-1][1] > values.size:
        raise InputDataError('window plan reaches beyond the end of the series')

    priors = priors or default_priors(model_tag)
    settings = settings or (MARKOV_MCMC if model_tag == 'markov' else NONMARKOV_MCMC)
    base_seed = settings.seed if settings.seed is not None else 0
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(base_seed).spawn(len(plan))]

    logger.info('resilience (%s): %d windows of %d, shift %d', model_tag, len(plan), plan.window_size,
                plan.window_shift)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_window_job)(i, values[start:end], model_tag, priors, replace(settings, seed=seeds[i]), gamma, step_h)
        for i, (start, end) in enumerate(plan.windows))

    columns = np.full((len(plan), 6), np.nan)
    gaps = {}
    for index, row, error in sorted(results, key=lambda r: r[0]):
        if error is not None:
            logger.warning('window %d skipped: %s', index, error)
            gaps[index] = error
        else:
            columns[index] = row

    return ResilienceTrack(
        window_centers=plan.centers,
        zeta_mean=columns[:, 0], zeta_ci_lower=columns[:, 1], zeta_ci_upper=columns[:, 2],
        noise_mean=columns[:, 3], noise_ci_lower=columns[:, 4], noise_ci_upper=columns[:, 5],
        model_tag=model_tag,
        gaps=gaps,
        metadata={
            'model_tag': model_tag, 'gamma': gamma, 'step_h': step_h, 'detrend_width': detrend_width,
            'window_size': plan.window_size, 'window_shift': plan.window_shift,
            'priors': priors.as_dict(),
            'mcmc': {'walkers': settings.walkers, 'steps': settings.steps, 'n_burn': settings.n_burn,
                     'thin': settings.thin, 'seed': base_seed},
        },
    )


def save_resilience_track(track: ResilienceTrack, path, extra_metadata=None):
    path = Path(path)
    track.to_frame().to_csv(path, index=False, float_format='%.17g')
    meta = dict(track.metadata)
    meta['gaps'] = {str(k): v for k, v in track.gaps.items()}
    meta.update(extra_metadata or {})
    sidecar = path.with_suffix(path.suffix + '.json')
    result = export_to_json(meta, sidecar)
    if not result['success']:
        raise OSError(result['error'])
    return path, sidecar
