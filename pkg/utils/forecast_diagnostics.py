"""Goodness-of-fit diagnostics and one-step-ahead forecast scoring for fitted GLE models"""
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import gaussian_kde
from sklearn.metrics import r2_score
from statsmodels.tsa.stattools import acf as _sm_acf

from utils.bayes_core import McmcSettings
from utils.errors import AnalysisError, InputDataError
from utils.gle_fit import DEFAULT_N_BINS, GleModel, fit_gle
from utils.sde_sim import SimConfig, simulate_gle

logger = logging.getLogger(__name__)

KDE_GRID_POINTS = 512
DEFAULT_ALPHAS = (0.80, 0.85, 0.90)
DEFAULT_METHODS = ('naive', 'le', 'gle3')
DEFAULT_INCREMENT_LAGS = (1, 2)
DIAGNOSTIC_SIM_STEPS = 100000

_METHOD_PATTERN = re.compile(r'^(naive|le|gle(\d+))$')


def _as_values(series):
    values = np.asarray(getattr(series, 'values', series), dtype=float).ravel()
    if not np.isfinite(values).all():
        raise InputDataError('series contains non-finite values')
    return values


def acf(series, max_lag):
    """Biased sample autocorrelation r(0..max_lag)"""
    values = _as_values(series)
    if values.size <= max_lag:
        raise InputDataError(f'series of length {values.size} is too short for max_lag={max_lag}')
    if values.min() == values.max():
        raise InputDataError('autocorrelation of a constant series is undefined')
    return _sm_acf(values, nlags=max_lag, fft=True, adjusted=False)


@dataclass(frozen=True)
class DensityEstimate:
    grid: Optional[np.ndarray]
    density: Optional[np.ndarray]
    bandwidth: Optional[float]
    n_samples: int
    point_mass: Optional[float] = None

    @property
    def is_point_mass(self):
        return self.point_mass is not None

    def as_dict(self):
        if self.is_point_mass:
            return {'point_mass': self.point_mass, 'n_samples': self.n_samples}
        return {'bandwidth': self.bandwidth, 'n_samples': self.n_samples,
                'grid_min': float(self.grid[0]), 'grid_max': float(self.grid[-1])}


def kernel_density(samples, grid_points=KDE_GRID_POINTS):
    """Gaussian KDE with Silverman's bandwidth on a grid spanning the data range +-3 bandwidths"""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise InputDataError('no samples for a density estimate')
    if samples.min() == samples.max():
        return DensityEstimate(grid=None, density=None, bandwidth=None,
                               n_samples=samples.size, point_mass=float(samples[0]))

    kde = gaussian_kde(samples, bw_method='silverman')
    bandwidth = float(np.sqrt(kde.covariance[0, 0]))
    grid = np.linspace(samples.min() - 3 * bandwidth, samples.max() + 3 * bandwidth, grid_points)
    return DensityEstimate(grid=grid, density=kde(grid), bandwidth=bandwidth, n_samples=samples.size)


def increment_distribution(series, lag=1, grid_points=KDE_GRID_POINTS):
    values = _as_values(series)
    if lag < 1 or values.size <= lag:
        raise InputDataError(f'lag {lag} needs a series longer than {lag}')
    return kernel_density(values[lag:] - values[:-lag], grid_points=grid_points)


def value_distribution(series, grid_points=KDE_GRID_POINTS):
    return kernel_density(_as_values(series), grid_points=grid_points)


def predict_one_step(model: GleModel, history):
    """Conditional mean of the next value given the observed history"""
    history = np.asarray(history, dtype=float).ravel()
    if history.size < model.k_max + 1:
        raise InputDataError(f'history of length {history.size} is shorter than k_max + 1 = {model.k_max + 1}')
    y_t = history[-1]
    memory = 0.0
    if model.k_max:
        # history[-1-k] is y_{t-k}
        memory = float(model.kernel @ history[-2:-model.k_max - 2:-1])
    return float(y_t + model.step_h * (model.drift_at(y_t) + memory))


def predict_series(model: GleModel, values, start, stop):
    """Rolling one-step forecasts of values[t+1] for t in [start, stop), using observed history"""
    values = _as_values(values)
    if start < model.k_max:
        raise InputDataError(f'forecasts need start >= k_max = {model.k_max}')
    if stop > values.size - 1 or stop <= start:
        raise InputDataError(f'invalid forecast range [{start}, {stop}) for length {values.size}')

    current = values[start:stop]
    prediction = current + model.step_h * model.drift_at(current)
    for k in range(1, model.k_max + 1):
        prediction = prediction + model.step_h * model.kernel[k - 1] * values[start - k:stop - k]
    return prediction


def coefficient_of_prediction(y, yhat):
    """rho^2 = 1 - sum (yhat - y)^2 / sum (mean(y) - y)^2"""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size != yhat.size:
        raise InputDataError(f'length mismatch: {y.size} actual vs {yhat.size} predicted values')
    if y.size < 2:
        raise InputDataError('coefficient of prediction needs at least two values')
    if y.min() == y.max():
        raise InputDataError('coefficient of prediction is undefined for a constant target')
    return float(r2_score(y, yhat))


def parse_method(method):
    """'naive' -> None, 'le' -> 0, 'gleK' -> K (memory length)"""
    match = _METHOD_PATTERN.match(str(method).strip().lower())
    if not match:
        raise ValueError(f'unknown forecast method {method!r}; use naive, le or gle<k>')
    name = match.group(1)
    if name == 'naive':
        return None
    if name == 'le':
        return 0
    return int(match.group(2))


@dataclass
class ForecastReport:
    alpha: float
    split_index: int
    rho2_in: Dict[str, float] = field(default_factory=dict)
    rho2_out: Dict[str, float] = field(default_factory=dict)
    predictions: Dict[str, dict] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)

    def as_dict(self, include_predictions=False):
        data = {'alpha': self.alpha, 'split_index': self.split_index,
                'rho2_in': dict(self.rho2_in), 'rho2_out': dict(self.rho2_out), 'errors': dict(self.errors)}
        if include_predictions:
            data['predictions'] = {
                method: {part: {'yhat': pair[0].tolist(), 'y': pair[1].tolist()} for part, pair in parts.items()}
                for method, parts in self.predictions.items()
            }
        return data


def _evaluate_method(method, values, split, n_bins, bin_mode, settings, estimate, step_h):
    k_max = parse_method(method)
    n = values.size

    if k_max is None:
        yhat_in, first = values[:split - 1], 0
        yhat_out = values[split - 1:n - 1]
    else:
        fit = fit_gle(values[:split], n_bins=n_bins, k_max=k_max, mode=bin_mode, settings=settings, step_h=step_h)
        model = fit.map_model if estimate == 'map' else fit.mean_model
        first = k_max
        yhat_in = predict_series(model, values, first, split - 1)
        yhat_out = predict_series(model, values, split - 1, n - 1)

    y_in = values[first + 1:split]
    y_out = values[split:]
    return {
        'in': (yhat_in, y_in),
        'out': (yhat_out, y_out),
        'rho2_in': coefficient_of_prediction(y_in, yhat_in),
        'rho2_out': coefficient_of_prediction(y_out, yhat_out),
    }


def _safe_evaluate(method, *args):
    try:
        return method, _evaluate_method(method, *args), None
    except (AnalysisError, ValueError, np.linalg.LinAlgError) as e:
        return method, None, str(e)


def run_forecast_benchmark(series, alpha, methods=DEFAULT_METHODS, settings: McmcSettings = None,
                           n_bins=DEFAULT_N_BINS, bin_mode='equal_width', estimate='map', step_h=1.0, n_jobs=1):
    """Fit every method on the first alpha of the series and score one-step forecasts in and out of sample"""
    values = _as_values(series)
    if not 0 < alpha < 1:
        raise ValueError(f'alpha must lie in (0, 1) (got {alpha})')
    if estimate not in ('map', 'mean'):
        raise ValueError(f"estimate must be 'map' or 'mean' (got {estimate!r})")
    for method in methods:
        parse_method(method)

    split = int(math.floor(alpha * values.size))
    if split < 3 or values.size - split < 2:
        raise InputDataError(f'alpha={alpha} leaves too little data on one side of the split ({split}/{values.size})')

    settings = settings or McmcSettings(walkers=32, steps=2000, n_burn=500, thin=10, seed=0)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_safe_evaluate)(method, values, split, n_bins, bin_mode, settings, estimate, step_h)
        for method in methods)

    report = ForecastReport(alpha=alpha, split_index=split)
    for method, outcome, error in results:
        if error is not None:
            logger.warning('forecast method %s failed at alpha=%.2f: %s', method, alpha, error)
            report.errors[method] = error
            continue
        report.rho2_in[method] = outcome['rho2_in']
        report.rho2_out[method] = outcome['rho2_out']
        report.predictions[method] = {'in': outcome['in'], 'out': outcome['out']}
        logger.info('alpha=%.2f %s: rho2 in %.3f, out %.3f', alpha, method, outcome['rho2_in'], outcome['rho2_out'])
    return report


def simulate_fitted(model: GleModel, data, n_steps=DIAGNOSTIC_SIM_STEPS, seed=0):
    """Long simulation of a fitted model, started from the beginning of the data"""
    data = _as_values(data)
    k = model.k_max
    cfg = SimConfig(step_h=model.step_h, n_steps=n_steps, seed=seed,
                    initial_state=data[k], history=data[:k] if k else None)
    return simulate_gle(model, cfg).x


def compare_acf(model: GleModel, data, n_steps=DIAGNOSTIC_SIM_STEPS, max_lag=30, seed=0):
    data = _as_values(data)
    simulated = simulate_fitted(model, data, n_steps=n_steps, seed=seed)
    data_acf = acf(data, max_lag)
    model_acf = acf(simulated, max_lag)
    return {'lag': np.arange(max_lag + 1), 'data_acf': data_acf, 'model_acf': model_acf,
            'abs_diff': np.abs(data_acf - model_acf)}


def compare_distributions(model: GleModel, data, lags=DEFAULT_INCREMENT_LAGS, n_steps=DIAGNOSTIC_SIM_STEPS, seed=0,
                          grid_points=KDE_GRID_POINTS):
    """KDEs of the values and of the lag-j increments, for the data and a simulated series"""
    data = _as_values(data)
    simulated = simulate_fitted(model, data, n_steps=n_steps, seed=seed)
    result = {'values': (value_distribution(data, grid_points), value_distribution(simulated, grid_points))}
    for lag in lags:
        result[f'increment_{lag}'] = (increment_distribution(data, lag, grid_points),
                                      increment_distribution(simulated, lag, grid_points))
    return result


def save_curve(path, columns):
    """Write equally long named columns as CSV, e.g. {'lag': ..., 'acf': ...}"""
    path = Path(path)
    pd.DataFrame({name: np.asarray(col) for name, col in columns.items()}).to_csv(
        path, index=False, float_format='%.17g')
    return path


def save_density(path, estimate: DensityEstimate):
    if estimate.is_point_mass:
        return save_curve(path, {'grid': [estimate.point_mass], 'density': [np.inf]})
    return save_curve(path, {'grid': estimate.grid, 'density': estimate.density})
