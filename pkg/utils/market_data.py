"""Price ingestion, local normalisation of returns and the mean market correlation.

The mean correlation of a window averages the Pearson coefficients of every
ordered asset pair, diagonal included, so N = (number of assets)**2.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from utils.errors import InputDataError, ZeroVarianceError
from utils.helpers import export_to_json, import_from_json

logger = logging.getLogger(__name__)

WINDOW_MODES = ('centered', 'trailing')
DEFAULT_MAX_MISSING_FRACTION = 0.005
DEFAULT_NORMALISATION_WINDOW = 13

# relative variance below which a window is treated as constant
_RELATIVE_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class PriceMatrix:
    assets: List[str]
    dates: pd.Index
    prices: np.ndarray
    missing_mask: np.ndarray
    dropped_assets: List[str] = field(default_factory=list)

    @property
    def n_assets(self):
        return len(self.assets)

    @property
    def n_dates(self):
        return len(self.dates)


@dataclass(frozen=True)
class ReturnMatrix:
    assets: List[str]
    dates: pd.Index
    returns: np.ndarray
    normalized: Optional[np.ndarray] = None
    window_n: Optional[int] = None

    @property
    def first_valid(self):
        """Index of the first column with a locally normalised value"""
        return 0 if self.window_n is None else self.window_n - 1


@dataclass(frozen=True)
class CorrelationSeries:
    values: np.ndarray
    centers: np.ndarray
    tau: int
    shift: int
    window_mode: str
    window_n: Optional[int] = None
    center_labels: Optional[List[str]] = None
    skipped_centers: List[int] = field(default_factory=list)
    dropped_assets: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.values)

    def metadata(self):
        return {
            'tau': self.tau,
            'shift': self.shift,
            'n': self.window_n,
            'window_mode': self.window_mode,
            'dropped_assets': list(self.dropped_assets),
            'skipped_centers': [int(c) for c in self.skipped_centers],
            'length': len(self.values),
        }


def _parse_dates(column):
    if pd.api.types.is_numeric_dtype(column):
        return pd.Index(column.to_numpy())
    try:
        return pd.DatetimeIndex(pd.to_datetime(column))
    except (ValueError, TypeError) as e:
        raise InputDataError(f'date column could not be parsed: {e}') from e


def load_prices(path, max_missing_fraction=DEFAULT_MAX_MISSING_FRACTION):
    """Read a price CSV, drop gappy assets and repair the remaining gaps linearly"""
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InputDataError(f'cannot read price file {path}: {e}') from e

    if frame.shape[1] < 2:
        raise InputDataError(f'{path} needs a date column and at least one asset column')

    date_column = next((c for c in frame.columns if str(c).strip().lower() == 'date'), frame.columns[0])
    dates = _parse_dates(frame[date_column])
    if dates.has_duplicates or not dates.is_monotonic_increasing:
        raise InputDataError(f'dates in {path} must be strictly increasing without duplicates')

    prices = frame.drop(columns=[date_column]).apply(pd.to_numeric, errors='coerce')
    prices.columns = [str(c) for c in prices.columns]
    if (prices < 0).any().any():
        bad = [c for c in prices.columns if (prices[c] < 0).any()]
        raise InputDataError(f'negative prices for assets: {", ".join(bad)}')

    missing = prices.isna()
    missing_fraction = missing.mean(axis=0)
    keep = missing_fraction[missing_fraction <= max_missing_fraction].index.tolist()
    dropped = [c for c in prices.columns if c not in keep]
    for asset in dropped:
        logger.warning('dropping asset %s: %.2f%% missing prices', asset, 100 * missing_fraction[asset])

    if not keep:
        raise InputDataError(f'no asset in {path} survives max_missing_fraction={max_missing_fraction}')

    # inside gaps linearly, edge gaps from the nearest valid value
    repaired = prices[keep].interpolate(method='linear', limit_area='inside').bfill().ffill()

    return PriceMatrix(
        assets=keep,
        dates=dates,
        prices=repaired.to_numpy(dtype=float).T,
        missing_mask=missing[keep].to_numpy().T,
        dropped_assets=dropped,
    )


def compute_returns(pm):
    """Relative price changes R_t = (P_{t+1} - P_t) / P_t per asset"""
    prices = np.asarray(pm.prices, dtype=float)
    zero = np.argwhere(prices[:, :-1] == 0)
    if zero.size:
        asset, index = zero[0]
        raise InputDataError(f'zero price for asset {pm.assets[asset]} at index {index}')

    returns = np.diff(prices, axis=1) / prices[:, :-1]
    return ReturnMatrix(assets=list(pm.assets), dates=pm.dates[:-1], returns=returns)


def local_normalize(rm, n=DEFAULT_NORMALISATION_WINDOW):
    """Standardise each return by the mean and volatility of its n most recent values"""
    returns = np.asarray(rm.returns, dtype=float)
    if n < 2:
        raise ValueError(f'normalisation window must be >= 2 (got {n})')
    if returns.shape[1] <= n:
        raise InputDataError(f'series of length {returns.shape[1]} is too short for window n={n}')

    windows = np.lib.stride_tricks.sliding_window_view(returns, n, axis=1)
    local_mean = windows.mean(axis=-1)
    local_var = windows.var(axis=-1)
    local_square = (windows ** 2).mean(axis=-1)

    degenerate = local_var <= _RELATIVE_VARIANCE_FLOOR * local_square
    if degenerate.any():
        asset, position = np.argwhere(degenerate)[0]
        index = position + n - 1
        raise ZeroVarianceError(
            f'zero local variance for asset {rm.assets[asset]} at index {index}',
            asset=rm.assets[asset], index=int(index))

    normalized = np.full_like(returns, np.nan)
    normalized[:, n - 1:] = (returns[:, n - 1:] - local_mean) / np.sqrt(local_var)
    return replace(rm, normalized=normalized, window_n=n)


def _window_mean_correlation(block):
    """Mean of the full Pearson matrix of one [asset x tau] block, or None if degenerate"""
    centred = block - block.mean(axis=1, keepdims=True)
    std = np.sqrt((centred ** 2).mean(axis=1))
    scale = np.sqrt((block ** 2).mean(axis=1))
    degenerate = std <= np.sqrt(_RELATIVE_VARIANCE_FLOOR) * np.maximum(scale, np.finfo(float).tiny)
    if degenerate.any():
        return None, np.flatnonzero(degenerate)

    standardized = centred / std[:, None]
    summed = standardized.sum(axis=0)
    n_assets, tau = block.shape
    return float(summed @ summed) / (tau * n_assets ** 2), None


def mean_correlation(rm, tau, shift=1, window_mode='centered'):
    """Mean pairwise correlation over sliding windows of tau normalised returns"""
    if rm.normalized is None:
        raise InputDataError('returns must be locally normalised before computing correlations')
    if tau < 2:
        raise ValueError(f'tau must be >= 2 (got {tau})')
    if shift < 1:
        raise ValueError(f'shift must be >= 1 (got {shift})')
    if window_mode not in WINDOW_MODES:
        raise ValueError(f'window_mode must be one of {WINDOW_MODES} (got {window_mode!r})')

    offset = rm.first_valid
    data = np.asarray(rm.normalized, dtype=float)[:, offset:]
    length = data.shape[1]
    if tau > length:
        raise InputDataError(f'tau={tau} exceeds the normalised series length {length}')

    values, centers, skipped = [], [], []
    for start in range(0, length - tau + 1, shift):
        if window_mode == 'centered':
            center = offset + start + (tau - 1) // 2
        else:
            center = offset + start + tau - 1

        c_bar, bad_assets = _window_mean_correlation(data[:, start:start + tau])
        if c_bar is None:
            names = ', '.join(rm.assets[i] for i in bad_assets)
            logger.warning('skipping window centred at %d: zero in-window variance for %s', center, names)
            skipped.append(center)
            continue

        values.append(c_bar)
        centers.append(center)

    centers = np.asarray(centers, dtype=int)
    labels = None
    if rm.dates is not None and len(rm.dates) == rm.returns.shape[1]:
        labels = [str(rm.dates[c]) for c in centers]

    return CorrelationSeries(
        values=np.clip(np.asarray(values, dtype=float), -1.0, 1.0),
        centers=centers,
        tau=tau,
        shift=shift,
        window_mode=window_mode,
        window_n=rm.window_n,
        center_labels=labels,
        skipped_centers=skipped,
    )


def build_correlation_series(path, n=DEFAULT_NORMALISATION_WINDOW, tau=5, shift=5,
                             window_mode='trailing', max_missing_fraction=DEFAULT_MAX_MISSING_FRACTION):
    """Full preprocessing pipeline from a price CSV to the mean correlation series"""
    pm = load_prices(path, max_missing_fraction=max_missing_fraction)
    logger.info('loaded %d assets over %d dates (%d dropped)', pm.n_assets, pm.n_dates, len(pm.dropped_assets))
    rm = local_normalize(compute_returns(pm), n=n)
    series = mean_correlation(rm, tau=tau, shift=shift, window_mode=window_mode)
    logger.info('mean correlation series: %d values (tau=%d, shift=%d, %s)', len(series), tau, shift, window_mode)
    return replace(series, dropped_assets=list(pm.dropped_assets))


def save_correlation_series(series, path, extra_metadata=None):
    """Write `center_index,c_bar` CSV plus a JSON sidecar; returns both paths"""
    path = Path(path)
    frame = pd.DataFrame({'center_index': series.centers, 'c_bar': series.values})
    frame.to_csv(path, index=False, float_format='%.17g')

    sidecar = path.with_suffix(path.suffix + '.json')
    meta = series.metadata()
    if series.center_labels is not None:
        meta['center_labels'] = list(series.center_labels)
    meta.update(extra_metadata or {})
    result = export_to_json(meta, sidecar)
    if not result['success']:
        raise OSError(result['error'])
    return path, sidecar


def load_correlation_series(path):
    """Read a series written by save_correlation_series (sidecar optional)"""
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputDataError(f'cannot read correlation series {path}: {e}') from e

    if 'c_bar' not in frame.columns:
        raise InputDataError(f'{path} has no c_bar column')

    meta = {}
    sidecar = path.with_suffix(path.suffix + '.json')
    if sidecar.is_file():
        loaded = import_from_json(sidecar)
        if loaded['success']:
            meta = loaded['data']

    centers = frame['center_index'].to_numpy(dtype=int) if 'center_index' in frame else np.arange(len(frame))
    return CorrelationSeries(
        values=frame['c_bar'].to_numpy(dtype=float),
        centers=centers,
        tau=int(meta.get('tau') or 0),
        shift=int(meta.get('shift') or 1),
        window_mode=meta.get('window_mode', 'trailing'),
        window_n=meta.get('n'),
        center_labels=meta.get('center_labels'),
        skipped_centers=list(meta.get('skipped_centers', [])),
        dropped_assets=list(meta.get('dropped_assets', [])),
    )


def load_series_values(path):
    """Values of a one-dimensional series file: `c_bar` (correlation) or `x` (trajectory) column"""
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputDataError(f'cannot read series {path}: {e}') from e

    for column in ('c_bar', 'x', 'value'):
        if column in frame.columns:
            return frame[column].to_numpy(dtype=float)
    raise InputDataError(f'{path} has none of the columns c_bar, x, value')
