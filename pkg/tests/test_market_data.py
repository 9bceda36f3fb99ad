import numpy as np
import pandas as pd
import pytest

from utils.errors import InputDataError, ZeroVarianceError
from utils.market_data import (PriceMatrix, ReturnMatrix, build_correlation_series, compute_returns,
                               load_correlation_series, load_prices, load_series_values, local_normalize,
                               mean_correlation, save_correlation_series)


def _returns(values, normalized=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    assets = [f'A{i}' for i in range(values.shape[0])]
    return ReturnMatrix(assets=assets, dates=None, returns=values, normalized=normalized)


def _normalized(values):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return _returns(values, normalized=values)


def test_load_prices_drops_gappy_assets(price_csv):
    n = 1000
    full = np.linspace(10, 20, n)
    few_gaps = full.copy()
    few_gaps[[100, 300, 500, 700]] = np.nan  # 0.4%
    many_gaps = full.copy()
    many_gaps[50:70] = np.nan  # 2%
    path = price_csv({'FULL': full, 'FEW': few_gaps, 'MANY': many_gaps})

    pm = load_prices(path, max_missing_fraction=0.005)

    assert pm.assets == ['FULL', 'FEW']
    assert pm.dropped_assets == ['MANY']
    assert pm.prices.shape == (2, n)
    assert pm.missing_mask[1].sum() == 4
    assert np.all(pm.prices > 0)


def test_load_prices_repairs_gaps(price_csv):
    path = price_csv({'MID': [100, np.nan, 102], 'EDGE': [np.nan, 50, 60]})
    pm = load_prices(path, max_missing_fraction=1.0)

    np.testing.assert_allclose(pm.prices[0], [100, 101, 102])
    np.testing.assert_allclose(pm.prices[1], [50, 50, 60])


def test_load_prices_rejects_unordered_dates(price_csv):
    dates = pd.to_datetime(['2000-01-04', '2000-01-03', '2000-01-05'])
    path = price_csv({'A': [1.0, 2.0, 3.0]}, dates=dates)
    with pytest.raises(InputDataError):
        load_prices(path)


def test_load_prices_needs_a_surviving_asset(price_csv):
    path = price_csv({'A': [1.0, np.nan, 3.0, 4.0]})
    with pytest.raises(InputDataError):
        load_prices(path, max_missing_fraction=0.005)


def test_load_prices_unreadable_file(tmp_path):
    with pytest.raises(InputDataError):
        load_prices(tmp_path / 'missing.csv')


@pytest.mark.parametrize('prices, expected', [
    ([100, 110, 99], [0.10, -0.10]),
    ([5, 5, 5], [0.0, 0.0]),
    ([1, 2], [1.0]),
])
def test_compute_returns(prices, expected):
    pm = PriceMatrix(assets=['A'], dates=pd.RangeIndex(len(prices)), prices=np.array([prices], dtype=float),
                     missing_mask=np.zeros((1, len(prices)), dtype=bool))
    rm = compute_returns(pm)
    assert rm.returns.shape == (1, len(prices) - 1)
    np.testing.assert_allclose(rm.returns[0], expected)


def test_compute_returns_rejects_zero_price():
    pm = PriceMatrix(assets=['A'], dates=pd.RangeIndex(3), prices=np.array([[1.0, 0.0, 2.0]]),
                     missing_mask=np.zeros((1, 3), dtype=bool))
    with pytest.raises(InputDataError):
        compute_returns(pm)


def test_local_normalize_alternating_returns():
    rm = local_normalize(_returns([1, -1, 1, -1, 1, -1, 1, -1]), n=2)
    assert np.isnan(rm.normalized[0, 0])
    np.testing.assert_allclose(np.abs(rm.normalized[0, 1:]), 1.0)
    assert rm.window_n == 2


def test_local_normalize_constant_returns_names_asset_and_index():
    with pytest.raises(ZeroVarianceError) as info:
        local_normalize(_returns([[0.01] * 20]), n=5)
    assert info.value.asset == 'A0'
    assert info.value.index == 4


def test_local_normalize_matches_trailing_window(rng):
    values = rng.normal(0, 0.02, (2, 60))
    n = 13
    rm = local_normalize(_returns(values), n=n)
    for t in (n - 1, 30, 59):
        window = values[1, t - n + 1:t + 1]
        expected = (values[1, t] - window.mean()) / window.std()
        assert rm.normalized[1, t] == pytest.approx(expected, abs=1e-10)
    assert np.isnan(rm.normalized[:, :n - 1]).all()


def test_local_normalize_needs_longer_series():
    with pytest.raises(InputDataError):
        local_normalize(_returns([0.1, 0.2, 0.3]), n=3)


def test_identical_assets_correlate_perfectly(rng):
    x = rng.normal(size=40)
    series = mean_correlation(_normalized([x, x, x]), tau=5, shift=5, window_mode='trailing')
    np.testing.assert_allclose(series.values, 1.0)


def test_opposite_assets_average_to_zero(rng):
    x = rng.normal(size=40)
    series = mean_correlation(_normalized([x, -x]), tau=8, shift=4)
    np.testing.assert_allclose(series.values, 0.0, atol=1e-12)


def test_mean_correlation_matches_pairwise_pearson(rng):
    data = np.cumsum(rng.normal(size=(3, 50)), axis=1)
    series = mean_correlation(_normalized(data), tau=5, shift=5, window_mode='trailing')

    assert len(series) == 10
    assert np.all((series.values >= -1) & (series.values <= 1))
    for value, center in zip(series.values, series.centers):
        block = data[:, center - 4:center + 1]
        assert value == pytest.approx(np.corrcoef(block).mean(), abs=1e-12)


def test_shifted_windows_are_a_subsequence(rng):
    rm = _normalized(rng.normal(size=(4, 80)))
    dense = mean_correlation(rm, tau=6, shift=1, window_mode='centered')
    sparse = mean_correlation(rm, tau=6, shift=3, window_mode='centered')

    np.testing.assert_array_equal(sparse.centers, dense.centers[::3])
    np.testing.assert_allclose(sparse.values, dense.values[::3], rtol=0, atol=1e-15)


def test_window_mode_sets_centers(rng):
    rm = _normalized(rng.normal(size=(2, 20)))
    assert mean_correlation(rm, tau=5, shift=5, window_mode='trailing').centers.tolist() == [4, 9, 14, 19]
    assert mean_correlation(rm, tau=5, shift=5, window_mode='centered').centers.tolist() == [2, 7, 12, 17]


def test_constant_window_is_skipped(rng):
    data = rng.normal(size=(2, 20))
    data[1, :5] = 0.3
    series = mean_correlation(_normalized(data), tau=5, shift=5, window_mode='trailing')
    assert series.skipped_centers == [4]
    assert series.centers.tolist() == [9, 14, 19]


def test_tau_longer_than_series():
    with pytest.raises(InputDataError):
        mean_correlation(_normalized(np.ones((2, 4))), tau=5)


def test_unnormalised_returns_are_rejected(rng):
    with pytest.raises(InputDataError):
        mean_correlation(_returns(rng.normal(size=(2, 30))), tau=5)


def test_pipeline_is_deterministic_and_round_trips(market_prices, tmp_path):
    first = build_correlation_series(market_prices, n=13, tau=5, shift=5, window_mode='trailing')
    second = build_correlation_series(market_prices, n=13, tau=5, shift=5, window_mode='trailing')
    np.testing.assert_array_equal(first.values, second.values)
    assert len(first) == (239 - 12 - 5) // 5 + 1
    assert first.center_labels is not None

    csv_path, sidecar = save_correlation_series(first, tmp_path / 'corr.csv')
    assert sidecar.is_file()
    loaded = load_correlation_series(csv_path)
    np.testing.assert_array_equal(loaded.values, first.values)
    np.testing.assert_array_equal(loaded.centers, first.centers)
    assert (loaded.tau, loaded.shift, loaded.window_mode, loaded.window_n) == (5, 5, 'trailing', 13)
    np.testing.assert_array_equal(load_series_values(csv_path), first.values)


def test_load_series_values_reads_trajectories(tmp_path):
    path = tmp_path / 'traj.csv'
    pd.DataFrame({'t': [0.0, 1.0], 'x': [0.5, 0.25]}).to_csv(path, index=False)
    np.testing.assert_allclose(load_series_values(path), [0.5, 0.25])

    bad = tmp_path / 'bad.csv'
    pd.DataFrame({'y': [1.0]}).to_csv(bad, index=False)
    with pytest.raises(InputDataError):
        load_series_values(bad)
