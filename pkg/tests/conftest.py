import numpy as np
import pandas as pd
import pytest

from utils.bayes_core import McmcSettings


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quick_mcmc():
    """Sampler settings small enough for unit tests"""
    return McmcSettings(walkers=24, steps=1500, n_burn=500, thin=5, seed=7)


@pytest.fixture
def price_csv(tmp_path):
    """Factory writing a `date,ASSET...` price CSV from {asset: values}"""
    def write(columns, name='prices.csv', dates=None):
        length = len(next(iter(columns.values())))
        frame = pd.DataFrame(columns)
        frame.insert(0, 'date', dates if dates is not None else pd.date_range('2000-01-03', periods=length, freq='B'))
        path = tmp_path / name
        frame.to_csv(path, index=False)
        return path
    return write


@pytest.fixture
def market_prices(price_csv):
    """Four assets driven by a common factor, 240 trading days"""
    gen = np.random.default_rng(2024)
    market = gen.normal(0, 0.01, 240)
    columns = {}
    for i, beta in enumerate((0.5, 1.0, 1.5, 0.8)):
        returns = beta * market + gen.normal(0, 0.01, 240)
        columns[f'A{i}'] = 100 * np.exp(np.cumsum(returns))
    return price_csv(columns)


@pytest.fixture
def ou_values():
    """Euler-Maruyama OU path: drift -x, diffusion 0.25, h = 0.1"""
    gen = np.random.default_rng(99)
    h, n = 0.1, 5000
    x = np.zeros(n)
    noise = gen.standard_normal(n - 1)
    for t in range(n - 1):
        x[t + 1] = x[t] - h * x[t] + np.sqrt(h * 0.25) * noise[t]
    return x
