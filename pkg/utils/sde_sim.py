"""Euler-Maruyama simulators for the Langevin, GLE, two-scale and synthetic models.

Every simulator draws its Gaussian increments up front from one PCG64
generator seeded by SimConfig.seed, so identical configurations give
bit-identical paths and the kernel-free GLE reproduces the Langevin path.
"""
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from utils.errors import DivergenceError, NegativeDiffusionError, SimulationError
from utils.helpers import export_to_json

logger = logging.getLogger(__name__)

RNG_ALGORITHM = 'PCG64'
SYNTHETIC_STEPS = 30000
SYNTHETIC_DURATION = 2000.0


@dataclass
class SimConfig:
    step_h: float
    n_steps: int
    seed: int = 0
    initial_state: object = 0.0
    history: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not self.step_h > 0:
            raise ValueError(f'step_h must be > 0 (got {self.step_h})')
        if int(self.n_steps) < 1:
            raise ValueError(f'n_steps must be >= 1 (got {self.n_steps})')
        self.n_steps = int(self.n_steps)

    def rng(self):
        return np.random.Generator(np.random.PCG64(self.seed))

    def as_dict(self):
        data = asdict(self)
        if data['history'] is not None:
            data['history'] = [float(v) for v in data['history']]
        if isinstance(data['initial_state'], np.ndarray):
            data['initial_state'] = data['initial_state'].tolist()
        return data


@dataclass(frozen=True)
class SyntheticSystem:
    coupling_start: float = 0.5
    coupling_end: float = 4.0
    ou_rate: float = 0.1
    ou_diffusion: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.coupling_start) and np.isfinite(self.coupling_end)):
            raise ValueError('coupling values must be finite')
        if not self.ou_rate > 0:
            raise ValueError(f'ou_rate must be > 0 (got {self.ou_rate})')
        if self.ou_diffusion < 0:
            raise ValueError(f'ou_diffusion must be >= 0 (got {self.ou_diffusion})')


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    hidden: Optional[np.ndarray] = None
    coupling: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.x)


def _metadata(kind, cfg, **extra):
    meta = {'model': kind, 'config': cfg.as_dict(), 'seed': cfg.seed, 'rng': RNG_ALGORITHM}
    meta.update(extra)
    return meta


def _split_state(initial_state, default_hidden=0.0):
    state = np.atleast_1d(np.asarray(initial_state, dtype=float))
    hidden = state[1] if state.size > 1 else default_hidden
    return float(state[0]), float(hidden)


def simulate_langevin(drift: Callable, diffusion: Callable, cfg: SimConfig):
    """x_{t+1} = x_t + h D1(x_t) + sqrt(h D2(x_t)) xi_t"""
    h = cfg.step_h
    noise = cfg.rng().standard_normal(cfg.n_steps)
    x = np.empty(cfg.n_steps + 1)
    x[0], _ = _split_state(cfg.initial_state)

    for t in range(cfg.n_steps):
        d2 = diffusion(x[t])
        if d2 < 0:
            raise NegativeDiffusionError(t, d2)
        x[t + 1] = x[t] + h * drift(x[t]) + np.sqrt(h * d2) * noise[t]
        if not np.isfinite(x[t + 1]):
            raise DivergenceError(t + 1)

    return Trajectory(t=np.arange(cfg.n_steps + 1) * h, x=x, metadata=_metadata('langevin', cfg))


def simulate_gle(model, cfg: SimConfig):
    """Euler-Maruyama for the binned GLE with a discrete memory kernel"""
    h = cfg.step_h
    kernel = np.asarray(model.kernel, dtype=float)
    k_max = kernel.size
    drift = np.asarray(model.drift_per_bin, dtype=float)
    diffusion = np.asarray(model.diffusion_per_bin, dtype=float)
    if (diffusion < 0).any():
        raise NegativeDiffusionError(0, float(diffusion.min()))

    noise = cfg.rng().standard_normal(cfg.n_steps)
    x0, _ = _split_state(cfg.initial_state)

    zero_padded = False
    if k_max:
        if cfg.history is not None and len(cfg.history) >= k_max:
            history = np.asarray(cfg.history, dtype=float)[-k_max:]
        else:
            if cfg.history is not None:
                logger.warning('history of length %d shorter than kernel %d, zero-padding', len(cfg.history), k_max)
            history = np.zeros(k_max)
            if cfg.history is not None and len(cfg.history):
                history[-len(cfg.history):] = cfg.history
            zero_padded = True
    else:
        history = np.zeros(0)

    # buffer holds the history followed by the trajectory
    buffer = np.empty(k_max + cfg.n_steps + 1)
    buffer[:k_max] = history
    buffer[k_max] = x0
    reversed_kernel = kernel[::-1]

    for t in range(cfg.n_steps):
        i = k_max + t
        b = model.bin_index(buffer[i])
        memory = reversed_kernel @ buffer[i - k_max:i] if k_max else 0.0
        buffer[i + 1] = buffer[i] + h * (drift[b] + memory) + np.sqrt(h * diffusion[b]) * noise[t]
        if not np.isfinite(buffer[i + 1]):
            raise DivergenceError(t + 1)

    return Trajectory(
        t=np.arange(cfg.n_steps + 1) * h,
        x=buffer[k_max:].copy(),
        metadata=_metadata('gle', cfg, k_max=k_max, zero_padded=zero_padded),
    )


def cubic_drift(theta, x):
    """theta0 + theta1 x + theta2 x^2 + theta3 x^3"""
    return theta[0] + x * (theta[1] + x * (theta[2] + x * theta[3]))


def simulate_two_scale(theta, cfg: SimConfig):
    """Cubic-drift observable driven by a hidden OU process lambda instead of white noise"""
    theta = np.asarray(theta, dtype=float)
    if theta.size != 6:
        raise ValueError(f'two-scale model needs six parameters theta0..theta5 (got {theta.size})')
    if theta[5] == 0:
        raise SimulationError('theta5 must be nonzero')

    h = cfg.step_h
    rate = 1.0 / theta[5] ** 2
    noise = cfg.rng().standard_normal(cfg.n_steps)
    x = np.empty(cfg.n_steps + 1)
    lam = np.empty(cfg.n_steps + 1)
    x[0], lam[0] = _split_state(cfg.initial_state)

    lam_noise = np.sqrt(h * rate) * noise
    for t in range(cfg.n_steps):
        x[t + 1] = x[t] + h * (cubic_drift(theta, x[t]) + theta[4] * lam[t])
        lam[t + 1] = lam[t] - h * rate * lam[t] + lam_noise[t]
        if not (np.isfinite(x[t + 1]) and np.isfinite(lam[t + 1])):
            raise DivergenceError(t + 1)

    return Trajectory(
        t=np.arange(cfg.n_steps + 1) * h, x=x, hidden=lam,
        metadata=_metadata('two-scale', cfg, theta=theta.tolist()),
    )


def synthetic_fixed_point():
    """Stable real root of 15 + x - x^3"""
    roots = np.roots([-1.0, 0.0, 1.0, 15.0])
    real = roots[np.abs(roots.imag) < 1e-9].real
    return float(real.max())


def default_synthetic_config(seed=0, initial_state=None):
    """30000 steps over the time interval [0, 2000]"""
    if initial_state is None:
        initial_state = (synthetic_fixed_point(), 0.0)
    return SimConfig(step_h=SYNTHETIC_DURATION / SYNTHETIC_STEPS, n_steps=SYNTHETIC_STEPS,
                     seed=seed, initial_state=initial_state)


def simulate_synthetic(system: SyntheticSystem = None, cfg: SimConfig = None):
    """x' = 15 + x - x^3 + q(t) y, y' = -rate y + sqrt(D) Gamma, q ramped linearly"""
    system = system or SyntheticSystem()
    cfg = cfg or default_synthetic_config()
    h = cfg.step_h
    n = cfg.n_steps

    coupling = np.linspace(system.coupling_start, system.coupling_end, n + 1)
    noise = np.sqrt(system.ou_diffusion * h) * cfg.rng().standard_normal(n)
    x = np.empty(n + 1)
    y = np.empty(n + 1)
    x[0], y[0] = _split_state(cfg.initial_state)

    for t in range(n):
        x[t + 1] = x[t] + h * (15.0 + x[t] - x[t] ** 3 + coupling[t] * y[t])
        y[t + 1] = y[t] - h * system.ou_rate * y[t] + noise[t]
        if not (np.isfinite(x[t + 1]) and np.isfinite(y[t + 1])):
            raise DivergenceError(t + 1)

    return Trajectory(
        t=np.arange(n + 1) * h, x=x, hidden=y, coupling=coupling,
        metadata=_metadata('synthetic', cfg, system=asdict(system)),
    )


def simulate_ensemble(simulator, cfg: SimConfig, n_paths, n_jobs=1, **kwargs):
    """Independent paths with child seeds spawned from cfg.seed"""
    children = np.random.SeedSequence(cfg.seed).spawn(n_paths)
    seeds = [int(child.generate_state(1)[0]) for child in children]
    configs = [SimConfig(step_h=cfg.step_h, n_steps=cfg.n_steps, seed=s,
                         initial_state=cfg.initial_state, history=cfg.history) for s in seeds]
    return Parallel(n_jobs=n_jobs)(delayed(simulator)(cfg=c, **kwargs) for c in configs)


def save_trajectory(trajectory, path):
    """CSV `t,x[,lambda]` plus a JSON metadata sidecar"""
    path = Path(path)
    columns = {'t': trajectory.t, 'x': trajectory.x}
    if trajectory.hidden is not None:
        columns['lambda'] = trajectory.hidden
    pd.DataFrame(columns).to_csv(path, index=False, float_format='%.17g')

    sidecar = path.with_suffix(path.suffix + '.json')
    result = export_to_json(trajectory.metadata, sidecar)
    if not result['success']:
        raise OSError(result['error'])
    return path, sidecar
