"""Run configuration: nested dataclasses, JSON loading, recipe merging and validation.

Precedence, lowest first: defaults, recipe, JSON file, command-line flags.
"""
import copy
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import List, Optional

from utils.bayes_core import McmcSettings
from utils.errors import ConfigValidationError
from utils.forecast_diagnostics import parse_method
from utils.helpers import check_choice, check_int, check_number, import_from_json
from utils.market_data import WINDOW_MODES
from utils.recipes import recipes
from utils.resilience import MODEL_TAGS, PRIOR_PRESETS

SIMULATION_KINDS = ('langevin', 'gle', 'two-scale', 'synthetic')
COMMANDS = ('preprocess', 'fit-gle', 'diagnose', 'predict', 'resilience', 'simulate')


@dataclass
class InputsConfig:
    prices: Optional[str] = None
    series: Optional[str] = None
    model: Optional[str] = None


@dataclass
class PreprocessConfig:
    n: int = 13
    tau: int = 5
    shift: int = 5
    window_mode: str = 'trailing'
    max_missing_fraction: float = 0.005


def _gle_mcmc():
    return McmcSettings(walkers=100, steps=100000, n_burn=450, thin=450)


@dataclass
class GleConfig:
    n_bins: int = 10
    bin_mode: str = 'equal_width'
    k_max: int = 6
    plateau_tol: float = 0.1
    step_h: float = 1.0
    mcmc: McmcSettings = field(default_factory=_gle_mcmc)


@dataclass
class ForecastConfig:
    alphas: List[float] = field(default_factory=lambda: [0.8, 0.85, 0.9])
    methods: List[str] = field(default_factory=lambda: ['naive', 'le', 'gle3'])
    estimate: str = 'map'
    mcmc: McmcSettings = field(default_factory=_gle_mcmc)


@dataclass
class DiagnoseConfig:
    max_lag: int = 30
    sim_steps: int = 100000
    increment_lags: List[int] = field(default_factory=lambda: [1, 2])
    grid_points: int = 512


@dataclass
class ResilienceConfig:
    model_tag: str = 'markov'
    window_size: int = 500
    window_shift: int = 15
    gamma: float = 2.0
    step_h: float = 1.0
    priors: Optional[str] = None
    detrend_width: Optional[float] = None
    mcmc: McmcSettings = field(default_factory=lambda: McmcSettings(walkers=50, steps=15000, n_burn=200, thin=1))


@dataclass
class SimulateConfig:
    kind: str = 'synthetic'
    n_steps: int = 30000
    step_h: float = 2000.0 / 30000
    initial_state: Optional[List[float]] = None
    n_paths: int = 1
    coupling_start: float = 0.5
    coupling_end: float = 4.0
    ou_rate: float = 0.1
    ou_diffusion: float = 0.1
    # langevin: D1 = -rate * x, D2 = diffusion
    langevin_rate: float = 1.0
    langevin_diffusion: float = 0.25
    theta: List[float] = field(default_factory=lambda: [15.0, 1.0, 0.0, -1.0, 0.5, 2.0])


@dataclass
class RunConfig:
    inputs: InputsConfig = field(default_factory=InputsConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    gle: GleConfig = field(default_factory=GleConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    diagnose: DiagnoseConfig = field(default_factory=DiagnoseConfig)
    resilience: ResilienceConfig = field(default_factory=ResilienceConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    seed: int = 0
    output: str = 'runs'
    threads: int = 1
    recipe: Optional[str] = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        """Build a config from a (partial) dictionary over the defaults; unknown keys are errors"""
        errors = []
        merged = _merge(cls().to_dict(), data or {}, '', errors)
        if errors:
            raise ConfigValidationError(errors)
        return _build(cls, merged)


def _merge(base, override, prefix, errors):
    result = copy.deepcopy(base)
    if not isinstance(override, dict):
        errors.append(f'{prefix or "config"} must be an object')
        return result

    for key, value in override.items():
        name = f'{prefix}{key}'
        if key not in base:
            errors.append(f'unknown configuration key {name}')
        elif isinstance(base[key], dict):
            result[key] = _merge(base[key], value, f'{name}.', errors)
        else:
            result[key] = copy.deepcopy(value)
    return result


def _build(cls, data):
    kwargs = {}
    for f in fields(cls):
        value = data[f.name]
        default = f.default_factory() if callable(f.default_factory) else f.default
        if is_dataclass(default):
            value = _build(type(default), value)
        kwargs[f.name] = value
    return cls(**kwargs)


def load_config_file(path):
    loaded = import_from_json(path)
    if not loaded['success']:
        raise ConfigValidationError([f'cannot read config file {path}: {loaded["error"]}'])
    data = loaded['data']
    # a run manifest re-runs its recorded config
    if isinstance(data, dict) and 'config_hash' in data and 'config' in data:
        data = data['config']
    return data


def set_path(data, dotted, value):
    """Set data['a']['b'] for dotted='a.b', creating objects on the way"""
    keys = dotted.split('.')
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value
    return data


def deep_update(base, override):
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            deep_update(base[key], value)
        else:
            base[key] = copy.deepcopy(value)
    return base


def resolve_config(recipe=None, config_path=None, overrides=None):
    """Layer recipe, JSON file and flag overrides over the defaults"""
    layered = {}
    if recipe is not None:
        if recipe not in recipes:
            raise ConfigValidationError([f"unknown recipe {recipe!r}; available: {', '.join(sorted(recipes))}"])
        deep_update(layered, recipes[recipe])
        layered['recipe'] = recipe
    if config_path is not None:
        deep_update(layered, load_config_file(config_path))
    deep_update(layered, overrides or {})
    return RunConfig.from_dict(layered)


def _check_mcmc(errors, prefix, mcmc: McmcSettings, dim=None):
    check_int(errors, f'{prefix}.walkers', mcmc.walkers, minimum=2)
    check_int(errors, f'{prefix}.steps', mcmc.steps, minimum=1)
    check_int(errors, f'{prefix}.n_burn', mcmc.n_burn, minimum=0)
    check_int(errors, f'{prefix}.thin', mcmc.thin, minimum=1)
    if all(isinstance(v, int) for v in (mcmc.walkers, mcmc.steps, mcmc.n_burn, mcmc.thin)):
        if mcmc.n_burn >= mcmc.steps:
            errors.append(f'{prefix}.n_burn must be < {prefix}.steps')
        if dim is not None and mcmc.walkers < 2 * dim:
            errors.append(f'{prefix}.walkers must be >= 2 * {dim} parameters = {2 * dim} (got {mcmc.walkers})')


def _check_preprocess(errors, cfg):
    p = cfg.preprocess
    check_int(errors, 'preprocess.n', p.n, minimum=2)
    check_int(errors, 'preprocess.tau', p.tau, minimum=2)
    check_int(errors, 'preprocess.shift', p.shift, minimum=1)
    check_choice(errors, 'preprocess.window_mode', p.window_mode, WINDOW_MODES)
    check_number(errors, 'preprocess.max_missing_fraction', p.max_missing_fraction, 0.0, 1.0)


def _check_gle(errors, cfg):
    g = cfg.gle
    check_int(errors, 'gle.n_bins', g.n_bins, minimum=2)
    check_choice(errors, 'gle.bin_mode', g.bin_mode, ('equal_width', 'equal_count'))
    check_int(errors, 'gle.k_max', g.k_max, minimum=0)
    check_number(errors, 'gle.plateau_tol', g.plateau_tol, 0.0, 1.0, low_open=True)
    check_number(errors, 'gle.step_h', g.step_h, 0.0, low_open=True)
    dim = None
    if isinstance(g.n_bins, int) and isinstance(g.k_max, int):
        dim = 2 * g.n_bins + g.k_max
    _check_mcmc(errors, 'gle.mcmc', g.mcmc, dim)


def _check_forecast(errors, cfg):
    f = cfg.forecast
    if not f.alphas:
        errors.append('forecast.alphas must not be empty')
    for alpha in f.alphas:
        check_number(errors, 'forecast.alphas[]', alpha, 0.0, 1.0, low_open=True, high_open=True)
    if not f.methods:
        errors.append('forecast.methods must not be empty')
    dims = [2 * cfg.gle.n_bins if isinstance(cfg.gle.n_bins, int) else 0]
    for method in f.methods:
        try:
            k = parse_method(method)
        except ValueError as e:
            errors.append(f'forecast.methods: {e}')
            continue
        if k is not None and isinstance(cfg.gle.n_bins, int):
            dims.append(2 * cfg.gle.n_bins + k)
    check_choice(errors, 'forecast.estimate', f.estimate, ('map', 'mean'))
    _check_mcmc(errors, 'forecast.mcmc', f.mcmc, max(dims))


def _check_diagnose(errors, cfg):
    d = cfg.diagnose
    check_int(errors, 'diagnose.max_lag', d.max_lag, minimum=1)
    check_int(errors, 'diagnose.sim_steps', d.sim_steps, minimum=2)
    check_int(errors, 'diagnose.grid_points', d.grid_points, minimum=2)
    for lag in d.increment_lags:
        check_int(errors, 'diagnose.increment_lags[]', lag, minimum=1)


def _check_resilience(errors, cfg):
    r = cfg.resilience
    check_choice(errors, 'resilience.model_tag', r.model_tag, MODEL_TAGS)
    check_int(errors, 'resilience.window_size', r.window_size, minimum=4)
    check_int(errors, 'resilience.window_shift', r.window_shift, minimum=1)
    check_number(errors, 'resilience.gamma', r.gamma, 1.0)
    check_number(errors, 'resilience.step_h', r.step_h, 0.0, low_open=True)
    if r.detrend_width is not None:
        check_number(errors, 'resilience.detrend_width', r.detrend_width, 0.0, low_open=True)

    nonmarkov = r.model_tag in MODEL_TAGS and r.model_tag != 'markov'
    if r.priors is not None:
        check_choice(errors, 'resilience.priors', r.priors, tuple(PRIOR_PRESETS))
        preset = PRIOR_PRESETS.get(r.priors)
        if preset is not None and nonmarkov and preset.theta5_bounds is None:
            errors.append(f'resilience.priors {r.priors!r} has no theta5 range for {r.model_tag}')
    _check_mcmc(errors, 'resilience.mcmc', r.mcmc, 6 if nonmarkov else 5)


def _check_simulate(errors, cfg):
    s = cfg.simulate
    check_choice(errors, 'simulate.kind', s.kind, SIMULATION_KINDS)
    check_int(errors, 'simulate.n_steps', s.n_steps, minimum=1)
    check_number(errors, 'simulate.step_h', s.step_h, 0.0, low_open=True)
    check_int(errors, 'simulate.n_paths', s.n_paths, minimum=1)
    check_number(errors, 'simulate.coupling_start', s.coupling_start)
    check_number(errors, 'simulate.coupling_end', s.coupling_end)
    check_number(errors, 'simulate.ou_rate', s.ou_rate, 0.0, low_open=True)
    check_number(errors, 'simulate.ou_diffusion', s.ou_diffusion, 0.0)
    check_number(errors, 'simulate.langevin_diffusion', s.langevin_diffusion, 0.0)
    if s.kind == 'two-scale':
        if len(s.theta) != 6:
            errors.append('simulate.theta needs six values theta0..theta5')
        elif s.theta[5] == 0:
            errors.append('simulate.theta[5] must be nonzero')


def validate_run_config(cfg: RunConfig, command=None):
    """Check every field relevant to command (all sections when None)"""
    errors = []
    check_int(errors, 'seed', cfg.seed, minimum=0)
    check_int(errors, 'threads', cfg.threads, minimum=1)
    if not cfg.output:
        errors.append('output is required')

    sections = {
        'preprocess': [_check_preprocess],
        'fit-gle': [_check_gle],
        'diagnose': [_check_gle, _check_diagnose],
        'predict': [_check_gle, _check_forecast],
        'resilience': [_check_resilience],
        'simulate': [_check_simulate],
    }
    checks = sections.get(command) or [_check_preprocess, _check_gle, _check_forecast, _check_diagnose,
                                        _check_resilience, _check_simulate]
    for check in checks:
        check(errors, cfg)

    return {'valid': len(errors) == 0, 'errors': errors}
