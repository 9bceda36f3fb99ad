# -*- coding: utf-8 -*-

from typing import Dict

# sampler presets per resilience experiment (walkers / steps / burn-in)
mcmc_presets: Dict[str, dict] = {
    'markov': {'walkers': 50, 'steps': 15000, 'n_burn': 200, 'thin': 1},
    'markov_synthetic': {'walkers': 50, 'steps': 20000, 'n_burn': 200, 'thin': 1},
    'nonmarkov': {'walkers': 50, 'steps': 20000, 'n_burn': 200, 'thin': 1},
    'nonmarkov_synthetic': {'walkers': 50, 'steps': 30000, 'n_burn': 200, 'thin': 1},
    'nonmarkov_wide': {'walkers': 50, 'steps': 30000, 'n_burn': 200, 'thin': 1},
    'gle': {'walkers': 100, 'steps': 100000, 'n_burn': 450, 'thin': 450},
}

# named experiments, each a partial RunConfig
recipes: Dict[str, dict] = {
    # disjoint weekly windows
    'weekly': {
        'preprocess': {'n': 13, 'tau': 5, 'shift': 5, 'window_mode': 'trailing'},
        'gle': {'n_bins': 10, 'bin_mode': 'equal_width', 'k_max': 6, 'mcmc': mcmc_presets['gle']},
        'forecast': {'alphas': [0.8, 0.85, 0.9], 'methods': ['naive', 'le', 'gle3']},
    },

    # overlapping 42-day windows
    'monthly42': {
        'preprocess': {'n': 13, 'tau': 42, 'shift': 1, 'window_mode': 'centered'},
        'resilience': {'model_tag': 'markov', 'window_size': 500, 'window_shift': 15,
                       'priors': 'markov', 'mcmc': mcmc_presets['markov']},
    },

    # long kernel on overlapping windows, spikes expected at lags 42 and 84
    'overlap-artifact': {
        'preprocess': {'n': 13, 'tau': 42, 'shift': 1, 'window_mode': 'centered'},
        'gle': {'n_bins': 10, 'bin_mode': 'equal_width', 'k_max': 90,
                'mcmc': {'walkers': 222, 'steps': 6000, 'n_burn': 2000, 'thin': 20}},
    },

    'synthetic-resilience': {
        'simulate': {'kind': 'synthetic', 'n_steps': 30000, 'step_h': 2000.0 / 30000,
                     'coupling_start': 0.5, 'coupling_end': 4.0},
        'resilience': {'model_tag': 'nonmarkov_slow_hidden', 'window_size': 500, 'window_shift': 15,
                       'gamma': 2.0, 'step_h': 1.0, 'priors': 'nonmarkov_slow',
                       'mcmc': mcmc_presets['nonmarkov_synthetic']},
    },

    'detrended-markov': {
        'preprocess': {'n': 13, 'tau': 42, 'shift': 1, 'window_mode': 'centered'},
        'resilience': {'model_tag': 'markov', 'window_size': 500, 'window_shift': 15, 'detrend_width': 10.0,
                       'priors': 'markov', 'mcmc': mcmc_presets['markov']},
    },

    # observed scale at least gamma times slower than the hidden one
    'inverse-separation': {
        'preprocess': {'n': 13, 'tau': 42, 'shift': 1, 'window_mode': 'centered'},
        'resilience': {'model_tag': 'nonmarkov_fast_hidden', 'window_size': 500, 'window_shift': 15,
                       'gamma': 2.0, 'priors': 'nonmarkov_fast', 'mcmc': mcmc_presets['nonmarkov']},
    },

    'wide-prior': {
        'preprocess': {'n': 13, 'tau': 42, 'shift': 1, 'window_mode': 'centered'},
        'resilience': {'model_tag': 'nonmarkov_slow_hidden', 'window_size': 500, 'window_shift': 15,
                       'gamma': 2.0, 'priors': 'nonmarkov_slow_wide', 'mcmc': mcmc_presets['nonmarkov_wide']},
    },
}
