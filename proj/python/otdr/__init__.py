"""OTDR reflective event toolkit.

Thin Python layer over the native core. Configurations are plain dicts;
missing keys keep their defaults.
"""

import json

from . import _core
from ._core import Model, OtdrError, optimum_bound

__all__ = [
    "Model",
    "OtdrError",
    "calibrate_glrt_threshold",
    "dataset_summary",
    "default_sim_config",
    "glrt_detect",
    "load_raw_scores",
    "matched_filter_pd",
    "normalize",
    "optimum_bound",
    "pulse_template",
    "report_from_raw_scores",
    "simulate_batch",
    "simulate_trace",
]


def _cfg(config):
    return "" if config is None else json.dumps(config)


def default_sim_config():
    return json.loads(_core.default_sim_config())


def pulse_template(config=None):
    return _core.pulse_template(_cfg(config))


def simulate_trace(snr_db, reflectance_db, position_m, seed, config=None):
    return _core.simulate_trace(snr_db, reflectance_db, position_m, seed, _cfg(config))


def simulate_batch(n_traces, config=None):
    return _core.simulate_batch(n_traces, _cfg(config))


def dataset_summary(n_traces, config=None):
    return _core.dataset_summary(n_traces, _cfg(config))


def normalize(values, config=None):
    return _core.normalize(values, _cfg(config))


def matched_filter_pd(snr_db, p_fa, trials=10000, seed=1, config=None):
    """Returns (monte_carlo_pd, monte_carlo_pfa, closed_form_pd)."""
    return _core.matched_filter_pd(snr_db, p_fa, trials, seed, _cfg(config))


def glrt_detect(window, tau, config=None):
    return _core.glrt_detect(window, tau, _cfg(config))


def calibrate_glrt_threshold(p_fa, n_monte_carlo=20000, seed=1, config=None):
    return _core.calibrate_glrt_threshold(p_fa, n_monte_carlo, seed, _cfg(config))


def load_raw_scores(path):
    """Per-item scores and predictions, one dict of arrays per detector/variant."""
    return _core.load_raw_scores(str(path))


def report_from_raw_scores(path):
    return _core.report_from_raw_scores(str(path))
