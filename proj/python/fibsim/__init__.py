"""Focused-ion-beam emitter implantation: simulation and analysis."""

import json
import os

from ._core import (
    DomainError,
    FitError,
    IntegrityError,
    ParseError,
    RangeError,
    Report,
    __version__,
    fit_affine_grid,
    fit_g2,
    fit_line,
    fit_rayleigh,
    lifetime_limited_linewidth_mhz,
    load_report,
    localize_sites,
    psf_sigma,
    render_confocal,
    run_conditional_protocol,
    sample_ion_positions,
    synth_g2,
    voigt_profile,
    wavelength_linewidth_to_frequency,
)
from . import _core

__all__ = [
    "DomainError", "FitError", "IntegrityError", "ParseError", "RangeError", "Report", "__version__",
    "default_config", "fit_affine_grid", "fit_g2", "fit_line", "fit_rayleigh", "lifetime_limited_linewidth_mhz",
    "load_config", "load_report", "localize_sites", "psf_sigma", "render_confocal", "run_campaign",
    "run_conditional_protocol", "sample_ion_positions", "synth_g2", "voigt_profile",
    "wavelength_linewidth_to_frequency",
]


def default_config():
    return json.loads(_core.default_config_json())


def load_config(path):
    with open(path) as f:
        return json.load(f)


def run_campaign(kind, config=None, *, config_path=None, seed=None, jobs=1):
    """Run a campaign from a config dict or file. Relative file references
    resolve against the config file's directory."""
    base_dir = ""
    if config_path is not None:
        config = load_config(config_path)
        base_dir = os.path.dirname(os.path.abspath(config_path))
    config = dict(config or {})
    if seed is not None:
        config["seed"] = seed
    return _core.run_campaign(kind, json.dumps(config), base_dir, jobs)
