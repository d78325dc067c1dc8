"""Run configuration: schema, defaults, and validated loading.

A run is described by a single JSON document validated against
``RUN_CONFIG_SCHEMA`` (unknown keys are rejected). Every field has a
default, so an empty document is a valid configuration; the resolved
(fully defaulted) config is what pipeline stages consume and what
``--dry-run`` prints.
"""

from __future__ import annotations

import copy
import json

import jsonschema
import numpy as np

from . import floquet, idt, physics
from .errors import ConfigError
from .fileio import read_json

__all__ = ["RUN_CONFIG_SCHEMA", "default_config", "load_config", "resolve", "RunSetup"]


def _obj(properties: dict) -> dict:
    return {"type": "object", "properties": properties, "additionalProperties": False}


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}

RUN_CONFIG_SCHEMA = _obj(
    {
        "seed": {"type": "integer", "minimum": 0, "description": "root seed; per-spectrum streams are spawned from it"},
        "physics": _obj(
            {
                "gamma_energy_ev": _POS,
                "speed_of_light_m_s": _POS,
                "planck_h_ev_s": _POS,
            }
        ),
        "scheme": _obj(
            {
                "line_velocities_mm_s": {
                    "type": "array",
                    "items": _NUM,
                    "minItems": 6,
                    "maxItems": 6,
                },
                "line_intensities": {
                    "type": "array",
                    "items": _POS,
                    "minItems": 3,
                    "maxItems": 3,
                    "description": "relative strengths of the (outer, middle, inner) line pairs",
                },
                "isomer_shift_nev": _NUM,
            }
        ),
        "scan": _obj(
            {
                "v_min_mm_s": _NUM,
                "v_max_mm_s": _NUM,
                "n_channels": _INT,
                "halves": {
                    "type": "array",
                    "items": {"enum": ["accelerating", "decelerating"]},
                    "minItems": 1,
                    "maxItems": 2,
                },
            }
        ),
        "modulation": _obj(
            {
                "m_per_sqrt_w": _POS,
                "reflection_alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "saw_freq_hz": _POS,
                "linewidth_nev": _POS,
            }
        ),
        "drive_powers_w": {
            "type": ["array", "null"],
            "items": {"type": "number", "minimum": 0},
            "description": "explicit power grid in W; null derives it from power_grid",
        },
        "power_grid": _obj(
            {
                "n_points": _INT,
                "mod_index_min": _POS,
                "mod_index_max": _POS,
            }
        ),
        "budget": _obj(
            {
                "source_activity_bq": _POS,
                "ec_branching": _POS,
                "transition_probability": _POS,
                "internal_conversion_coeff": {"type": "number", "minimum": 0},
                "solid_angle_fraction": _POS,
                "substrate_transmission": _POS,
                "compton_per_resonant": {"type": "number", "minimum": 0},
                "mismatch_per_resonant": {"type": "number", "minimum": 0},
                "n_bins": _INT,
                "duration_s": _POS,
            }
        ),
        "baseline_coeffs": {
            "type": "array",
            "items": _NUM,
            "maxItems": 5,
            "description": "baseline shape 1 + sum c_k t^k on t in [-1, 1]",
        },
        "contrast": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "fit": _obj(
            {
                "max_iterations": _INT,
                "chi2_rtol": _POS,
                "step_tol": _POS,
                "min_position_snr": {"type": "number", "minimum": 0},
                "visibility_threshold": _POS,
                "grouping_tol_mm_s": _POS,
                "contrast_guess": _POS,
                "template_m_per_sqrt_w": {
                    "type": ["number", "null"],
                    "description": "m used to predict template weights; null uses globalfit.init_m",
                },
            }
        ),
        "calib": _obj(
            {
                "sideband_spacing_mm_s": {
                    "type": ["number", "null"],
                    "description": "null derives the spacing from saw_freq_hz and the photon wavenumber",
                },
                "residual_gate_mm_s": _POS,
                "match_radius_mm_s": _POS,
            }
        ),
        "extract": _obj({"min_channels_per_linewidth": _INT}),
        "globalfit": _obj(
            {
                "eta": _POS,
                "init_m": _POS,
                "init_alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "init_norm": _POS,
                "alpha_max": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "log_m": {"type": "boolean"},
            }
        ),
        "idt": _obj(
            {
                "n_periods": _INT,
                "aperture_m": _POS,
                "wavelength_m": _POS,
                "center_freq_hz": _POS,
                "coupling_k2": _POS,
                "cap_per_period_f_m": _POS,
                "shunt_r_ohm": {"type": "number", "minimum": 0},
                "source_z_ohm": _POS,
                "propagation_loss_db": _NUM,
                "sweep_half_width_hz": _POS,
                "sweep_points": _INT,
                "trace_noise": {"type": "number", "minimum": 0},
                "trace_s11_csv": {"type": ["string", "null"]},
                "trace_s12_csv": {"type": ["string", "null"]},
            }
        ),
    }
)


def default_config() -> dict:
    """The fully documented default run configuration."""
    fitted = idt.paper_fitted_design()
    return {
        "seed": 20260810,
        "physics": {
            "gamma_energy_ev": physics.GAMMA_ENERGY_EV,
            "speed_of_light_m_s": physics.SPEED_OF_LIGHT_M_S,
            "planck_h_ev_s": physics.PLANCK_H_EV_S,
        },
        "scheme": {
            "line_velocities_mm_s": list(physics.ALPHA_FE_LINE_VELOCITIES_MM_S),
            "line_intensities": [3.0, 2.0, 1.0],
            "isomer_shift_nev": -5.0,
        },
        "scan": {
            "v_min_mm_s": -19.0,
            "v_max_mm_s": 19.0,
            "n_channels": 2048,
            "halves": ["accelerating", "decelerating"],
        },
        "modulation": {
            "m_per_sqrt_w": 4.34,
            "reflection_alpha": 0.36,
            "saw_freq_hz": 97.9e6,
            "linewidth_nev": 11.7,
        },
        "drive_powers_w": None,
        "power_grid": {"n_points": 8, "mod_index_min": 0.3, "mod_index_max": 5.0},
        "budget": {
            "source_activity_bq": 1.0e9,
            "ec_branching": 0.998,
            "transition_probability": 0.89,
            "internal_conversion_coeff": 8.56,
            "solid_angle_fraction": 3.2e-5,
            "substrate_transmission": 0.42,
            "compton_per_resonant": 0.38,
            "mismatch_per_resonant": 0.36,
            "n_bins": 1000,
            "duration_s": 864000.0,
        },
        "baseline_coeffs": [0.01, -0.03, 0.005, 0.008, -0.002],
        "contrast": 0.03,
        "fit": {
            "max_iterations": 500,
            "chi2_rtol": 1e-10,
            "step_tol": 1e-12,
            "min_position_snr": 3.0,
            "visibility_threshold": 1e-8,
            "grouping_tol_mm_s": 0.5,
            "contrast_guess": 0.03,
            "template_m_per_sqrt_w": None,
        },
        "calib": {
            "sideband_spacing_mm_s": None,
            "residual_gate_mm_s": 0.05,
            "match_radius_mm_s": 1.0,
        },
        "extract": {"min_channels_per_linewidth": 8},
        "globalfit": {
            "eta": 0.35,
            "init_m": 3.0,
            "init_alpha": 0.3,
            "init_norm": 0.7,
            "alpha_max": 0.95,
            "log_m": False,
        },
        "idt": {
            "n_periods": fitted.n_periods,
            "aperture_m": fitted.aperture_m,
            "wavelength_m": fitted.wavelength_m,
            "center_freq_hz": fitted.center_freq_rad_s / (2.0 * np.pi),
            "coupling_k2": fitted.coupling_k2,
            "cap_per_period_f_m": fitted.cap_per_period_f_m,
            "shunt_r_ohm": fitted.shunt_r_ohm,
            "source_z_ohm": fitted.source_z_ohm,
            "propagation_loss_db": -1.68,
            "sweep_half_width_hz": 2.0e6,
            "sweep_points": 801,
            "trace_noise": 0.01,
            "trace_s11_csv": None,
            "trace_s12_csv": None,
        },
    }


def _merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path: str = None, overrides: dict = None) -> dict:
    """Load, default-fill, and validate a run configuration."""
    user = {}
    if path is not None:
        user = read_json(path)
    try:
        jsonschema.validate(user, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc.message} (at {list(exc.absolute_path)})") from exc
    merged = _merge(default_config(), user)
    if overrides:
        merged = _merge(merged, overrides)
    try:
        jsonschema.validate(merged, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid configuration after overrides: {exc.message}") from exc
    return merged


class RunSetup:
    """Typed objects resolved from a validated configuration document."""

    def __init__(self, config: dict):
        self.config = config
        try:
            self.constants = physics.PhysConstants(**config["physics"])
            scheme_cfg = config["scheme"]
            self.scheme = physics.HyperfineScheme(
                line_velocities_mm_s=tuple(scheme_cfg["line_velocities_mm_s"]),
                line_intensities=tuple(scheme_cfg["line_intensities"]),
                isomer_shift_nev=scheme_cfg["isomer_shift_nev"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.seed = config["seed"]
        self.halves = list(config["scan"]["halves"])

    def scan(self, direction: str) -> physics.ScanParams:
        cfg = self.config["scan"]
        try:
            return physics.ScanParams(
                v_min_mm_s=cfg["v_min_mm_s"],
                v_max_mm_s=cfg["v_max_mm_s"],
                n_channels=cfg["n_channels"],
                direction=direction,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def saw_angular_freq_rad_s(self) -> float:
        return 2.0 * np.pi * self.config["modulation"]["saw_freq_hz"]

    @property
    def linewidth_rad_s(self) -> float:
        nev = self.config["modulation"]["linewidth_nev"]
        velocity = nev * 1e-9 / self.constants.gamma_energy_ev * self.constants.speed_of_light_m_s * 1e3
        return float(physics.velocity_to_angular_frequency(velocity, self.constants))

    @property
    def linewidth_mm_s(self) -> float:
        nev = self.config["modulation"]["linewidth_nev"]
        return nev * 1e-9 / self.constants.gamma_energy_ev * self.constants.speed_of_light_m_s * 1e3

    def modulation_model(self, mod_index: float) -> floquet.ModulationModel:
        try:
            return floquet.ModulationModel(
                mod_index=mod_index,
                reflection=self.config["modulation"]["reflection_alpha"],
                saw_angular_freq_rad_s=self.saw_angular_freq_rad_s,
                linewidth_rad_s=self.linewidth_rad_s,
                scheme=self.scheme,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def drive_powers_w(self) -> list:
        explicit = self.config["drive_powers_w"]
        if explicit is not None:
            return [float(p) for p in explicit]
        grid = self.config["power_grid"]
        m = self.config["modulation"]["m_per_sqrt_w"]
        mod_indices = np.geomspace(grid["mod_index_min"], grid["mod_index_max"], grid["n_points"])
        return [float((m0 / m) ** 2) for m0 in mod_indices]

    def template_m(self) -> float:
        explicit = self.config["fit"]["template_m_per_sqrt_w"]
        return float(explicit) if explicit is not None else float(self.config["globalfit"]["init_m"])

    def sideband_spacing_mm_s(self) -> float:
        explicit = self.config["calib"]["sideband_spacing_mm_s"]
        if explicit is not None:
            return float(explicit)
        return self.saw_angular_freq_rad_s / self.constants.photon_wavenumber_m * 1e3

    def idt_design(self) -> idt.IdtDesign:
        cfg = self.config["idt"]
        try:
            return idt.IdtDesign(
                n_periods=cfg["n_periods"],
                aperture_m=cfg["aperture_m"],
                wavelength_m=cfg["wavelength_m"],
                center_freq_rad_s=2.0 * np.pi * cfg["center_freq_hz"],
                coupling_k2=cfg["coupling_k2"],
                cap_per_period_f_m=cfg["cap_per_period_f_m"],
                shunt_r_ohm=cfg["shunt_r_ohm"],
                source_z_ohm=cfg["source_z_ohm"],
                propagation_loss=idt.db_amplitude(cfg["propagation_loss_db"]),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def resolve(path: str = None, overrides: dict = None) -> RunSetup:
    """Load a config file (or defaults) into a :class:`RunSetup`."""
    return RunSetup(load_config(path, overrides))


def dumps_config(config: dict) -> str:
    return json.dumps(config, indent=2, sort_keys=True)
