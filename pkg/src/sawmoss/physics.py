"""Physical constants, unit conversions, and the alpha-Fe hyperfine level scheme.

Canonical internal unit for spectral positions is angular frequency (rad/s);
Doppler velocities (mm/s) and energies (neV) are converted at module
boundaries. Positive velocity means the source approaches the absorber
(blue shift).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SPEED_OF_LIGHT_M_S",
    "PLANCK_H_EV_S",
    "GAMMA_ENERGY_EV",
    "PhysConstants",
    "HyperfineScheme",
    "ScanParams",
    "DEFAULT_CONSTANTS",
    "velocity_to_angular_frequency",
    "angular_frequency_to_velocity",
    "energy_to_frequency",
    "frequency_to_energy",
    "default_alpha_fe_scheme",
]

SPEED_OF_LIGHT_M_S = 2.99792458e8
PLANCK_H_EV_S = 4.135667696e-15
GAMMA_ENERGY_EV = 14412.5  # 14.4 keV Mossbauer line of 57Fe

# Resonance velocities of the alpha-Fe sextet relative to a 57Co:Rh source,
# mm/s, ordered by velocity. The pattern is outer/middle/inner/inner/middle/
# outer; the common -0.115 mm/s centroid is the source-absorber isomer shift.
ALPHA_FE_LINE_VELOCITIES_MM_S = (-5.42, -3.19, -0.95, 0.72, 2.96, 5.19)

# Intensity class of each line in velocity order.
_LINE_CLASSES = ("outer", "middle", "inner", "inner", "middle", "outer")


@dataclass(frozen=True)
class PhysConstants:
    """Constants of the gamma transition used for unit conversions.

    The photon wavenumber is always derived from the transition energy, so
    the relation k0 = 2*pi*E/(h*c) holds by construction. Override
    ``gamma_energy_ev`` to change it.
    """

    gamma_energy_ev: float = GAMMA_ENERGY_EV
    speed_of_light_m_s: float = SPEED_OF_LIGHT_M_S
    planck_h_ev_s: float = PLANCK_H_EV_S

    def __post_init__(self):
        if self.gamma_energy_ev <= 0 or self.speed_of_light_m_s <= 0 or self.planck_h_ev_s <= 0:
            raise ValueError("physical constants must be positive")

    @property
    def photon_wavenumber_m(self) -> float:
        """k0 in 1/m: 2*pi*E_gamma / (h*c)."""
        return 2.0 * np.pi * self.gamma_energy_ev / (self.planck_h_ev_s * self.speed_of_light_m_s)


DEFAULT_CONSTANTS = PhysConstants()


@dataclass(frozen=True)
class HyperfineScheme:
    """Six Zeeman-split transition lines with three pairwise intensities.

    ``line_intensities`` is (outer, middle, inner): the relative strengths of
    the outermost, middle, and innermost line pairs. They are treated as
    measured quantities downstream; the (3, 2, 1) default is a configuration
    choice for synthetic data.
    """

    line_velocities_mm_s: tuple = ALPHA_FE_LINE_VELOCITIES_MM_S
    line_intensities: tuple = (3.0, 2.0, 1.0)
    isomer_shift_nev: float = -5.0
    symmetry_tol_mm_s: float = field(default=0.06, repr=False)

    def __post_init__(self):
        v = np.asarray(self.line_velocities_mm_s, dtype=float)
        if v.shape != (6,):
            raise ValueError("scheme requires exactly 6 line velocities")
        if np.any(np.diff(v) <= 0):
            raise ValueError("line velocities must be strictly increasing")
        if len(self.line_intensities) != 3 or any(s <= 0 for s in self.line_intensities):
            raise ValueError("line intensities (outer, middle, inner) must be positive")
        # mirror symmetry about the centroid, within the published precision
        mirrored = 2.0 * v.mean() - v[::-1]
        if np.max(np.abs(mirrored - v)) > self.symmetry_tol_mm_s:
            raise ValueError(
                f"line pattern asymmetric beyond {self.symmetry_tol_mm_s} mm/s about its centroid"
            )

    @property
    def centroid_mm_s(self) -> float:
        return float(np.mean(self.line_velocities_mm_s))

    @property
    def line_classes(self) -> tuple:
        """Intensity class ('outer'/'middle'/'inner') of each line, in velocity order."""
        return _LINE_CLASSES

    def line_weights(self) -> np.ndarray:
        """Per-line relative intensity s_i, in velocity order."""
        by_class = dict(zip(("outer", "middle", "inner"), self.line_intensities))
        return np.array([by_class[c] for c in _LINE_CLASSES], dtype=float)


@dataclass(frozen=True)
class ScanParams:
    """Velocity scan of the drive under constant acceleration.

    One ScanParams describes one half (accelerating or decelerating) of the
    triangular velocity sweep; each half is acquired as its own spectrum.
    """

    v_min_mm_s: float = -19.0
    v_max_mm_s: float = 19.0
    n_channels: int = 2048
    scan_mode: str = "constant_acceleration"
    direction: str = "accelerating"

    def __post_init__(self):
        if not self.v_min_mm_s < self.v_max_mm_s:
            raise ValueError("scan requires v_min < v_max")
        if self.n_channels < 2:
            raise ValueError("scan requires at least 2 channels")
        if self.scan_mode != "constant_acceleration":
            raise ValueError(f"unsupported scan mode: {self.scan_mode!r}")
        if self.direction not in ("accelerating", "decelerating"):
            raise ValueError(f"unknown scan direction: {self.direction!r}")


def velocity_to_angular_frequency(v_mm_s, constants: PhysConstants = DEFAULT_CONSTANTS):
    """Doppler detuning (rad/s) of the gamma line for source velocity v (mm/s).

    Linear relation k0 * v; positive velocity (approaching source) gives a
    positive (blue) shift.
    """
    return constants.photon_wavenumber_m * np.asarray(v_mm_s, dtype=float) * 1e-3


def angular_frequency_to_velocity(omega_rad_s, constants: PhysConstants = DEFAULT_CONSTANTS):
    """Inverse of :func:`velocity_to_angular_frequency`; returns mm/s."""
    return np.asarray(omega_rad_s, dtype=float) / constants.photon_wavenumber_m * 1e3


def energy_to_frequency(energy_nev, constants: PhysConstants = DEFAULT_CONSTANTS):
    """Convert an energy interval (neV) to an ordinary frequency (MHz)."""
    return np.asarray(energy_nev, dtype=float) * 1e-9 / constants.planck_h_ev_s * 1e-6


def frequency_to_energy(freq_mhz, constants: PhysConstants = DEFAULT_CONSTANTS):
    """Convert an ordinary frequency (MHz) to an energy interval (neV)."""
    return np.asarray(freq_mhz, dtype=float) * 1e6 * constants.planck_h_ev_s * 1e9


def default_alpha_fe_scheme(line_intensities=(3.0, 2.0, 1.0)) -> HyperfineScheme:
    """The alpha-57Fe sextet against a 57Co:Rh source with configurable intensities."""
    return HyperfineScheme(
        line_velocities_mm_s=ALPHA_FE_LINE_VELOCITIES_MM_S,
        line_intensities=tuple(float(s) for s in line_intensities),
    )
