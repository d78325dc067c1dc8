"""Shared synthetic-data helpers for the test suite."""

import numpy as np
import pytest

from sawmoss import floquet, physics, specgen

OMEGA_SAW = 2 * np.pi * 97.9e6
LINEWIDTH_NEV = 11.7
M_TRUE = 4.34
ALPHA_TRUE = 0.36
CONTRAST = 0.03
BASELINE = [0.01, -0.03, 0.005, 0.008, -0.002]


def linewidth_mm_s(constants=physics.DEFAULT_CONSTANTS):
    return LINEWIDTH_NEV * 1e-9 / constants.gamma_energy_ev * constants.speed_of_light_m_s * 1e3


def linewidth_rad_s(constants=physics.DEFAULT_CONSTANTS):
    return constants.photon_wavenumber_m * linewidth_mm_s(constants) * 1e-3


def modulation_model(mod_index, alpha=ALPHA_TRUE, scheme=None):
    return floquet.ModulationModel(
        mod_index=mod_index,
        reflection=alpha,
        saw_angular_freq_rad_s=OMEGA_SAW,
        linewidth_rad_s=linewidth_rad_s(),
        scheme=scheme,
    )


def synthesize_counts(mod_index, scan, seed, *, drive_power_w=0.0, noiseless=False, budget=None):
    """Count spectrum for one drive setting, normalized to the zero-drive peak."""
    budget = budget or specgen.compute_budget()
    velocities = specgen.channel_velocities(scan)
    reference = floquet.synthesize_spectrum(modulation_model(0.0), velocities)
    values = floquet.synthesize_spectrum(modulation_model(mod_index), velocities)
    normalized = values / reference.max()
    if noiseless:
        t = specgen.normalized_channel_coordinate(scan.n_channels)
        expected = (
            budget.duration_s
            * budget.per_bin_rate_hz
            * specgen.baseline_polynomial(BASELINE, t)
            * (1 - CONTRAST * normalized)
        )
        return specgen.CountSpectrum(
            channels=np.arange(scan.n_channels),
            counts=expected,
            scan=scan,
            drive_power_w=drive_power_w,
            seed=seed,
            duration_s=budget.duration_s,
        )
    return specgen.generate_counts(
        normalized, budget, BASELINE, CONTRAST, seed, scan, drive_power_w=drive_power_w
    )


@pytest.fixture(scope="session")
def default_scheme():
    return physics.default_alpha_fe_scheme()


@pytest.fixture(scope="session")
def scan_2048():
    return physics.ScanParams(n_channels=2048)
