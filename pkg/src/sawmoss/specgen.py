"""Synthetic spectrometer: counting budget, scan geometry, Poisson channel data.

The counting budget chains the published loss factors of the spectrometer
into a detected 14.4 keV rate, adds the non-resonant backgrounds, and
spreads the total over the energy bins. Channel data are drawn Poisson
around ``duration * per_bin_rate * baseline(t) * (1 - contrast * S)`` with
a seedable, portable generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .physics import ScanParams

__all__ = [
    "CountingBudget",
    "CountSpectrum",
    "compute_budget",
    "generate_counts",
    "channel_velocities",
    "acceleration_to_channel_map",
    "baseline_polynomial",
    "normalized_channel_coordinate",
    "derive_spectrum_seeds",
]

DEFAULT_DURATION_S = 864000.0  # 10 days


@dataclass(frozen=True)
class CountingBudget:
    """Detection rates of the spectrometer, per source decay bookkeeping."""

    source_activity_bq: float
    detected_fraction_14kev: float
    resonant_rate_hz: float
    compton_rate_hz: float
    mismatch_rate_hz: float
    total_rate_hz: float
    per_bin_rate_hz: float
    duration_s: float

    def __post_init__(self):
        rates = (
            self.resonant_rate_hz,
            self.compton_rate_hz,
            self.mismatch_rate_hz,
            self.total_rate_hz,
            self.per_bin_rate_hz,
        )
        if any(r < 0 for r in rates) or self.duration_s <= 0:
            raise ValueError("rates must be nonnegative and duration positive")
        parts = self.resonant_rate_hz + self.compton_rate_hz + self.mismatch_rate_hz
        if abs(parts - self.total_rate_hz) > 1e-6 * max(self.total_rate_hz, 1.0):
            raise ValueError("total rate must equal resonant + backgrounds")


@dataclass(frozen=True)
class CountSpectrum:
    """Channel-indexed photon counts with acquisition metadata."""

    channels: np.ndarray
    counts: np.ndarray
    scan: ScanParams
    drive_power_w: float
    seed: int
    duration_s: float
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.counts.shape != self.channels.shape:
            raise ValueError("channels and counts must align")
        if self.counts.size != self.scan.n_channels:
            raise ValueError("counts length must equal scan.n_channels")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")


def compute_budget(
    source_activity_bq: float = 1.0e9,
    *,
    ec_branching: float = 0.998,
    transition_probability: float = 0.89,
    internal_conversion_coeff: float = 8.56,
    solid_angle_fraction: float = 3.2e-5,
    substrate_transmission: float = 0.42,
    compton_per_resonant: float = 0.38,
    mismatch_per_resonant: float = 0.36,
    n_bins: int = 1000,
    duration_s: float = DEFAULT_DURATION_S,
) -> CountingBudget:
    """Chain the spectrometer loss factors into detection rates.

    The detected fraction per decay is the product of the electron-capture
    branching, the 14.4 keV transition probability, the internal-conversion
    survival 1/(1 + coefficient), the collimator solid angle, and the
    substrate transmission. Compton and collimator-mismatch backgrounds are
    proportional to the resonant rate.
    """
    if source_activity_bq < 0 or min(
        ec_branching, transition_probability, solid_angle_fraction, substrate_transmission
    ) < 0:
        raise InputError("budget inputs must be nonnegative")
    if internal_conversion_coeff < 0 or n_bins < 1:
        raise InputError("invalid internal conversion coefficient or bin count")
    survival = 1.0 / (1.0 + internal_conversion_coeff)
    fraction = (
        ec_branching * transition_probability * survival * solid_angle_fraction * substrate_transmission
    )
    resonant = source_activity_bq * fraction
    compton = compton_per_resonant * resonant
    mismatch = mismatch_per_resonant * resonant
    total = resonant + compton + mismatch
    return CountingBudget(
        source_activity_bq=source_activity_bq,
        detected_fraction_14kev=fraction,
        resonant_rate_hz=resonant,
        compton_rate_hz=compton,
        mismatch_rate_hz=mismatch,
        total_rate_hz=total,
        per_bin_rate_hz=total / n_bins,
        duration_s=duration_s,
    )


def channel_velocities(scan: ScanParams) -> np.ndarray:
    """Source velocity at each channel center for one sweep half.

    Constant acceleration makes velocity linear in time, hence in channel
    index. The decelerating half runs the same velocities in mirrored
    channel order.
    """
    n = scan.n_channels
    width = (scan.v_max_mm_s - scan.v_min_mm_s) / n
    ascending = scan.v_min_mm_s + (np.arange(n) + 0.5) * width
    if scan.direction == "decelerating":
        return ascending[::-1].copy()
    return ascending


def acceleration_to_channel_map(scan: ScanParams) -> dict:
    """Velocity maps of both halves of the triangular sweep."""
    from dataclasses import replace

    return {
        "accelerating": channel_velocities(replace(scan, direction="accelerating")),
        "decelerating": channel_velocities(replace(scan, direction="decelerating")),
    }


def normalized_channel_coordinate(n_channels: int) -> np.ndarray:
    """Channel index mapped to t in [-1, 1] (well-conditioned polynomial basis)."""
    return -1.0 + (2.0 * np.arange(n_channels) + 1.0) / n_channels


def baseline_polynomial(coeffs, t: np.ndarray) -> np.ndarray:
    """Baseline shape 1 + sum(c_k * t^k, k=1..5) on the normalized coordinate."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size > 5:
        raise InputError("baseline takes at most 5 coefficients (constant term is implicit)")
    shape = np.ones_like(t)
    for k, c in enumerate(coeffs, start=1):
        shape = shape + c * t**k
    return shape


def generate_counts(
    model_spectrum,
    budget: CountingBudget,
    baseline_coeffs,
    contrast: float,
    seed: int,
    scan: ScanParams,
    *,
    drive_power_w: float = 0.0,
    label: str = "",
) -> CountSpectrum:
    """Draw a Poisson count spectrum around the modulated baseline.

    ``model_spectrum`` must be normalized so its values lie in [0, 1] on a
    scale shared across a power series (1 at the deepest zero-drive
    resonance), so ``contrast`` is the zero-drive peak absorption contrast.
    Identical seed and configuration reproduce the counts bit-exactly.
    """
    spectrum = np.asarray(model_spectrum, dtype=float)
    if spectrum.size != scan.n_channels:
        raise InputError("model spectrum length must equal scan.n_channels")
    if not 0.0 <= contrast < 1.0:
        raise InputError(f"contrast must lie in [0, 1), got {contrast}")
    if np.any(spectrum < 0.0) or np.any(spectrum > 1.0 + 1e-9):
        raise InputError("model spectrum must be normalized to [0, 1]")

    t = normalized_channel_coordinate(scan.n_channels)
    baseline = baseline_polynomial(baseline_coeffs, t)
    expected = budget.duration_s * budget.per_bin_rate_hz * baseline * (1.0 - contrast * spectrum)
    if np.any(expected <= 0.0):
        raise InputError("expected counts must be positive in every channel")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    counts = rng.poisson(expected)
    return CountSpectrum(
        channels=np.arange(scan.n_channels),
        counts=counts,
        scan=scan,
        drive_power_w=drive_power_w,
        seed=seed,
        duration_s=budget.duration_s,
        label=label,
    )


def derive_spectrum_seeds(root_seed: int, count: int) -> list:
    """Independent per-spectrum seeds split off a root seed.

    Children are spawned from ``SeedSequence(root_seed)`` in order, so the
    k-th spectrum of a run always sees the same stream regardless of how
    many spectra are generated.
    """
    children = np.random.SeedSequence(root_seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]
