"""Sideband-power extraction from baseline-normalized spectra.

Each resolvable peak is integrated over a window of twice the linewidth,
mirror partners are averaged into the nine distinct peak integrals
y0..y8, and the overlap pattern between hyperfine lines and sidebands is
inverted by least squares to recover the power in sideband orders 0..2
with full covariance.

The window captures a fixed fraction (2/pi)*arctan(2) of a Lorentzian's
area; the factor is common to every peak and to the reference amplitudes,
so it cancels against the overall normalization of the global fit and is
deliberately not corrected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ExtractionError
from .specfit import NormalizedSpectrum, SpectrumFit, peak_groups

__all__ = [
    "SidebandPowers",
    "OverlapMatrix",
    "PeakIntegrals",
    "integrate_peaks",
    "build_overlap_matrix",
    "invert_for_powers",
    "reference_intensities",
    "N_PEAK_INTEGRALS",
]

N_PEAK_INTEGRALS = 9
_MIN_CHANNELS_PER_LINEWIDTH = 8


@dataclass(frozen=True)
class OverlapMatrix:
    """9x3 pattern mapping sideband powers (P0, P1, P2) to peak integrals.

    The slot intensities (a, b, c) are those of the inner, middle, and
    outer line pairs respectively: ordered by distance from the spectrum
    center, the peak at y0 is the inner parent line, y1 overlaps the middle
    parent with an outer first sideband, and so on.
    """

    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (N_PEAK_INTEGRALS, 3):
            raise ValueError("overlap matrix must be 9x3")

    @property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.values))


@dataclass(frozen=True)
class SidebandPowers:
    """Extracted sideband powers with covariance, tagged by drive power."""

    p: np.ndarray
    covariance: np.ndarray
    drive_power_w: float

    def __post_init__(self):
        if self.p.shape != (3,) or self.covariance.shape != (3, 3):
            raise ValueError("expected a 3-vector of powers with 3x3 covariance")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(self.covariance) < -1e-12):
            raise ValueError("covariance must be positive semidefinite")

    def uncertainties(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


@dataclass(frozen=True)
class PeakIntegrals:
    """Mirror-averaged window integrals y0..y8 with uncertainties."""

    y: np.ndarray
    sigma_y: np.ndarray
    window_centers_mm_s: np.ndarray = field(default=None, compare=False)
    flags: tuple = ()


def build_overlap_matrix(a: float, b: float, c: float) -> OverlapMatrix:
    """Overlap pattern for measured line intensities a (inner), b (middle), c (outer)."""
    values = np.array(
        [
            [a, 0.0, 0.0],
            [b, c, 0.0],
            [c, b, 0.0],
            [0.0, a, 0.0],
            [0.0, a, 0.0],
            [0.0, b, c],
            [0.0, c, b],
            [0.0, 0.0, a],
            [0.0, 0.0, a],
        ],
        dtype=float,
    )
    return OverlapMatrix(values=values)


def reference_intensities(zero_drive_fit: SpectrumFit) -> tuple:
    """Measured (inner, middle, outer) line strengths from an unmodulated fit.

    Fitted areas of the three amplitude groups, normalized to sum 1; the
    assignment uses the template's composition labels rather than assumed
    ratios.
    """
    model = zero_drive_fit.model
    areas = zero_drive_fit.amplitudes
    by_class = {}
    for group in model.groups:
        if len(group.composition) != 1 or group.composition[0][1] != 0:
            raise ExtractionError("reference intensities require an unmodulated (parent-only) fit")
        by_class[group.composition[0][0]] = float(areas[group.amp_group])
    try:
        raw = np.array([by_class["inner"], by_class["middle"], by_class["outer"]])
    except KeyError as exc:
        raise ExtractionError(f"missing line class in zero-drive fit: {exc}") from exc
    if np.any(raw <= 0):
        raise ExtractionError("nonpositive fitted line intensity")
    return tuple(raw / raw.sum())


def _window_integral(velocity, absorption, variance, lo, hi):
    """Trapezoidal integral of the absorption dip over [lo, hi] and its variance."""
    inside = (velocity >= lo) & (velocity <= hi)
    idx = np.where(inside)[0]
    if idx.size < 2:
        raise ExtractionError(f"integration window [{lo:.3f}, {hi:.3f}] mm/s contains no channels")
    x = velocity[idx]
    w = np.zeros(idx.size)
    w[1:] += 0.5 * np.diff(x)
    w[:-1] += 0.5 * np.diff(x)
    value = float(np.dot(w, absorption[idx]))
    var = float(np.dot(w * w, variance[idx]))
    return value, var


def integrate_peaks(
    normalized: NormalizedSpectrum,
    fit: SpectrumFit,
    linewidth_mm_s: float,
    *,
    min_channels_per_linewidth: int = _MIN_CHANNELS_PER_LINEWIDTH,
) -> PeakIntegrals:
    """Integrate 1 - normalized over [center - G, center + G] for each peak.

    Windows sit on the fitted peak positions where the template models a
    peak, and on the predicted sideband positions otherwise (so an
    unmodulated spectrum still yields y3..y8, consistent with zero).
    Mirror partners are averaged. Overlapping windows are truncated at the
    midpoints and flagged.
    """
    if normalized.velocity_mm_s is None:
        raise ExtractionError("normalized spectrum lacks a calibrated velocity axis")
    velocity = normalized.velocity_mm_s
    order = np.argsort(velocity)
    v_sorted = velocity[order]
    absorption = (1.0 - normalized.values)[order]
    variance = (normalized.sigma**2)[order]

    spacing_ch = np.median(np.abs(np.diff(v_sorted)))
    if linewidth_mm_s / spacing_ch < min_channels_per_linewidth:
        raise ExtractionError(
            f"only {linewidth_mm_s / spacing_ch:.1f} channels per linewidth "
            f"(need {min_channels_per_linewidth}); increase channel density"
        )

    model = fit.model
    scan = model.scan
    all_groups = peak_groups(
        model.scheme,
        model.spacing_mm_s,
        v_min_mm_s=scan.v_min_mm_s,
        v_max_mm_s=scan.v_max_mm_s,
        grouping_tol_mm_s=model.grouping_tol_mm_s,
    )

    # fitted positions mapped through the calibrated axis for the groups the
    # template models; predicted positions for absent or wandered peaks
    interp_order = np.argsort(normalized.channels)
    to_velocity = lambda pos: float(
        np.interp(pos, normalized.channels[interp_order], velocity[interp_order])
    )
    fitted_velocity = {
        g.members: to_velocity(pos) for g, pos in zip(model.groups, fit.positions_channels)
    }

    centers, labels, flags = [], [], []
    for g in all_groups:
        center = fitted_velocity.get(g.members, g.velocity_mm_s)
        if abs(center - g.velocity_mm_s) > model.grouping_tol_mm_s:
            flags.append(f"predicted_window(y{g.y_index})")
            center = g.velocity_mm_s
        centers.append(center)
        labels.append(g.y_index)
    centers = np.array(centers)
    labels = np.array(labels)
    if set(labels.tolist()) != set(range(N_PEAK_INTEGRALS)):
        raise ExtractionError("peak geometry does not produce the nine expected integrals")

    # clip overlapping windows at midpoints
    sort = np.argsort(centers)
    lows = centers - linewidth_mm_s
    highs = centers + linewidth_mm_s
    for i, j in zip(sort[:-1], sort[1:]):
        if highs[i] > lows[j]:
            mid = 0.5 * (centers[i] + centers[j])
            highs[i] = min(highs[i], mid)
            lows[j] = max(lows[j], mid)
            flags.append(f"windows_truncated(y{labels[i]},y{labels[j]})")

    y = np.zeros(N_PEAK_INTEGRALS)
    var_y = np.zeros(N_PEAK_INTEGRALS)
    counts = np.zeros(N_PEAK_INTEGRALS, dtype=int)
    for center, lo, hi, label in zip(centers, lows, highs, labels):
        value, var = _window_integral(v_sorted, absorption, variance, lo, hi)
        y[label] += value
        var_y[label] += var
        counts[label] += 1
    if np.any(counts == 0):
        raise ExtractionError("missing mirror partner for at least one peak integral")
    y /= counts
    var_y /= counts**2

    return PeakIntegrals(
        y=y,
        sigma_y=np.sqrt(var_y),
        window_centers_mm_s=centers,
        flags=tuple(flags),
    )


def invert_for_powers(
    y,
    sigma_y,
    matrix: OverlapMatrix,
    *,
    drive_power_w: float = 0.0,
    weighted: bool = False,
) -> SidebandPowers:
    """Least-squares inversion x = (A^T A)^{-1} A^T y with error propagation.

    The measurement covariance is diag(sigma_y^2); the result covariance is
    M Sigma_y M^T for the pseudo-inverse M. With ``weighted=True`` the
    pseudo-inverse is the inverse-variance weighted one, which coincides
    with the plain estimator for homoscedastic sigma_y.
    """
    y = np.asarray(y, dtype=float)
    sigma_y = np.asarray(sigma_y, dtype=float)
    a = matrix.values
    if matrix.rank < 3:
        raise ExtractionError(f"overlap matrix rank {matrix.rank} < 3; cannot invert")
    if weighted:
        if np.any(sigma_y <= 0):
            raise ExtractionError("weighted inversion requires positive uncertainties")
        w = 1.0 / sigma_y**2
        normal = a.T @ (w[:, None] * a)
        pseudo = np.linalg.solve(normal, a.T * w[None, :])
    else:
        normal = a.T @ a
        pseudo = np.linalg.solve(normal, a.T)
    p = pseudo @ y
    covariance = pseudo @ np.diag(sigma_y**2) @ pseudo.T
    covariance = 0.5 * (covariance + covariance.T)
    return SidebandPowers(p=p, covariance=covariance, drive_power_w=drive_power_w)
