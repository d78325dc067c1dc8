"""Velocity calibration against the known sextet and sideband positions.

Fitted channel-space peak centers are matched one-to-one to the reference
pattern (six hyperfine lines replicated at integer sideband offsets) and a
weighted linear regression maps channel number to Doppler velocity. The
accelerating and decelerating sweep halves are calibrated separately. The
source-absorber isomer shift is part of the reference velocities, so it is
absorbed into the intercept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError
from .physics import HyperfineScheme
from .specfit import MAX_SIDEBAND_ORDER, SpectrumFit, peak_groups
from .specgen import channel_velocities

__all__ = ["CalibrationResult", "calibrate"]

DEFAULT_RESIDUAL_GATE_MM_S = 0.05


@dataclass(frozen=True)
class CalibrationResult:
    """Affine channel-to-velocity map with regression diagnostics."""

    slope_mm_s_per_channel: float
    intercept_mm_s: float
    slope_uncertainty: float
    intercept_uncertainty: float
    residuals_mm_s: np.ndarray
    reference_velocities_mm_s: np.ndarray
    matched_channels: np.ndarray
    rms_mm_s: float

    def __post_init__(self):
        if self.slope_mm_s_per_channel == 0:
            raise CalibrationError("calibration slope must be nonzero")

    def velocity(self, channels) -> np.ndarray:
        """Apply the calibration to channel coordinates."""
        return self.slope_mm_s_per_channel * np.asarray(channels, dtype=float) + self.intercept_mm_s


def calibrate(
    fit: SpectrumFit,
    scheme: HyperfineScheme,
    sideband_spacing_mm_s: float,
    *,
    residual_gate_mm_s: float = DEFAULT_RESIDUAL_GATE_MM_S,
    match_radius_mm_s: float = 1.0,
    min_matches: int = 6,
) -> CalibrationResult:
    """Regress reference velocities on fitted channel positions.

    Matching goes through the nominal scan map: each reference peak group is
    assigned the nearest well-constrained fitted peak within
    ``match_radius_mm_s``; references with no modeled peak nearby (sidebands
    of an unmodulated spectrum) are skipped, and a non-unique assignment
    raises. Fitted peaks whose own position uncertainty exceeds the match
    radius carry no position information and are excluded up front.
    Regression weights are the inverse-variance of the fitted positions.
    Residual RMS above the gate raises :class:`CalibrationError`.
    """
    scan = fit.model.scan
    if abs(fit.model.spacing_mm_s - sideband_spacing_mm_s) < 1e-9 and fit.model.scheme == scheme:
        # the template's merged-group positions already weight coincident
        # components by their predicted strengths
        references = fit.model.groups
    else:
        references = peak_groups(
            scheme,
            sideband_spacing_mm_s,
            v_min_mm_s=scan.v_min_mm_s,
            v_max_mm_s=scan.v_max_mm_s,
            grouping_tol_mm_s=fit.model.grouping_tol_mm_s,
        )
    ref_velocities = np.array([g.velocity_mm_s for g in references])

    # nominal map for matching only; the regression refines it
    nominal = channel_velocities(scan)
    width = (scan.v_max_mm_s - scan.v_min_mm_s) / scan.n_channels
    slope0 = width if scan.direction == "accelerating" else -width
    approx_velocity = nominal[0] + slope0 * fit.positions_channels

    positions = fit.positions_channels
    sigmas = fit.position_uncertainties()
    # a peak located no better than a third of the match radius cannot be
    # matched reliably, and its regression weight would be negligible anyway
    usable = sigmas * abs(slope0) <= match_radius_mm_s / 3.0

    assigned = {}
    for j, v_ref in enumerate(ref_velocities):
        distances = np.where(usable, np.abs(approx_velocity - v_ref), np.inf)
        k = int(np.argmin(distances))
        if distances[k] > match_radius_mm_s:
            continue
        if k in assigned:
            raise CalibrationError(
                f"ambiguous matching: references at {ref_velocities[assigned[k]]:.3f} and "
                f"{v_ref:.3f} mm/s both nearest fitted peak {k}"
            )
        assigned[k] = j

    matched = sorted(assigned.items())
    if len(matched) < min_matches:
        raise CalibrationError(f"only {len(matched)} reference lines matched (need {min_matches})")

    ch = np.array([positions[k] for k, _ in matched])
    v_ref = np.array([ref_velocities[j] for _, j in matched])
    sig = np.array([sigmas[k] for k, _ in matched])
    sig = np.where(sig > 0, sig, np.max(sig[sig > 0]) if np.any(sig > 0) else 1.0)
    # position uncertainty (channels) enters the velocity residual via the slope
    weights = 1.0 / np.maximum(sig * abs(slope0), 1e-12) ** 2

    design = np.column_stack([ch, np.ones_like(ch)])
    wd = design * weights[:, None]
    normal = design.T @ wd
    rhs = design.T @ (weights * v_ref)
    try:
        solution = np.linalg.solve(normal, rhs)
        covariance = np.linalg.inv(normal)
    except np.linalg.LinAlgError as exc:
        raise CalibrationError("degenerate calibration regression") from exc

    slope, intercept = float(solution[0]), float(solution[1])
    residuals = v_ref - (slope * ch + intercept)
    # weighted RMS: lines with no position information must not trip the gate
    rms = float(np.sqrt(np.sum(weights * residuals**2) / np.sum(weights)))
    if rms > residual_gate_mm_s:
        raise CalibrationError(
            f"calibration residual RMS {rms:.4f} mm/s exceeds gate {residual_gate_mm_s} mm/s"
        )
    return CalibrationResult(
        slope_mm_s_per_channel=slope,
        intercept_mm_s=intercept,
        slope_uncertainty=float(np.sqrt(covariance[0, 0])),
        intercept_uncertainty=float(np.sqrt(covariance[1, 1])),
        residuals_mm_s=residuals,
        reference_velocities_mm_s=v_ref,
        matched_channels=ch,
        rms_mm_s=rms,
    )
