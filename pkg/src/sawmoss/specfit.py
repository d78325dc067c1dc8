"""Count-spectrum fitting: polynomial baseline times a comb of Lorentzian dips.

The peak template replicates each hyperfine line into sidebands spaced by
the SAW frequency, merges components that coincide within the instrumental
resolution, and ties amplitudes of groups with identical composition. For
the full drive this yields 18 peaks sharing 7 amplitudes; with the
baseline offset, 5 shape coefficients, and one global linewidth the model
has 32 free parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import floquet
from .errors import InputError
from .optimize import levenberg_marquardt
from .physics import DEFAULT_CONSTANTS, HyperfineScheme, PhysConstants, ScanParams
from .specgen import CountSpectrum, baseline_polynomial, channel_velocities

__all__ = [
    "PeakGroup",
    "FitModel",
    "SpectrumFit",
    "NormalizedSpectrum",
    "peak_groups",
    "sideband_spacing_mm_s",
    "build_fit_model",
    "fit_spectrum",
    "normalize_by_baseline",
    "runs_test",
]

MAX_SIDEBAND_ORDER = 2  # orders beyond +-2 fall outside the velocity window
DEFAULT_GROUPING_TOL_MM_S = 0.5
DEFAULT_VISIBILITY_THRESHOLD = 1e-8


@dataclass(frozen=True)
class PeakGroup:
    """One resolvable absorption peak: coincident (line, order) components."""

    members: tuple  # ((line_index, order), ...)
    velocity_mm_s: float
    amp_group: int
    y_index: int
    composition: tuple  # sorted ((intensity_class, |order|), ...)


def sideband_spacing_mm_s(
    saw_angular_freq_rad_s: float, constants: PhysConstants = DEFAULT_CONSTANTS
) -> float:
    """Doppler-velocity spacing between adjacent sidebands."""
    return saw_angular_freq_rad_s / constants.photon_wavenumber_m * 1e3


def peak_groups(
    scheme: HyperfineScheme,
    spacing_mm_s: float,
    *,
    v_min_mm_s: float,
    v_max_mm_s: float,
    orders=None,
    grouping_tol_mm_s: float = DEFAULT_GROUPING_TOL_MM_S,
    component_weight=None,
) -> list:
    """Resolvable peak groups of the modulated sextet inside the scan window.

    Components within ``grouping_tol_mm_s`` of each other merge into a
    single peak. Groups are labeled by an amplitude-group id (identical
    composition implies identical strength) and by a y-index ranking the
    mirror-averaged distance from the scheme centroid. When a
    ``component_weight(line_index, order)`` callable is given, merged-group
    positions are the weighted means of their members (the observable peak
    center); otherwise plain means.
    """
    if orders is None:
        orders = range(-MAX_SIDEBAND_ORDER, MAX_SIDEBAND_ORDER + 1)
    line_v = np.asarray(scheme.line_velocities_mm_s)
    classes = scheme.line_classes
    components = []
    for n in orders:
        if abs(n) > MAX_SIDEBAND_ORDER:
            raise InputError(f"sideband order {n} outside the modeled window (|n| <= 2)")
        for i in range(6):
            v = line_v[i] + n * spacing_mm_s
            if v_min_mm_s < v < v_max_mm_s:
                components.append((v, i, n))
    if not components:
        return []
    components.sort()

    clusters = [[components[0]]]
    for comp in components[1:]:
        if comp[0] - clusters[-1][-1][0] <= grouping_tol_mm_s:
            clusters[-1].append(comp)
        else:
            clusters.append([comp])

    centroid = scheme.centroid_mm_s
    keyed = []
    for cluster in clusters:
        positions = np.array([c[0] for c in cluster])
        if component_weight is not None:
            weights = np.array([component_weight(i, n) for _, i, n in cluster])
            total = weights.sum()
            velocity = float(positions.mean() if total <= 0 else np.dot(weights, positions) / total)
        else:
            velocity = float(positions.mean())
        members = tuple((c[1], c[2]) for c in cluster)
        composition = tuple(sorted((classes[i], abs(n)) for i, n in members))
        keyed.append((velocity, members, composition))

    # amplitude groups: one id per distinct composition
    comp_ids = {}
    for _, _, composition in keyed:
        comp_ids.setdefault(composition, len(comp_ids))

    # y-index: rank of |velocity - centroid|, mirror partners sharing a rank
    distances = sorted(abs(v - centroid) for v, _, _ in keyed)
    ranks = []
    for d in distances:
        if not ranks or d - ranks[-1][0] > grouping_tol_mm_s:
            ranks.append((d, len(ranks)))
    rank_of = lambda d: min(ranks, key=lambda r: abs(r[0] - d))[1]

    return [
        PeakGroup(
            members=members,
            velocity_mm_s=velocity,
            amp_group=comp_ids[composition],
            y_index=rank_of(abs(velocity - centroid)),
            composition=composition,
        )
        for velocity, members, composition in keyed
    ]


@dataclass(frozen=True)
class FitModel:
    """Parameterized spectral model: baseline(t) * (1 - sum of Lorentzian dips).

    Parameter vector layout: [offset, 5 baseline coefficients, one area per
    amplitude group, one center per peak, shared FWHM], all in channel
    units. The baseline polynomial uses the normalized coordinate
    t in [-1, 1], so the parameterization is equivariant under affine
    changes of the channel axis.
    """

    scan: ScanParams
    scheme: HyperfineScheme
    spacing_mm_s: float
    groups: tuple
    initial_positions: np.ndarray
    initial_amplitudes: np.ndarray
    initial_linewidth: float
    n_amp_groups: int
    grouping_tol_mm_s: float = DEFAULT_GROUPING_TOL_MM_S

    # --- parameter indexing -------------------------------------------------
    @property
    def n_peaks(self) -> int:
        return len(self.groups)

    @property
    def n_params(self) -> int:
        return 6 + self.n_amp_groups + self.n_peaks + 1

    @property
    def slice_baseline(self):
        return slice(0, 6)

    @property
    def slice_amplitudes(self):
        return slice(6, 6 + self.n_amp_groups)

    @property
    def slice_positions(self):
        return slice(6 + self.n_amp_groups, 6 + self.n_amp_groups + self.n_peaks)

    @property
    def index_linewidth(self) -> int:
        return self.n_params - 1

    def amp_index(self, peak: int) -> int:
        return 6 + self.groups[peak].amp_group

    def parameter_names(self) -> list:
        names = ["offset"] + [f"baseline_c{k}" for k in range(1, 6)]
        names += [f"area_g{g}" for g in range(self.n_amp_groups)]
        names += [f"center_{k}" for k in range(self.n_peaks)]
        names += ["linewidth"]
        return names

    # --- evaluation -----------------------------------------------------------
    def _t(self, channels: np.ndarray) -> np.ndarray:
        lo, hi = channels[0], channels[-1]
        return (2.0 * channels - (lo + hi)) / (hi - lo)

    def _dips(self, params: np.ndarray, channels: np.ndarray):
        gamma = params[self.index_linewidth]
        positions = params[self.slice_positions]
        half_sq = 0.25 * gamma * gamma
        dips = np.zeros_like(channels, dtype=float)
        lorentzians = []
        for k in range(self.n_peaks):
            denom = (channels - positions[k]) ** 2 + half_sq
            lor = (gamma / (2.0 * np.pi)) / denom
            lorentzians.append(lor)
            dips += params[self.amp_index(k)] * lor
        return dips, lorentzians

    def values(self, params: np.ndarray, channels=None) -> np.ndarray:
        if channels is None:
            channels = np.arange(self.scan.n_channels, dtype=float)
        channels = np.asarray(channels, dtype=float)
        t = self._t(channels)
        baseline = params[0] * baseline_polynomial(params[1:6], t)
        dips, _ = self._dips(params, channels)
        return baseline * (1.0 - dips)

    def baseline_values(self, params: np.ndarray, channels=None) -> np.ndarray:
        if channels is None:
            channels = np.arange(self.scan.n_channels, dtype=float)
        channels = np.asarray(channels, dtype=float)
        return params[0] * baseline_polynomial(params[1:6], self._t(channels))

    def jacobian(self, params: np.ndarray, channels=None) -> np.ndarray:
        """Analytic d(model)/d(params)."""
        if channels is None:
            channels = np.arange(self.scan.n_channels, dtype=float)
        channels = np.asarray(channels, dtype=float)
        t = self._t(channels)
        shape = baseline_polynomial(params[1:6], t)
        baseline = params[0] * shape
        gamma = params[self.index_linewidth]
        positions = params[self.slice_positions]
        half_sq = 0.25 * gamma * gamma

        dips, lorentzians = self._dips(params, channels)
        absorb = 1.0 - dips

        jac = np.zeros((channels.size, self.n_params))
        jac[:, 0] = shape * absorb
        for k in range(1, 6):
            jac[:, k] = params[0] * t**k * absorb
        for k in range(self.n_peaks):
            area = params[self.amp_index(k)]
            lor = lorentzians[k]
            denom = (channels - positions[k]) ** 2 + half_sq
            jac[:, self.amp_index(k)] += -baseline * lor
            # d/d(center): unit-area Lorentzian differentiated in its center
            jac[:, self.slice_positions.start + k] = (
                -baseline * area * lor * 2.0 * (channels - positions[k]) / denom
            )
            # d/d(gamma)
            jac[:, self.index_linewidth] += (
                -baseline * area * (1.0 / (2.0 * np.pi * denom)) * (1.0 - gamma * gamma / (2.0 * denom))
            )
        return jac


def build_fit_model(
    scheme: HyperfineScheme,
    modulation: floquet.ModulationModel,
    scan: ScanParams,
    *,
    constants: PhysConstants = DEFAULT_CONSTANTS,
    contrast_guess: float = 0.03,
    visibility_threshold: float = DEFAULT_VISIBILITY_THRESHOLD,
    grouping_tol_mm_s: float = DEFAULT_GROUPING_TOL_MM_S,
) -> FitModel:
    """Construct the peak template and initial guess for one scan half.

    Sideband orders enter the template only when their predicted weight
    exceeds ``visibility_threshold``, so an unmodulated spectrum yields the
    bare six-line model with three amplitude groups.
    """
    spacing = sideband_spacing_mm_s(modulation.saw_angular_freq_rad_s, constants)
    weights = {
        n: floquet.sideband_power(n, modulation.mod_index, modulation.reflection)
        for n in range(MAX_SIDEBAND_ORDER + 1)
    }
    orders = [
        n
        for n in range(-MAX_SIDEBAND_ORDER, MAX_SIDEBAND_ORDER + 1)
        if weights[abs(n)] >= visibility_threshold
    ]
    line_strengths_for_weight = scheme.line_weights()
    groups = peak_groups(
        scheme,
        spacing,
        v_min_mm_s=scan.v_min_mm_s,
        v_max_mm_s=scan.v_max_mm_s,
        orders=orders,
        grouping_tol_mm_s=grouping_tol_mm_s,
        component_weight=lambda i, n: line_strengths_for_weight[i] * weights[abs(n)],
    )
    if not groups:
        raise InputError("no peaks fall inside the scan window")

    velocities = channel_velocities(scan)
    channel_width = (scan.v_max_mm_s - scan.v_min_mm_s) / scan.n_channels
    slope = channel_width if scan.direction == "accelerating" else -channel_width
    to_channel = lambda v: (v - velocities[0]) / slope

    line_strengths = scheme.line_weights()
    gamma_v = (
        modulation.linewidth_rad_s / constants.photon_wavenumber_m * 1e3
    )  # FWHM in mm/s
    gamma_ch = abs(gamma_v / channel_width)

    n_amp_groups = max(g.amp_group for g in groups) + 1
    group_weight = np.zeros(n_amp_groups)
    for g in groups:
        group_weight[g.amp_group] = sum(
            line_strengths[i] * weights[abs(n)] for i, n in g.members
        )
    reference = float(np.max(line_strengths))
    initial_amplitudes = contrast_guess * (group_weight / reference) * (np.pi * gamma_ch / 2.0)
    initial_positions = np.array([to_channel(g.velocity_mm_s) for g in groups])

    return FitModel(
        scan=scan,
        scheme=scheme,
        spacing_mm_s=spacing,
        groups=tuple(groups),
        initial_positions=initial_positions,
        initial_amplitudes=initial_amplitudes,
        initial_linewidth=gamma_ch,
        n_amp_groups=n_amp_groups,
        grouping_tol_mm_s=grouping_tol_mm_s,
    )


@dataclass
class SpectrumFit:
    """Converged spectral fit: parameters, covariance, and fit quality."""

    model: FitModel
    params: np.ndarray
    covariance: np.ndarray
    chi2_reduced: float
    residuals: np.ndarray
    converged: bool
    singular_covariance: bool
    n_iterations: int
    flags: list = field(default_factory=list)

    @property
    def offset_counts(self) -> float:
        return float(self.params[0])

    @property
    def baseline_coeffs(self) -> np.ndarray:
        """All six baseline parameters [offset, c1..c5]."""
        return self.params[0:6].copy()

    @property
    def amplitudes(self) -> np.ndarray:
        return self.params[self.model.slice_amplitudes].copy()

    @property
    def positions_channels(self) -> np.ndarray:
        return self.params[self.model.slice_positions].copy()

    @property
    def linewidth_channels(self) -> float:
        return float(self.params[self.model.index_linewidth])

    def position_uncertainties(self) -> np.ndarray:
        idx = np.arange(self.model.slice_positions.start, self.model.slice_positions.stop)
        return np.sqrt(np.clip(np.diag(self.covariance)[idx], 0.0, None))

    def amplitude_uncertainties(self) -> np.ndarray:
        idx = np.arange(self.model.slice_amplitudes.start, self.model.slice_amplitudes.stop)
        return np.sqrt(np.clip(np.diag(self.covariance)[idx], 0.0, None))

    def baseline_values(self, channels=None) -> np.ndarray:
        return self.model.baseline_values(self.params, channels)

    def width_diagnostics(self, spectrum: CountSpectrum) -> dict:
        """Per-peak residual RMS within one linewidth of each center.

        A diagnostic for unmodeled width variation; widths are not fitted
        per peak.
        """
        gamma = self.linewidth_channels
        out = {}
        for k, pos in enumerate(self.positions_channels):
            window = np.abs(spectrum.channels - pos) <= gamma
            if np.any(window):
                out[k] = float(np.sqrt(np.mean(self.residuals[window] ** 2)))
        return out


@dataclass(frozen=True)
class NormalizedSpectrum:
    """Counts divided by the fitted baseline; dips sit around 1.0."""

    channels: np.ndarray
    values: np.ndarray
    sigma: np.ndarray
    velocity_mm_s: np.ndarray = None

    def with_velocity(self, velocity_mm_s: np.ndarray) -> "NormalizedSpectrum":
        return NormalizedSpectrum(
            channels=self.channels,
            values=self.values,
            sigma=self.sigma,
            velocity_mm_s=np.asarray(velocity_mm_s, dtype=float),
        )


def fit_spectrum(
    spectrum: CountSpectrum,
    model: FitModel,
    *,
    max_iterations: int = 500,
    chi2_rtol: float = 1e-10,
    step_tol: float = 1e-12,
    min_position_snr: float = 3.0,
    channels=None,
    initial_params=None,
) -> SpectrumFit:
    """Weighted nonlinear least-squares fit of the template to count data.

    Poisson uncertainties enter through 1/counts weights (Gaussian
    approximation). Peaks whose predicted significance falls below
    ``min_position_snr`` keep a free amplitude but a frozen center: a
    sub-noise dip cannot locate itself and would otherwise wander onto
    noise. Non-convergence returns the best iterate with
    ``converged=False``; an ill-conditioned covariance is computed by a
    regularized inverse and flagged.
    """
    counts = np.asarray(spectrum.counts, dtype=float)
    if np.any(counts <= 0):
        raise InputError("Poisson weights require positive counts in every channel")
    coords = np.arange(counts.size, dtype=float) if channels is None else np.asarray(channels, float)
    sigma = np.sqrt(counts)

    if initial_params is None:
        p0 = np.empty(model.n_params)
        p0[0] = float(np.median(counts))
        p0[1:6] = 0.0
        p0[model.slice_amplitudes] = model.initial_amplitudes
        p0[model.slice_positions] = model.initial_positions
        p0[model.index_linewidth] = model.initial_linewidth
    else:
        p0 = np.asarray(initial_params, dtype=float).copy()

    # matched-filter significance of each peak at the template amplitudes:
    # area A over relative noise, times sqrt(integral of the unit-area
    # Lorentzian squared) = sqrt(1/(pi*gamma))
    fixed = np.zeros(model.n_params, dtype=bool)
    frozen_peaks = []
    if min_position_snr > 0:
        noise_rel = 1.0 / np.sqrt(float(np.median(counts)))
        gamma0 = p0[model.index_linewidth]
        for k in range(model.n_peaks):
            area = p0[model.amp_index(k)]
            snr = area / noise_rel / np.sqrt(np.pi * gamma0)
            if snr < min_position_snr:
                fixed[model.slice_positions.start + k] = True
                frozen_peaks.append(k)

    residual = lambda p: (model.values(p, coords) - counts) / sigma
    jacobian = lambda p: model.jacobian(p, coords) / sigma[:, None]
    result = levenberg_marquardt(
        residual,
        p0,
        jacobian,
        max_iterations=max_iterations,
        chi2_rtol=chi2_rtol,
        step_tol=step_tol,
        fixed_mask=fixed,
    )

    fitted = model.values(result.params, coords)
    flags = []
    if frozen_peaks:
        flags.append(f"frozen_positions(peaks={frozen_peaks})")
    if not result.converged:
        flags.append("no_convergence")
    if result.singular_covariance:
        flags.append(f"ill_conditioned_covariance(cond={result.condition_number:.3e})")
    if result.params[model.index_linewidth] <= 0:
        flags.append("nonpositive_linewidth")
    neg = np.where(result.params[model.slice_amplitudes] < 0)[0]
    if neg.size:
        flags.append(f"negative_amplitudes(groups={neg.tolist()})")

    return SpectrumFit(
        model=model,
        params=result.params,
        covariance=result.covariance,
        chi2_reduced=result.chi2_reduced,
        residuals=(counts - fitted) / sigma,
        converged=result.converged,
        singular_covariance=result.singular_covariance,
        n_iterations=result.n_iterations,
        flags=flags,
    )


def normalize_by_baseline(spectrum: CountSpectrum, fit: SpectrumFit) -> NormalizedSpectrum:
    """Divide counts by the fitted baseline polynomial."""
    counts = np.asarray(spectrum.counts, dtype=float)
    baseline = fit.baseline_values()
    if np.any(baseline <= 0):
        raise InputError("fitted baseline is nonpositive; cannot normalize")
    return NormalizedSpectrum(
        channels=spectrum.channels.copy(),
        values=counts / baseline,
        sigma=np.sqrt(np.maximum(counts, 1.0)) / baseline,
    )


def runs_test(residuals) -> tuple:
    """Wald-Wolfowitz runs test on residual signs: (z_score, p_value).

    Small p flags serial structure in the residuals.
    """
    from math import erf, sqrt

    signs = np.sign(np.asarray(residuals))
    signs = signs[signs != 0]
    n_pos = int(np.sum(signs > 0))
    n_neg = int(np.sum(signs < 0))
    n = n_pos + n_neg
    if n_pos == 0 or n_neg == 0:
        return 0.0, 1.0
    runs = 1 + int(np.sum(signs[1:] != signs[:-1]))
    mean = 2.0 * n_pos * n_neg / n + 1.0
    var = (mean - 1.0) * (mean - 2.0) / (n - 1.0)
    z = (runs - mean) / np.sqrt(var)
    p = 1.0 - erf(abs(z) / sqrt(2.0))
    return float(z), float(p)
