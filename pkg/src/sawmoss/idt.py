"""Cross-field circuit model of the interdigital SAW transducers.

Each coupler is an acoustic conductance G_a and susceptance B_a in parallel
with the static finger capacitance C_T, in series with an ohmic loss R_L.
Scattering parameters follow the power-wave convention; the two-coupler
delay line is the single-transducer response squared, attenuated by the
propagation loss between the couplers.

Unit convention: ``cap_per_period_f_m`` is capacitance per finger period
per meter of aperture (F/m), so C_T = N * W * C_FF and the acoustic
admittance prefactor carries the per-period capacitance C_FF * W in
farads. The printed model is ambiguous on this point; this convention is
the one that makes both expressions dimensionally consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConvergenceError, DomainError
from .optimize import levenberg_marquardt

__all__ = [
    "IdtDesign",
    "SParams",
    "EtaAlpha",
    "SParamFitReport",
    "normalized_detuning",
    "acoustic_admittance",
    "single_transducer_sparams",
    "device_sparams",
    "derive_eta_alpha",
    "fit_sparam_traces",
    "default_design",
    "paper_fitted_design",
    "db_amplitude",
]


def db_amplitude(loss_db: float) -> float:
    """Amplitude factor for a loss quoted in dB (amplitude convention)."""
    return 10.0 ** (loss_db / 20.0)


@dataclass(frozen=True)
class IdtDesign:
    """Geometry, material, and circuit parameters of one transducer pair."""

    n_periods: int = 200
    aperture_m: float = 970e-6
    wavelength_m: float = 32e-6
    center_freq_rad_s: float = 2.0 * np.pi * 97.9e6
    coupling_k2: float = 1.1e-3  # electromechanical coupling, ST-quartz literature value
    cap_per_period_f_m: float = 5.0e-11  # ~0.5 pF per period per cm of aperture
    shunt_r_ohm: float = 5.0
    source_z_ohm: float = 50.0
    propagation_loss: float = db_amplitude(-1.68)  # amplitude factor between couplers

    def __post_init__(self):
        positive = (
            self.n_periods,
            self.aperture_m,
            self.wavelength_m,
            self.center_freq_rad_s,
            self.coupling_k2,
            self.cap_per_period_f_m,
            self.source_z_ohm,
            self.propagation_loss,
        )
        if any(v <= 0 for v in positive) or self.shunt_r_ohm < 0:
            raise ValueError("design parameters must be positive (R_L nonnegative)")
        if self.coupling_k2 >= 0.1:
            raise ValueError("cross-field model assumes weak coupling (k^2 << 1)")

    @property
    def total_capacitance_f(self) -> float:
        return self.n_periods * self.aperture_m * self.cap_per_period_f_m

    @property
    def conductance_scale_s(self) -> float:
        """On-resonance acoustic conductance G_a(0)."""
        return (
            (4.0 / np.pi)
            * self.coupling_k2
            * self.center_freq_rad_s
            * (self.cap_per_period_f_m * self.aperture_m)
            * self.n_periods**2
        )


@dataclass(frozen=True)
class SParams:
    """Complex scattering parameters sampled on an angular-frequency grid."""

    freq_rad_s: np.ndarray
    s11: np.ndarray
    s12: np.ndarray
    s22: np.ndarray


@dataclass(frozen=True)
class EtaAlpha:
    """Electro-acoustic attenuation and coherent reflection at band center."""

    eta: float
    alpha: float
    eta_phasor: complex
    alpha_phasor: complex


def normalized_detuning(omega_rad_s, design: IdtDesign):
    """Dimensionless detuning N*pi*(w - w_c)/w_c; zero at band center."""
    omega = np.asarray(omega_rad_s, dtype=float)
    return (
        design.n_periods
        * np.pi
        * (omega - design.center_freq_rad_s)
        / design.center_freq_rad_s
    )


def _sinc_sq(x: np.ndarray) -> np.ndarray:
    return np.sinc(x / np.pi) ** 2


def _susceptance_shape(x: np.ndarray) -> np.ndarray:
    """(sin(2x) - 2x) / (2x^2), continuous through x = 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    exact = (np.sin(2.0 * safe) - 2.0 * safe) / (2.0 * safe * safe)
    series = -(2.0 / 3.0) * x + (2.0 / 15.0) * x**3
    return np.where(small, series, exact)


def acoustic_admittance(x, design: IdtDesign):
    """Acoustic conductance G_a, susceptance B_a (S) and capacitance C_T (F)."""
    x = np.asarray(x, dtype=float)
    scale = design.conductance_scale_s
    g_a = scale * _sinc_sq(x)
    b_a = scale * _susceptance_shape(x)
    return g_a, b_a, design.total_capacitance_f


def _single_sparams_arrays(omega: np.ndarray, design: IdtDesign):
    """S'11, S'12, S'22 of one transducer, safe at the G_a = 0 nulls.

    Formulated in terms of the acoustic admittance Y2 = G_a so that the
    radiation-null limit (S'12 = 0, total reflection at port 2) emerges
    without dividing by zero.
    """
    x = normalized_detuning(omega, design)
    g_a, b_a, c_t = acoustic_admittance(x, design)
    shunt = omega * c_t + b_a
    if np.any(shunt == 0.0):
        raise DomainError("degenerate shunt impedance (w*C_T + B_a = 0)")
    z_load = design.shunt_r_ohm + 1.0 / (1j * shunt)
    z1 = design.source_z_ohm
    y2 = g_a.astype(complex)

    one_plus = 1.0 + y2 * z_load
    s11 = (z_load - np.conj(z1) * one_plus) / (z_load + z1 * one_plus)
    s22 = (z_load * z1 * y2 - (z_load + z1)) / (z_load * z1 * y2 + (z_load + z1))
    s12 = 2.0 * np.sqrt(z1) * np.sqrt(y2) * z_load / (z1 + z_load + z1 * z_load * y2)
    return s11, s12, s22


def single_transducer_sparams(omega_rad_s, design: IdtDesign) -> SParams:
    """Scattering parameters of a single transducer (port 1 electrical, port 2 acoustic)."""
    omega = np.atleast_1d(np.asarray(omega_rad_s, dtype=float))
    s11, s12, s22 = _single_sparams_arrays(omega, design)
    return SParams(freq_rad_s=omega, s11=s11, s12=s12, s22=s22)


def device_sparams(omega_rad_s, design: IdtDesign) -> SParams:
    """Two-coupler delay-line approximation: S11 = S'11, S12 = S'12^2 * eta_p / 2.

    The device is symmetric, so the returned S22 equals S11.
    """
    omega = np.atleast_1d(np.asarray(omega_rad_s, dtype=float))
    s11, s12, _ = _single_sparams_arrays(omega, design)
    s12_device = s12 * s12 * (design.propagation_loss / 2.0)
    return SParams(freq_rad_s=omega, s11=s11, s12=s12_device, s22=s11.copy())


def derive_eta_alpha(design: IdtDesign) -> EtaAlpha:
    """Drive attenuation eta and reflection alpha at the center of the device.

    eta = sqrt(eta_p/2) * S'12(w_c) maps applied wave amplitude to SAW
    amplitude at the film; alpha = (eta_p/2) * S'22(w_c) is the fraction
    reflected off the far coupler that makes it back to the film.
    """
    omega = np.array([design.center_freq_rad_s])
    _, s12, s22 = _single_sparams_arrays(omega, design)
    eta = np.sqrt(design.propagation_loss / 2.0) * s12[0]
    alpha = (design.propagation_loss / 2.0) * s22[0]
    return EtaAlpha(
        eta=float(np.abs(eta)),
        alpha=float(np.abs(alpha)),
        eta_phasor=complex(eta),
        alpha_phasor=complex(alpha),
    )


def default_design() -> IdtDesign:
    """Literature-typical ST-quartz design (couplings are not paper-derived)."""
    return IdtDesign()


def paper_fitted_design() -> IdtDesign:
    """Circuit parameters reproducing the fitted device response.

    Solved so that the band-center response gives eta = 0.35 and
    alpha = 0.34 with the -1.68 dB propagation loss.
    """
    return IdtDesign(
        coupling_k2=7.70998189e-04,
        cap_per_period_f_m=1.44455560e-10,
        shunt_r_ohm=5.0,
    )


@dataclass
class SParamFitReport:
    design: IdtDesign
    free_parameters: tuple
    values: np.ndarray
    uncertainties: np.ndarray
    residual_norm: float
    chi2_reduced: float
    n_iterations: int
    converged: bool


_FIT_PARAMS = ("coupling_k2", "cap_per_period_f_m", "shunt_r_ohm", "propagation_loss", "center_freq_rad_s")


def fit_sparam_traces(
    freq_rad_s,
    s11_mag,
    s12_mag,
    initial: IdtDesign,
    *,
    sigma: float = 1.0,
    max_iterations: int = 500,
) -> SParamFitReport:
    """Least-squares fit of the device model to measured |S11| and |S12| traces.

    Free parameters: (k^2, C_FF, R_L, eta_p, w_c), fitted in log space for
    the strictly positive ones. Only magnitudes enter the residual. On
    non-convergence the best iterate is reported with ``converged=False``.
    """
    freq = np.asarray(freq_rad_s, dtype=float)
    data = np.concatenate([np.asarray(s11_mag, float), np.asarray(s12_mag, float)])
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), data.shape)

    def make_design(u: np.ndarray) -> IdtDesign:
        k2, cff, rl, eta_p = np.exp(u[:4])
        return replace(
            initial,
            coupling_k2=float(k2),
            cap_per_period_f_m=float(cff),
            shunt_r_ohm=float(rl),
            propagation_loss=float(eta_p),
            center_freq_rad_s=float(u[4]),
        )

    def residual(u: np.ndarray) -> np.ndarray:
        try:
            model = device_sparams(freq, make_design(u))
        except (ValueError, DomainError):
            return np.full(data.size, 1e6)
        pred = np.concatenate([np.abs(model.s11), np.abs(model.s12)])
        return (pred - data) / sigma

    u0 = np.array(
        [
            np.log(initial.coupling_k2),
            np.log(initial.cap_per_period_f_m),
            np.log(max(initial.shunt_r_ohm, 1e-3)),
            np.log(initial.propagation_loss),
            initial.center_freq_rad_s,
        ]
    )
    result = levenberg_marquardt(residual, u0, max_iterations=max_iterations)

    fitted = make_design(result.params)
    sig_u = result.uncertainties()
    values = np.array(
        [
            fitted.coupling_k2,
            fitted.cap_per_period_f_m,
            fitted.shunt_r_ohm,
            fitted.propagation_loss,
            fitted.center_freq_rad_s,
        ]
    )
    # log-space sigma -> linear sigma for the positive parameters
    uncertainties = np.concatenate([values[:4] * sig_u[:4], [sig_u[4]]])
    return SParamFitReport(
        design=fitted,
        free_parameters=_FIT_PARAMS,
        values=values,
        uncertainties=uncertainties,
        residual_norm=float(np.sqrt(result.chi2)),
        chi2_reduced=result.chi2_reduced,
        n_iterations=result.n_iterations,
        converged=result.converged,
    )
