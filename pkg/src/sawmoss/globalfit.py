"""Global fit of sideband powers versus drive power.

The three extracted sideband orders share two physical parameters: the
scaling m between RF amplitude sqrt(P_in) and modulation index, and the
standing-wave reflection alpha. A single overall normalization floats
alongside them because the peak-integration windows capture a fixed
fraction of each Lorentzian. From m, the out-of-plane displacement
constant follows as C_perp = m / (eta * k0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import floquet
from .errors import ConvergenceError, DomainError, InputError
from .extract import SidebandPowers
from .optimize import levenberg_marquardt
from .physics import DEFAULT_CONSTANTS, PhysConstants

__all__ = [
    "GlobalFitResult",
    "model_prediction",
    "fit_global",
    "extract_c_perp",
    "model_curves",
]

MAX_FITTED_ORDER = 2


def model_prediction(n: int, x_sqrt_w: float, m: float, alpha: float, norm: float = 1.0) -> float:
    """Predicted integral of sideband order n at RF amplitude x = sqrt(P_in).

    ``norm`` carries the common captured-fraction scale of the peak
    integrals; the physical weight is the amplitude-averaged squared Bessel
    weight at modulation index m*x.
    """
    if x_sqrt_w < 0:
        raise DomainError("RF amplitude sqrt(P) must be nonnegative")
    return norm * floquet.sideband_power(n, m * x_sqrt_w, alpha)


def _power_and_gradient(n: int, mod_index: float, alpha: float):
    """(P_n, dP/d(mod_index), dP/d(alpha)) via differentiated quadrature."""
    n = abs(int(n))

    def j_and_deriv(z):
        table = floquet._jn_table(n + 1, z)
        jn = table[n]
        if n == 0:
            jprime = -table[1]
        else:
            jprime = 0.5 * (table[n - 1] - table[n + 1])
        return jn, jprime

    if alpha == 0.0 or mod_index == 0.0:
        jn, jprime = j_and_deriv(np.array([mod_index]))
        value = float(jn[0] ** 2)
        d_m = float(2.0 * jn[0] * jprime[0])
        # alpha enters only through the spread of amplitudes, which vanishes
        # quadratically at alpha = 0 and is immaterial at zero drive
        return value, d_m, 0.0

    amp = 1.0 + alpha * alpha

    def integrands(theta):
        y = np.sqrt(amp + 2.0 * alpha * np.cos(theta))
        jn, jprime = j_and_deriv(mod_index * y)
        common = 2.0 * jn * jprime / np.pi
        return (
            jn * jn / np.pi,
            common * y,
            common * mod_index * (alpha + np.cos(theta)) / y,
        )

    value = floquet._theta_quadrature(lambda th: integrands(th)[0], floquet._QUAD_TOL)[0]
    d_m = floquet._theta_quadrature(lambda th: integrands(th)[1], floquet._QUAD_TOL)[0]
    d_alpha = floquet._theta_quadrature(lambda th: integrands(th)[2], floquet._QUAD_TOL)[0]
    return value, d_m, d_alpha


@dataclass
class GlobalFitResult:
    """Fitted modulation scaling and reflection with derived quantities."""

    m_per_sqrt_w: float
    alpha: float
    m_uncertainty: float
    alpha_uncertainty: float
    norm: float
    norm_uncertainty: float
    chi2_reduced: float
    c_perp_m_per_sqrt_w: float
    c_perp_uncertainty: float
    residuals: np.ndarray
    n_points: int
    n_iterations: int
    converged: bool
    alpha_pinned: bool
    alpha_fixed: bool

    def __post_init__(self):
        if self.m_per_sqrt_w <= 0:
            raise ValueError("fitted m must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("fitted alpha must lie in [0, 1)")


def _alpha_transform(t: float, alpha_max: float) -> tuple:
    """alpha = alpha_max * sigmoid(t) and d(alpha)/dt."""
    s = 1.0 / (1.0 + np.exp(-t))
    return alpha_max * s, alpha_max * s * (1.0 - s)


def fit_global(
    data,
    *,
    eta: float,
    constants: PhysConstants = DEFAULT_CONSTANTS,
    init_m: float = 3.0,
    init_alpha: float = 0.3,
    init_norm: float = 0.7,
    fix_alpha: float = None,
    alpha_max: float = 0.95,
    log_m: bool = False,
    max_iterations: int = 200,
    raise_on_failure: bool = False,
) -> GlobalFitResult:
    """Weighted least-squares fit of (m, alpha, norm) to extracted powers.

    ``data`` is a sequence of :class:`~sawmoss.extract.SidebandPowers`, one
    per acquired spectrum; all three orders of every entry enter the
    residual, weighted by their extracted uncertainties. ``fix_alpha``
    freezes the reflection (useful for pure traveling-wave checks);
    ``log_m`` reparameterizes m logarithmically, which must not change the
    optimum. An alpha estimate pinned against its bounds is reported via
    ``alpha_pinned``.
    """
    points = list(data)
    if len(points) < 4:
        raise InputError(f"global fit requires at least 4 power points, got {len(points)}")

    x_amp = np.array([np.sqrt(max(sp.drive_power_w, 0.0)) for sp in points])
    measured = np.array([sp.p for sp in points])  # (n_points, 3)
    sigma = np.array([sp.uncertainties() for sp in points])
    floor = 1e-9 * max(float(np.max(np.abs(measured))), 1.0)
    sigma = np.maximum(sigma, floor)

    fit_alpha = fix_alpha is None

    def unpack(u):
        m = np.exp(u[0]) if log_m else u[0]
        if fit_alpha:
            alpha, _ = _alpha_transform(u[1], alpha_max)
            norm = u[2]
        else:
            alpha, norm = float(fix_alpha), u[1]
        return m, alpha, norm

    def evaluate(u):
        m, alpha, norm = unpack(u)
        if m <= 0 or not np.isfinite(m):
            return None
        rows, jac_rows = [], []
        dm_du = m if log_m else 1.0
        for i, x in enumerate(x_amp):
            for n in range(MAX_FITTED_ORDER + 1):
                p, d_m0, d_alpha = _power_and_gradient(n, m * x, alpha)
                s = sigma[i, n]
                rows.append((norm * p - measured[i, n]) / s)
                grad_m = norm * d_m0 * x * dm_du / s
                if fit_alpha:
                    _, dalpha_dt = _alpha_transform(u[1], alpha_max)
                    jac_rows.append((grad_m, norm * d_alpha * dalpha_dt / s, p / s))
                else:
                    jac_rows.append((grad_m, p / s))
        return np.array(rows), np.array(jac_rows)

    def residual(u):
        out = evaluate(u)
        if out is None:
            return np.full(measured.size, 1e8)
        return out[0]

    def jacobian(u):
        out = evaluate(u)
        if out is None:
            raise ConvergenceError("global fit stepped outside the model domain")
        return out[1]

    u0 = []
    u0.append(np.log(init_m) if log_m else init_m)
    if fit_alpha:
        a0 = min(max(init_alpha / alpha_max, 1e-4), 1.0 - 1e-4)
        u0.append(float(np.log(a0 / (1.0 - a0))))
    u0.append(init_norm)
    result = levenberg_marquardt(
        residual,
        np.asarray(u0, dtype=float),
        jacobian,
        max_iterations=max_iterations,
        raise_on_failure=raise_on_failure,
    )

    m, alpha, norm = unpack(result.params)
    unc = result.uncertainties()
    m_unc = unc[0] * (m if log_m else 1.0)
    if fit_alpha:
        _, dalpha_dt = _alpha_transform(result.params[1], alpha_max)
        alpha_unc = unc[1] * dalpha_dt
        norm_unc = unc[2]
        pinned = bool(abs(result.params[1]) > 12.0)
    else:
        alpha_unc = 0.0
        norm_unc = unc[1]
        pinned = False

    c_perp, c_perp_unc = extract_c_perp(m, eta, constants.photon_wavenumber_m, m_uncertainty=m_unc)
    return GlobalFitResult(
        m_per_sqrt_w=float(m),
        alpha=float(alpha),
        m_uncertainty=float(m_unc),
        alpha_uncertainty=float(alpha_unc),
        norm=float(norm),
        norm_uncertainty=float(norm_unc),
        chi2_reduced=result.chi2_reduced,
        c_perp_m_per_sqrt_w=c_perp,
        c_perp_uncertainty=c_perp_unc,
        residuals=residual(result.params),
        n_points=measured.size,
        n_iterations=result.n_iterations,
        converged=result.converged,
        alpha_pinned=pinned,
        alpha_fixed=not fit_alpha,
    )


def extract_c_perp(m: float, eta: float, k0_m: float, *, m_uncertainty: float = 0.0) -> tuple:
    """Out-of-plane displacement constant C_perp = m / (eta * k0), in m/sqrt(W)."""
    if eta <= 0 or k0_m <= 0:
        raise DomainError("eta and k0 must be positive")
    value = m / (eta * k0_m)
    return float(value), float(m_uncertainty / (eta * k0_m))


def model_curves(result: GlobalFitResult, x_sqrt_w) -> np.ndarray:
    """Fitted model sampled on an RF-amplitude grid; shape (len(x), 3)."""
    x = np.asarray(x_sqrt_w, dtype=float)
    out = np.empty((x.size, MAX_FITTED_ORDER + 1))
    for i, xi in enumerate(x):
        for n in range(MAX_FITTED_ORDER + 1):
            out[i, n] = model_prediction(n, xi, result.m_per_sqrt_w, result.alpha, result.norm)
    return out
