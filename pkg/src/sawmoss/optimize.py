"""Damped Gauss-Newton least-squares engine shared by the fitting modules.

Minimizes ``sum(residual(p)**2)`` with a Levenberg-Marquardt damping
schedule on the normal equations. Damping scales with ``diag(J^T J)``
(Marquardt-Fletcher), which makes the iteration equivariant under affine
reparameterization of the data axes. Residuals are expected pre-whitened
(divided by their sigma), so ``chi2 = sum(residual**2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

__all__ = ["LeastSquaresResult", "levenberg_marquardt", "numeric_jacobian"]


@dataclass
class LeastSquaresResult:
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    n_points: int
    n_iterations: int
    converged: bool
    condition_number: float
    singular_covariance: bool

    @property
    def chi2_reduced(self) -> float:
        dof = self.n_points - self.params.size
        return self.chi2 / dof if dof > 0 else np.inf

    def uncertainties(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def numeric_jacobian(residual, params: np.ndarray, rel_step: float = 1e-7):
    """Forward-difference Jacobian of a residual vector."""
    r0 = np.asarray(residual(params), dtype=float)
    jac = np.empty((r0.size, params.size))
    for j in range(params.size):
        step = rel_step * max(abs(params[j]), 1.0)
        shifted = params.copy()
        shifted[j] += step
        jac[:, j] = (np.asarray(residual(shifted), dtype=float) - r0) / step
    return jac


def _covariance(jtj: np.ndarray) -> tuple:
    """Inverse of the normal matrix, with a pseudo-inverse fallback.

    The matrix is symmetrically scaled to unit diagonal first so the
    reported condition number reflects parameter degeneracy rather than
    unit disparity.
    """
    diag = np.sqrt(np.clip(np.diag(jtj), 0.0, None))
    diag[diag == 0] = 1.0
    scaled = jtj / np.outer(diag, diag)
    cond = float(np.linalg.cond(scaled))
    rescale = np.outer(diag, diag)
    try:
        if cond < 1e12:
            return np.linalg.inv(scaled) / rescale, cond, False
    except np.linalg.LinAlgError:
        pass
    # Ridge fallback: unconstrained directions get huge (not zero) variance,
    # so downstream weighting discounts them instead of trusting them.
    ridge = np.linalg.inv(scaled + 1e-12 * np.eye(scaled.shape[0]))
    return ridge / rescale, cond, True


def levenberg_marquardt(
    residual,
    params0,
    jacobian=None,
    *,
    max_iterations: int = 500,
    chi2_rtol: float = 1e-10,
    step_tol: float = 1e-12,
    lambda0: float = 1e-3,
    fixed_mask=None,
    raise_on_failure: bool = False,
) -> LeastSquaresResult:
    """Minimize a whitened residual vector over the parameters.

    ``jacobian(params)`` must return d(residual)/d(params); when omitted a
    forward-difference approximation is used. Parameters flagged in
    ``fixed_mask`` are held at their initial values and reported with
    infinite variance. On non-convergence the best iterate is returned
    flagged (or raised inside a :class:`~sawmoss.errors.ConvergenceError`
    when ``raise_on_failure``).
    """
    params = np.asarray(params0, dtype=float).copy()
    if jacobian is None:
        jacobian = lambda p: numeric_jacobian(residual, p)
    fixed = (
        np.zeros(params.size, dtype=bool)
        if fixed_mask is None
        else np.asarray(fixed_mask, dtype=bool).copy()
    )

    r = np.asarray(residual(params), dtype=float)
    chi2 = float(r @ r)
    lam = lambda0
    converged = False
    n_iter = 0
    jtj = None

    for n_iter in range(1, max_iterations + 1):
        jac = np.asarray(jacobian(params), dtype=float)
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj).copy()
        # parameters with (numerically) no leverage are frozen this
        # iteration; stepping them is pure noise amplification
        active = (diag > 1e-16 * np.max(diag)) & ~fixed
        diag[~active] = 1.0

        accepted = False
        for _ in range(50):
            damped = jtj + lam * np.diag(diag)
            damped[~active, :] = 0.0
            damped[:, ~active] = 0.0
            damped[~active, ~active] = 1.0
            rhs = np.where(active, -grad, 0.0)
            try:
                step = np.linalg.solve(damped, rhs)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = params + step
            r_trial = np.asarray(residual(trial), dtype=float)
            chi2_trial = float(r_trial @ r_trial)
            if np.isfinite(chi2_trial) and chi2_trial <= chi2:
                improvement = chi2 - chi2_trial
                params, r, chi2 = trial, r_trial, chi2_trial
                lam = max(lam / 3.0, 1e-14)
                accepted = True
                scale = np.linalg.norm(params) + step_tol
                if improvement <= chi2_rtol * max(chi2, 1e-300) or (
                    np.linalg.norm(step) <= step_tol * scale
                ):
                    converged = True
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if converged or not accepted:
            # a rejected step with saturated damping means a (local) minimum
            converged = converged or not accepted
            break

    jac = np.asarray(jacobian(params), dtype=float)
    jac[:, fixed] = 0.0
    jtj = jac.T @ jac
    free = ~fixed
    cov = np.zeros_like(jtj)
    cov_free, cond, singular = _covariance(jtj[np.ix_(free, free)])
    cov[np.ix_(free, free)] = cov_free
    cov[fixed, fixed] = np.inf
    result = LeastSquaresResult(
        params=params,
        covariance=cov,
        chi2=chi2,
        n_points=r.size,
        n_iterations=n_iter,
        converged=converged,
        condition_number=cond,
        singular_covariance=singular,
    )
    if not converged and raise_on_failure:
        raise ConvergenceError(
            f"no convergence after {n_iter} iterations (chi2={chi2:.6g})", best_result=result
        )
    return result
