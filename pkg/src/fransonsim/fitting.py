"""Small Levenberg-Marquardt engine for the package's fit families.

All fits here are low-dimensional (2-3 parameters) weighted least squares
with analytic Jacobians. Convergence is declared when the relative
parameter step drops below ``rtol`` (default 1e-8); the iteration budget
is 200 steps. Parameter covariance is (J^T W J)^-1 at the solution, with
sigmas taken as known (no chi-square rescaling).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import FitConvergenceError

MAX_ITERATIONS = 200
STEP_RTOL = 1e-8

ModelJac = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def levenberg_marquardt(model_jac: ModelJac, p0, y, sigma,
                        max_iterations: int = MAX_ITERATIONS,
                        rtol: float = STEP_RTOL) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Minimize sum(((y - f(p)) / sigma)^2) by damped Gauss-Newton steps.

    Parameters
    ----------
    model_jac : callable
        Maps a parameter vector to (f, J) with f.shape == y.shape and
        J.shape == (len(y), len(p)).
    p0 : array_like
        Starting parameters.
    y, sigma : array_like
        Data and per-point standard deviations (sigma > 0).

    Returns
    -------
    p, cov, chi2, n_iter

    Raises
    ------
    FitConvergenceError
        If the step tolerance is not reached within the iteration budget,
        or the normal equations are singular.
    """
    p = np.asarray(p0, dtype=float).copy()
    y = np.asarray(y, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
        raise ValueError("sigmas must be positive and finite")
    w = 1.0 / sigma

    f, jac = model_jac(p)
    resid = (y - f) * w
    chi2 = float(resid @ resid)
    lam = 1e-3
    converged = False
    n_iter = 0

    for n_iter in range(1, max_iterations + 1):
        jw = jac * w[:, None]
        jtj = jw.T @ jw
        jtr = jw.T @ resid
        diag = np.diag(jtj).copy()
        diag[diag <= 0] = 1.0

        # Retry the step with increased damping until chi2 improves.
        for _ in range(50):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), jtr)
            except np.linalg.LinAlgError:
                raise FitConvergenceError(
                    f"singular normal equations at iteration {n_iter}, p={p}")
            trial = p + step
            with np.errstate(over="ignore", invalid="ignore"):
                f_t, jac_t = model_jac(trial)
                resid_t = (y - f_t) * w
                chi2_t = float(resid_t @ resid_t)
            if np.isfinite(chi2_t) and chi2_t <= chi2:
                break
            lam *= 4.0
        else:
            raise FitConvergenceError(
                f"damping runaway at iteration {n_iter}: chi2={chi2:.6g}, p={p}")

        scale = np.maximum(np.abs(p), np.abs(trial))
        scale[scale == 0] = 1.0
        rel_step = float(np.max(np.abs(step) / scale))
        p, f, jac, resid, chi2 = trial, f_t, jac_t, resid_t, chi2_t
        lam = max(lam / 4.0, 1e-12)
        if rel_step < rtol:
            converged = True
            break

    if not converged:
        raise FitConvergenceError(
            f"no convergence after {max_iterations} iterations: "
            f"chi2={chi2:.6g}, p={p}, last relative step {rel_step:.3g}")

    jw = jac * w[:, None]
    jtj = jw.T @ jw
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        raise FitConvergenceError(f"singular covariance at solution p={p}")
    return p, cov, chi2, n_iter


def sinusoid_model(phases: np.ndarray) -> ModelJac:
    """f(phi; A, B, phi0) = A + B cos(phi - phi0)."""
    phases = np.asarray(phases, dtype=float)

    def model(p):
        a, b, phi0 = p
        c = np.cos(phases - phi0)
        s = np.sin(phases - phi0)
        f = a + b * c
        jac = np.column_stack([np.ones_like(phases), c, b * s])
        return f, jac

    return model


def offset_exponential_model(taus: np.ndarray) -> ModelJac:
    """f(tau; baseline, amplitude, timescale) = baseline + amplitude * exp(-|tau|/timescale)."""
    abs_tau = np.abs(np.asarray(taus, dtype=float))

    def model(p):
        base, amp, ts = p
        ts = max(ts, 1e-12)
        e = np.exp(-abs_tau / ts)
        f = base + amp * e
        jac = np.column_stack([np.ones_like(abs_tau), e, amp * e * abs_tau / ts**2])
        return f, jac

    return model


def exponential_model(times: np.ndarray) -> ModelJac:
    """f(t; amplitude, timescale) = amplitude * exp(-t/timescale)."""
    times = np.asarray(times, dtype=float)

    def model(p):
        amp, ts = p
        ts = max(ts, 1e-12)
        e = np.exp(-times / ts)
        jac = np.column_stack([e, amp * e * times / ts**2])
        return e * amp, jac

    return model


def offset_exponential_logts_model(taus: np.ndarray) -> ModelJac:
    """Offset exponential with log(timescale) as the third parameter.

    The log parametrization keeps the timescale positive while iterating
    on sparse data, where a free timescale can wander through zero into a
    degenerate flat model."""
    abs_tau = np.abs(np.asarray(taus, dtype=float))

    def model(p):
        base, amp, log_ts = p
        ts = np.exp(np.clip(log_ts, -50.0, 50.0))
        e = np.exp(-abs_tau / ts)
        f = base + amp * e
        jac = np.column_stack([np.ones_like(abs_tau), e, amp * e * abs_tau / ts])
        return f, jac

    return model


def exponential_logts_model(times: np.ndarray) -> ModelJac:
    """Plain exponential with log(timescale) as the second parameter."""
    times = np.asarray(times, dtype=float)

    def model(p):
        amp, log_ts = p
        ts = np.exp(np.clip(log_ts, -50.0, 50.0))
        e = np.exp(-times / ts)
        jac = np.column_stack([e, amp * e * times / ts])
        return e * amp, jac

    return model
