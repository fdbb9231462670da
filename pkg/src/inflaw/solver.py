"""Levenberg-Marquardt nonlinear least squares.

Minimizes ``sum(r(theta)**2)`` with Marquardt's diagonal scaling and the
classic x10 / /10 damping schedule. Jacobians are analytic when the problem
supplies one, central differences otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ResidualFn = Callable[[np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray], np.ndarray]


class SolverError(ArithmeticError):
    """Non-finite values or a malformed problem; ``theta`` is where it happened."""

    def __init__(self, message: str, theta: Optional[np.ndarray] = None):
        if theta is not None:
            message = f"{message} (theta={np.array2string(np.asarray(theta), precision=6)})"
        super().__init__(message)
        self.theta = None if theta is None else np.array(theta, dtype=float)


@dataclass
class LeastSquaresProblem:
    residual_fn: ResidualFn
    jacobian_fn: Optional[JacobianFn] = None
    bounds: Optional[Sequence[tuple[float, float]]] = None

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(self.residual_fn(theta), dtype=float)

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        if self.jacobian_fn is None:
            return finite_diff_jacobian(self.residual_fn, theta)
        return np.asarray(self.jacobian_fn(theta), dtype=float)

    def project(self, theta: np.ndarray) -> np.ndarray:
        if self.bounds is None:
            return theta
        lo = np.array([b[0] for b in self.bounds], dtype=float)
        hi = np.array([b[1] for b in self.bounds], dtype=float)
        return np.clip(theta, lo, hi)


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 10_000
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    sse_rel_tol: float = 1e-12
    grad_inf_tol: float = 1e-10
    step_tol: float = 1e-12
    max_damping: float = 1e16

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.initial_damping <= 0:
            raise ValueError("initial_damping must be positive")
        if self.damping_up <= 1 or self.damping_down <= 1:
            raise ValueError("damping factors must exceed 1")
        for name in ("sse_rel_tol", "grad_inf_tol", "step_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class FitResult:
    theta: np.ndarray
    sse: float
    iterations: int
    converged: bool
    reason: str
    #: SSE after each accepted step, starting with SSE(theta0)
    sse_history: list[float] = field(default_factory=list)

    @property
    def residual_norm_history(self) -> list[float]:
        return [float(np.sqrt(s)) for s in self.sse_history]


def finite_diff_jacobian(residual_fn: ResidualFn, theta: np.ndarray) -> np.ndarray:
    """Central-difference jacobian with step ``1e-6 * max(1, |theta_j|)``."""
    theta = np.asarray(theta, dtype=float)
    columns = []
    for j in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[j]))
        plus = theta.copy()
        minus = theta.copy()
        plus[j] += h
        minus[j] -= h
        r_plus = np.asarray(residual_fn(plus), dtype=float)
        r_minus = np.asarray(residual_fn(minus), dtype=float)
        if not (np.all(np.isfinite(r_plus)) and np.all(np.isfinite(r_minus))):
            raise SolverError(f"non-finite residual while differencing coordinate {j}", theta)
        # the realized step, not h, keeps rounding of theta +- h out of the quotient
        columns.append((r_plus - r_minus) / (plus[j] - minus[j]))
    return np.column_stack(columns) if columns else np.zeros((0, 0))


def lm_step(jac: np.ndarray, resid: np.ndarray, damping: float) -> np.ndarray:
    """Solve ``(J^T J + damping * diag(J^T J)) delta = -J^T r``.

    Zero diagonal entries (parameters the residuals ignore) are floored so the
    damped system stays positive definite.

    Raises ``np.linalg.LinAlgError`` when the Cholesky factorization fails.
    """
    jtj = jac.T @ jac
    grad = jac.T @ resid
    diag = np.diag(jtj).copy()
    floor = 1e-12 * max(float(diag.max(initial=0.0)), 1e-300)
    diag = np.maximum(diag, floor)
    lhs = jtj + damping * np.diag(diag)
    chol = np.linalg.cholesky(lhs)
    y = np.linalg.solve(chol, -grad)
    return np.linalg.solve(chol.T, y)


def _sse(r: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return float(r @ r)


def lm_fit(
    problem: LeastSquaresProblem,
    theta0: Sequence[float],
    options: SolverOptions = SolverOptions(),
) -> FitResult:
    """Minimize the problem's sum of squared residuals from ``theta0``.

    Trial points with non-finite residuals count as rejected steps. Stops on
    relative SSE decrease below ``sse_rel_tol``, gradient inf-norm below
    ``grad_inf_tol``, a step norm below ``step_tol`` (relative to ``|theta|``),
    damping blow-up, or ``max_iterations``.
    """
    theta = problem.project(np.array(theta0, dtype=float))
    r = problem.residuals(theta)
    if r.ndim != 1:
        raise SolverError("residuals must be a vector", theta)
    if not np.all(np.isfinite(r)):
        raise SolverError("non-finite residuals at the starting point", theta)
    m, p = r.size, theta.size
    if m < p:
        raise SolverError(f"under-determined problem: {m} residuals for {p} parameters")

    sse = _sse(r)
    history = [sse]
    if sse == 0.0:
        return FitResult(theta, 0.0, 0, True, "zero residual", history)

    jac = _checked_jacobian(problem, theta, m, p)
    damping = options.initial_damping
    iterations = 0
    converged, reason = False, "max iterations"

    while iterations < options.max_iterations:
        grad = jac.T @ r
        if np.max(np.abs(grad)) < options.grad_inf_tol:
            converged, reason = True, "gradient below tolerance"
            break
        iterations += 1
        try:
            delta = lm_step(jac, r, damping)
        except np.linalg.LinAlgError:
            damping *= options.damping_up
            if damping > options.max_damping:
                converged, reason = False, "damping diverged"
                break
            continue

        trial = problem.project(theta + delta)
        step = trial - theta
        r_trial = problem.residuals(trial)
        sse_trial = _sse(r_trial) if np.all(np.isfinite(r_trial)) else np.inf
        if not np.isfinite(sse_trial):
            sse_trial = np.inf

        if sse_trial <= sse:
            decrease = sse - sse_trial
            theta, r = trial, r_trial
            sse_prev, sse = sse, sse_trial
            history.append(sse)
            damping = max(damping / options.damping_down, 1e-300)
            if sse == 0.0:
                converged, reason = True, "zero residual"
                break
            if decrease <= options.sse_rel_tol * sse_prev:
                converged, reason = True, "relative SSE decrease below tolerance"
                break
            if np.linalg.norm(step) <= options.step_tol * (np.linalg.norm(theta) + options.step_tol):
                converged, reason = True, "step below tolerance"
                break
            jac = _checked_jacobian(problem, theta, m, p)
        else:
            damping *= options.damping_up
            if damping > options.max_damping:
                converged, reason = True, "no further decrease possible"
                break

    return FitResult(theta, sse, iterations, converged, reason, history)


def _checked_jacobian(problem: LeastSquaresProblem, theta: np.ndarray, m: int, p: int) -> np.ndarray:
    jac = problem.jacobian(theta)
    if jac.shape != (m, p):
        raise SolverError(f"jacobian has shape {jac.shape}, expected {(m, p)}", theta)
    if not np.all(np.isfinite(jac)):
        raise SolverError("non-finite jacobian", theta)
    return jac
