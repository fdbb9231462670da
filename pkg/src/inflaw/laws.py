"""Chinchilla and inference-efficient scaling laws.

Chinchilla:           L(N, D)    = E + A N^-alpha + B D^-beta
Inference-efficient:  L(N, D, R) = (E + A N^-alpha + B D^-beta) (1 + eps R^gamma)

N is parameters, D training tokens, R = d_model / n_layers.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from inflaw import metrics
from inflaw.solver import FitResult, LeastSquaresProblem, SolverError, SolverOptions, lm_fit

logger = logging.getLogger(__name__)


class LawKind(str, enum.Enum):
    CHINCHILLA = "chinchilla"
    INFERENCE_EFFICIENT = "inference-efficient"

    @classmethod
    def parse(cls, value: "str | LawKind") -> "LawKind":
        if isinstance(value, LawKind):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown law kind {value!r}") from None

    @property
    def uses_ratio(self) -> bool:
        return self is LawKind.INFERENCE_EFFICIENT


@dataclass(frozen=True)
class LawCoefficients:
    E: float
    A: float
    B: float
    alpha: float
    beta: float
    gamma: float = 0.0
    epsilon: float = 0.0
    tied: bool = False

    def __post_init__(self) -> None:
        for name in ("E", "A", "B", "alpha", "beta", "gamma", "epsilon"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"coefficient {name} is not finite")
        if self.tied and not (self.alpha == self.beta == self.gamma):
            raise ValueError("tied coefficients require alpha == beta == gamma")

    @classmethod
    def tied_chinchilla(cls, E: float, A: float, B: float, alpha: float) -> "LawCoefficients":
        return cls(E, A, B, alpha, alpha, alpha, 0.0, tied=True)

    @classmethod
    def tied_inference_efficient(
        cls, E: float, A: float, B: float, alpha: float, epsilon: float
    ) -> "LawCoefficients":
        return cls(E, A, B, alpha, alpha, alpha, epsilon, tied=True)


@dataclass(frozen=True)
class FitDiagnostics:
    sse: float
    iterations: int
    start_index: int
    converged: bool
    reason: str

    def __post_init__(self) -> None:
        if not (self.sse >= 0 and math.isfinite(self.sse)):
            raise ValueError("diagnostic SSE must be finite and nonnegative")


@dataclass(frozen=True)
class FittedLawRecord:
    kind: LawKind
    coefficients: LawCoefficients
    diagnostics: FitDiagnostics = FitDiagnostics(0.0, 0, -1, True, "not fitted")
    data_digest: str = ""
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LawKind.parse(self.kind))
        if self.kind is LawKind.CHINCHILLA and self.coefficients.epsilon != 0.0:
            raise ValueError("a Chinchilla law must have epsilon == 0")


# -- evaluation ---------------------------------------------------------------


def _check_finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise ArithmeticError(f"{what} evaluated to a non-finite value")
    return value


def eval_chinchilla(c: LawCoefficients, n_params: float, n_tokens: float) -> float:
    if n_params <= 0 or n_tokens <= 0:
        raise ValueError("n_params and n_tokens must be positive")
    value = c.E + c.A * n_params ** -c.alpha + c.B * n_tokens ** -c.beta
    return _check_finite(value, "Chinchilla law")


def eval_inference_efficient(c: LawCoefficients, n_params: float, n_tokens: float, ratio: float) -> float:
    if n_params <= 0 or n_tokens <= 0 or ratio <= 0:
        raise ValueError("n_params, n_tokens and ratio must be positive")
    base = c.E + c.A * n_params ** -c.alpha + c.B * n_tokens ** -c.beta
    return _check_finite(base * (1.0 + c.epsilon * ratio ** c.gamma), "inference-efficient law")


def evaluate(kind: LawKind, c: LawCoefficients, n_params: float, n_tokens: float,
             ratio: Optional[float] = None) -> float:
    kind = LawKind.parse(kind)
    if kind is LawKind.CHINCHILLA:
        return eval_chinchilla(c, n_params, n_tokens)
    if ratio is None:
        raise ValueError("the inference-efficient law needs an aspect ratio")
    return eval_inference_efficient(c, n_params, n_tokens, ratio)


# -- parameterization used by the fitter -----------------------------------------


@dataclass(frozen=True)
class Parameterization:
    """Maps a free parameter vector to coefficients for one (kind, tied) pair."""

    kind: LawKind
    tied: bool

    @property
    def names(self) -> tuple[str, ...]:
        if self.kind is LawKind.CHINCHILLA:
            return ("E", "A", "B", "alpha") if self.tied else ("E", "A", "B", "alpha", "beta")
        if self.tied:
            return ("E", "A", "B", "alpha", "epsilon")
        return ("E", "A", "B", "alpha", "beta", "gamma", "epsilon")

    @property
    def size(self) -> int:
        return len(self.names)

    def to_coefficients(self, theta: Sequence[float]) -> LawCoefficients:
        t = [float(x) for x in theta]
        if self.kind is LawKind.CHINCHILLA:
            if self.tied:
                return LawCoefficients.tied_chinchilla(*t)
            E, A, B, alpha, beta = t
            return LawCoefficients(E, A, B, alpha, beta, 0.0, 0.0, tied=False)
        if self.tied:
            return LawCoefficients.tied_inference_efficient(*t)
        E, A, B, alpha, beta, gamma, eps = t
        return LawCoefficients(E, A, B, alpha, beta, gamma, eps, tied=False)

    def from_coefficients(self, c: LawCoefficients) -> np.ndarray:
        return np.array([getattr(c, name) for name in self.names], dtype=float)

    def predict(self, theta: np.ndarray, n: np.ndarray, d: np.ndarray, r: Optional[np.ndarray]) -> np.ndarray:
        c = self._unpack(theta)
        base = c["E"] + c["A"] * n ** -c["alpha"] + c["B"] * d ** -c["beta"]
        if self.kind is LawKind.CHINCHILLA:
            return base
        return base * (1.0 + c["epsilon"] * r ** c["gamma"])

    def jacobian(self, theta: np.ndarray, n: np.ndarray, d: np.ndarray, r: Optional[np.ndarray]) -> np.ndarray:
        """d(prediction)/d(theta), one row per point."""
        c = self._unpack(theta)
        n_term = n ** -c["alpha"]
        d_term = d ** -c["beta"]
        base = c["E"] + c["A"] * n_term + c["B"] * d_term
        d_alpha = -c["A"] * n_term * np.log(n)
        d_beta = -c["B"] * d_term * np.log(d)
        if self.kind is LawKind.CHINCHILLA:
            cols = {"E": np.ones_like(n), "A": n_term, "B": d_term}
            if self.tied:
                cols["alpha"] = d_alpha + d_beta
            else:
                cols["alpha"], cols["beta"] = d_alpha, d_beta
            return np.column_stack([cols[name] for name in self.names])

        r_term = r ** c["gamma"]
        factor = 1.0 + c["epsilon"] * r_term
        d_gamma = base * c["epsilon"] * r_term * np.log(r)
        cols = {
            "E": factor,
            "A": n_term * factor,
            "B": d_term * factor,
            "epsilon": base * r_term,
        }
        if self.tied:
            cols["alpha"] = (d_alpha + d_beta) * factor + d_gamma
        else:
            cols["alpha"] = d_alpha * factor
            cols["beta"] = d_beta * factor
            cols["gamma"] = d_gamma
        return np.column_stack([cols[name] for name in self.names])

    def _unpack(self, theta: Sequence[float]) -> dict[str, float]:
        values = dict(zip(self.names, (float(x) for x in theta)))
        if self.tied:
            values["beta"] = values["alpha"]
            values["gamma"] = values["alpha"]
        values.setdefault("gamma", 0.0)
        values.setdefault("epsilon", 0.0)
        return values


# -- fitting ---------------------------------------------------------------------


@dataclass(frozen=True)
class StartGrid:
    """Cartesian grid of starting points for multi-start fitting."""

    E: tuple[float, ...] = (0.5, 1.5, 2.5, 4.0)
    A: tuple[float, ...] = (1e2, 1e4, 1e6)
    B: tuple[float, ...] = (1e2, 1e4, 1e6)
    alpha: tuple[float, ...] = (0.3, 0.5, 0.7)
    epsilon: tuple[float, ...] = (1e-4, 1e-3, 1e-2)

    def starts(self, parameterization: Parameterization) -> list[np.ndarray]:
        axes = []
        for name in parameterization.names:
            if name in ("beta", "gamma"):
                axes.append(None)  # untied exponents start at alpha
            else:
                axes.append(getattr(self, name))
        free = [a for a in axes if a is not None]
        out = []
        for combo in itertools.product(*free):
            values = iter(combo)
            theta, alpha = [], None
            for name, axis in zip(parameterization.names, axes):
                if axis is None:
                    theta.append(alpha)
                else:
                    v = next(values)
                    if name == "alpha":
                        alpha = v
                    theta.append(v)
            out.append(np.array(theta, dtype=float))
        return out


DEFAULT_START_GRID = StartGrid()


class FitError(ArithmeticError):
    pass


def _run_arrays(runs, kind: LawKind) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray], np.ndarray]:
    n = np.array([run.n_params for run in runs], dtype=float)
    d = np.array([run.n_tokens for run in runs], dtype=float)
    y = np.array([run.loss for run in runs], dtype=float)
    r = None
    if kind.uses_ratio:
        missing = [run.label for run in runs if run.config is None]
        if missing:
            raise ValueError(f"runs without an architecture cannot be fit with an aspect-ratio law: {missing[:5]}")
        r = np.array([run.config.aspect_ratio for run in runs], dtype=float)
    return n, d, r, y


def build_problem(parameterization: Parameterization, n, d, r, y) -> LeastSquaresProblem:
    """Residual ``actual - predicted`` with the analytic jacobian ``-dL/dtheta``."""

    def residual(theta: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            return y - parameterization.predict(theta, n, d, r)

    def jacobian(theta: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            return -parameterization.jacobian(theta, n, d, r)

    return LeastSquaresProblem(residual, jacobian)


def fit_law(
    kind: "LawKind | str",
    fit_runs,
    tie_exponents: bool = True,
    starts: StartGrid | Iterable[Sequence[float]] = DEFAULT_START_GRID,
    options: SolverOptions = SolverOptions(),
    *,
    data_digest: Optional[str] = None,
    seed: Optional[int] = None,
) -> FittedLawRecord:
    """Multi-start Levenberg-Marquardt fit; the lowest-SSE start wins.

    ``fit_runs`` is a RunSet or any sequence of runs. Ties in SSE resolve to
    the lower start index, so the result does not depend on start order
    beyond the index itself.
    """
    kind = LawKind.parse(kind)
    runs = list(getattr(fit_runs, "runs", fit_runs))
    param = Parameterization(kind, tie_exponents)
    if len(runs) < param.size:
        raise FitError(
            f"under-determined: {len(runs)} runs for {param.size} free parameters "
            f"({', '.join(param.names)})"
        )
    n, d, r, y = _run_arrays(runs, kind)
    problem = build_problem(param, n, d, r, y)
    start_list = starts.starts(param) if isinstance(starts, StartGrid) else [np.asarray(s, float) for s in starts]

    best: Optional[tuple[float, int, FitResult]] = None
    failures = 0
    for index, theta0 in enumerate(start_list):
        try:
            result = lm_fit(problem, theta0, options)
        except SolverError as exc:
            failures += 1
            logger.debug("start %d failed: %s", index, exc)
            continue
        if not np.all(np.isfinite(result.theta)):
            failures += 1
            continue
        if best is None or result.sse < best[0]:
            best = (result.sse, index, result)
    if best is None:
        raise FitError(f"all {len(start_list)} starts failed to produce finite residuals")
    _, index, result = best
    logger.info("best of %d starts: #%d, sse=%.3e (%d failed)", len(start_list), index, result.sse, failures)

    if data_digest is None:
        data_digest = getattr(getattr(fit_runs, "provenance", None), "digest", "") or ""
    return FittedLawRecord(
        kind=kind,
        coefficients=param.to_coefficients(result.theta),
        diagnostics=FitDiagnostics(
            sse=result.sse,
            iterations=result.iterations,
            start_index=index,
            converged=result.converged,
            reason=result.reason,
        ),
        data_digest=data_digest,
        seed=seed,
    )


# -- prediction and reporting ------------------------------------------------------


def predict(record: FittedLawRecord, runs) -> list[float]:
    """Predicted loss for each run, in input order."""
    out = []
    for run in getattr(runs, "runs", runs):
        ratio = run.config.aspect_ratio if run.config is not None else None
        out.append(evaluate(record.kind, record.coefficients, run.n_params, run.n_tokens, ratio))
    return out


@dataclass(frozen=True)
class PointReport:
    run: object
    predicted: float
    residual: float
    relative_error: float


@dataclass(frozen=True)
class FitReport:
    law: FittedLawRecord
    per_point: tuple[PointReport, ...]
    mse: float
    r_squared: Optional[float]
    spearman: Optional[float]
    max_relative_error: float

    @property
    def actual(self) -> list[float]:
        return [p.run.loss for p in self.per_point]

    @property
    def predicted(self) -> list[float]:
        return [p.predicted for p in self.per_point]


def fit_report(record: FittedLawRecord, runs) -> FitReport:
    """Per-point residuals plus aggregate metrics of ``record`` on ``runs``.

    R^2 and Spearman are ``None`` when undefined for the set (constant
    actuals, a single point, or fully tied predictions).
    """
    run_list = list(getattr(runs, "runs", runs))
    if not run_list:
        raise ValueError("cannot report on an empty run set")
    predicted = predict(record, run_list)
    actual = [run.loss for run in run_list]
    rel = metrics.relative_errors(actual, predicted)
    points = tuple(
        PointReport(run, p, a - p, e) for run, a, p, e in zip(run_list, actual, predicted, rel)
    )
    try:
        r2 = metrics.r_squared(actual, predicted)
    except ValueError:
        r2 = None
    try:
        rho = metrics.spearman(actual, predicted)
    except ValueError:
        rho = None
    return FitReport(record, points, metrics.mse(actual, predicted), r2, rho, max(rel))
