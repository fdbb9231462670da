"""Latency modeling, constrained ranking and Pareto frontiers.

Candidates are filtered by parameter, token and latency budgets, scored with
a fitted law and a latency provider, then sorted and truncated to the top k.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from inflaw.arch import (
    DEFAULT_CONVENTION,
    DEFAULT_WORKLOAD,
    CountingConvention,
    TransformerConfig,
    Workload,
    count_params,
)
from inflaw.data import LatencyRecord
from inflaw.laws import FittedLawRecord, evaluate
from inflaw.solver import LeastSquaresProblem, SolverOptions, lm_fit


class SelectionError(ValueError):
    pass


# -- latency ------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyModel:
    """``T = fixed_overhead + n_layers * (per_layer_base + width_slope * max(0, d_model - width_knee))``.

    Latency grows linearly with depth; width only costs once it passes the knee.
    """

    per_layer_base: float
    width_slope: float
    width_knee: int
    fixed_overhead: float
    fitted_workload: Workload = DEFAULT_WORKLOAD
    sse: float = 0.0

    def __call__(self, config: TransformerConfig) -> float:
        excess = max(0, config.d_model - self.width_knee)
        return self.fixed_overhead + config.n_layers * (self.per_layer_base + self.width_slope * excess)


class MeasuredLatencyTable:
    """Exact-match lookup of measured end-to-end latency by architecture and workload."""

    def __init__(self, entries: Union[Mapping[tuple[TransformerConfig, Workload], float],
                                      Iterable[tuple[tuple[TransformerConfig, Workload], float]]]):
        self._entries: dict[tuple, float] = {}
        pairs = entries.items() if isinstance(entries, Mapping) else entries
        for (config, workload), value in pairs:
            key = (config.shape, workload)
            if key in self._entries and self._entries[key] != value:
                raise SelectionError(f"conflicting latency measurements for {config.describe()}")
            self._entries[key] = float(value)

    @classmethod
    def from_records(cls, records: Iterable[LatencyRecord]) -> "MeasuredLatencyTable":
        return cls([((r.config, r.workload), r.latency_s) for r in records if r.metric_kind == "end_to_end"])

    @property
    def workloads(self) -> set[Workload]:
        return {w for _, w in self._entries}

    def lookup(self, config: TransformerConfig, workload: Workload) -> float:
        try:
            return self._entries[(config.shape, workload)]
        except KeyError:
            if workload not in self.workloads:
                raise SelectionError(f"no measurements for workload {workload}") from None
            raise SelectionError(f"no latency measurement for {config.describe()} under {workload}") from None

    def __len__(self) -> int:
        return len(self._entries)


LatencyProvider = Union[LatencyModel, MeasuredLatencyTable]


def predict_latency(provider: LatencyProvider, config: TransformerConfig,
                    workload: Workload = DEFAULT_WORKLOAD) -> float:
    if isinstance(provider, MeasuredLatencyTable):
        return provider.lookup(config, workload)
    if workload != provider.fitted_workload:
        raise SelectionError(
            f"latency model was fitted for {provider.fitted_workload}, not {workload}"
        )
    return provider(config)


def _fit_with_knee(records: Sequence[LatencyRecord], knee: int, options: SolverOptions):
    layers = np.array([r.config.n_layers for r in records], dtype=float)
    excess = np.array([max(0, r.config.d_model - knee) for r in records], dtype=float)
    y = np.array([r.latency_s for r in records], dtype=float)
    # theta = (fixed_overhead, per_layer_base, width_slope)
    design = np.column_stack([np.ones_like(layers), layers, layers * excess])

    problem = LeastSquaresProblem(
        residual_fn=lambda theta: design @ theta - y,
        jacobian_fn=lambda theta: design,
    )
    theta0 = np.array([float(y.min()), 0.0, 0.0])
    return lm_fit(problem, theta0, options)


def fit_latency_model(
    records: Sequence[LatencyRecord],
    knee_grid: Optional[Sequence[int]] = None,
    options: SolverOptions = SolverOptions(),
) -> LatencyModel:
    """Least-squares latency model; the knee is the grid value with the lowest SSE.

    ``knee_grid`` defaults to 0 plus every distinct ``d_model`` in the records.
    """
    records = [r for r in records if r.metric_kind == "end_to_end"]
    if len(records) < 4:
        raise SelectionError(f"need at least 4 end-to-end latency records, got {len(records)}")
    workloads = {r.workload for r in records}
    if len(workloads) != 1:
        raise SelectionError(f"latency records mix {len(workloads)} workloads; fit one workload at a time")
    if len({r.config.n_layers for r in records}) < 2:
        raise SelectionError("degenerate design: all records share one n_layers value")
    if knee_grid is None:
        knee_grid = [0] + sorted({r.config.d_model for r in records})
    if not knee_grid:
        raise SelectionError("knee_grid must be non-empty")

    best = None
    for knee in knee_grid:
        result = _fit_with_knee(records, int(knee), options)
        if best is None or result.sse < best[1].sse:
            best = (int(knee), result)
    knee, result = best
    overhead, base, slope = (float(x) for x in result.theta)
    model = LatencyModel(base, slope, knee, overhead, workloads.pop(), result.sse)
    bad = [r.config.describe() for r in records if not model(r.config) > 0]
    if bad:
        raise SelectionError(f"fitted latency model predicts non-positive latency for {bad[0]}")
    return model


# -- constraints and ranking --------------------------------------------------------


@dataclass(frozen=True)
class Constraints:
    max_params: Optional[int] = None
    max_tokens: Optional[int] = None
    max_latency_s: Optional[float] = None
    workload: Workload = DEFAULT_WORKLOAD

    def __post_init__(self) -> None:
        if self.max_params is None and self.max_tokens is None and self.max_latency_s is None:
            raise ValueError("constraints need at least one bound; pass None for unconstrained ranking")


@dataclass(frozen=True)
class RankedCandidate:
    config: TransformerConfig
    predicted_loss: float
    predicted_latency_s: float
    n_params: int
    rank: int

    @property
    def label(self) -> str:
        return self.config.label or ""


class SortKey(str, enum.Enum):
    LOSS_THEN_LATENCY = "loss_then_latency"
    LATENCY_THEN_LOSS = "latency_then_loss"


CandidateKey = Callable[[RankedCandidate], tuple]

_SORT_KEYS: dict[SortKey, CandidateKey] = {
    SortKey.LOSS_THEN_LATENCY: lambda c: (c.predicted_loss, c.predicted_latency_s),
    SortKey.LATENCY_THEN_LOSS: lambda c: (c.predicted_latency_s, c.predicted_loss),
}


class NoFeasibleCandidates(SelectionError):
    def __init__(self, eliminated: Mapping[str, int], total: int):
        parts = ", ".join(f"{name}: {count}" for name, count in eliminated.items() if count)
        super().__init__(f"all {total} candidates violate the constraints ({parts or 'none'})")
        self.eliminated = dict(eliminated)


def rank_candidates(
    configs: Sequence[TransformerConfig],
    n_tokens: int,
    law: FittedLawRecord,
    provider: LatencyProvider,
    constraints: Optional[Constraints] = None,
    k: int = 1,
    sort_key: "SortKey | str | CandidateKey" = SortKey.LOSS_THEN_LATENCY,
    convention: CountingConvention = DEFAULT_CONVENTION,
) -> list[RankedCandidate]:
    """Filter by the budgets, score survivors, sort and keep the first ``k``.

    ``sort_key`` is a named key or any callable mapping a candidate to a
    sortable tuple. Sorting is stable, so equal keys keep input order.
    """
    if not configs:
        raise SelectionError("no candidate configurations")
    if k < 1:
        raise ValueError("k must be positive")
    key = _resolve_key(sort_key)
    workload = constraints.workload if constraints is not None else _provider_workload(provider)

    eliminated = {"max_params": 0, "max_tokens": 0, "max_latency_s": 0}
    scored = []
    for config in configs:
        n_params = count_params(config, convention)
        if constraints is not None and constraints.max_params is not None and n_params > constraints.max_params:
            eliminated["max_params"] += 1
            continue
        if constraints is not None and constraints.max_tokens is not None and n_tokens > constraints.max_tokens:
            eliminated["max_tokens"] += 1
            continue
        latency = predict_latency(provider, config, workload)
        if constraints is not None and constraints.max_latency_s is not None and latency > constraints.max_latency_s:
            eliminated["max_latency_s"] += 1
            continue
        loss = evaluate(law.kind, law.coefficients, n_params, n_tokens, config.aspect_ratio)
        scored.append(RankedCandidate(config, loss, latency, n_params, 0))
    if not scored:
        raise NoFeasibleCandidates(eliminated, len(configs))

    ordered = sorted(scored, key=key)[:k]
    return [
        RankedCandidate(c.config, c.predicted_loss, c.predicted_latency_s, c.n_params, i)
        for i, c in enumerate(ordered, 1)
    ]


def _resolve_key(sort_key) -> CandidateKey:
    if callable(sort_key) and not isinstance(sort_key, (str, SortKey)):
        return sort_key
    try:
        return _SORT_KEYS[SortKey(sort_key)]
    except ValueError:
        raise ValueError(f"unknown sort key {sort_key!r}; choose from {[k.value for k in SortKey]}") from None


def _provider_workload(provider: LatencyProvider) -> Workload:
    if isinstance(provider, LatencyModel):
        return provider.fitted_workload
    workloads = provider.workloads
    if len(workloads) == 1:
        return next(iter(workloads))
    return DEFAULT_WORKLOAD


# -- Pareto frontier ------------------------------------------------------------------


@dataclass(frozen=True)
class ParetoPoint:
    label: str
    latency_s: float
    quality: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.latency_s) and math.isfinite(self.quality)):
            raise ValueError(f"point {self.label!r} has non-finite fields")
        if self.latency_s <= 0:
            raise ValueError(f"point {self.label!r} needs a positive latency")


def dominates(p: ParetoPoint, q: ParetoPoint) -> bool:
    """``p`` is no slower and no worse than ``q``, and strictly better in one."""
    return (
        p.latency_s <= q.latency_s
        and p.quality >= q.quality
        and (p.latency_s < q.latency_s or p.quality > q.quality)
    )


def pareto_frontier(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated points sorted by latency; identical points are all kept.

    Sweeps points by increasing latency (quality descending within a latency)
    and keeps each point whose quality reaches the best quality seen at any
    strictly lower latency, or ties the leader at its own latency.
    """
    if not points:
        raise ValueError("pareto_frontier needs at least one point")
    order = sorted(range(len(points)), key=lambda i: (points[i].latency_s, -points[i].quality, i))
    frontier: list[ParetoPoint] = []
    best_quality = -math.inf
    i = 0
    while i < len(order):
        latency = points[order[i]].latency_s
        group = []
        while i < len(order) and points[order[i]].latency_s == latency:
            group.append(points[order[i]])
            i += 1
        top = group[0].quality
        if top > best_quality:
            frontier.extend(p for p in group if p.quality == top)
            best_quality = top
    return frontier
