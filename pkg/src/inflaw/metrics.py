"""Prediction-quality metrics: MSE, R^2, relative error and Spearman's rho.

Sums go through ``math.fsum`` so results are correctly rounded and do not
depend on summation order.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def _pair(actual: Sequence[float], predicted: Sequence[float]) -> tuple[list[float], list[float]]:
    a = [float(x) for x in actual]
    p = [float(x) for x in predicted]
    if len(a) != len(p):
        raise ValueError(f"length mismatch: {len(a)} actual vs {len(p)} predicted")
    if not a:
        raise ValueError("metrics need at least one point")
    return a, p


def mse(actual: Sequence[float], predicted: Sequence[float]) -> float:
    a, p = _pair(actual, predicted)
    return math.fsum((x - y) ** 2 for x, y in zip(a, p)) / len(a)


def r_squared(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Coefficient of determination; negative when worse than the mean predictor."""
    a, p = _pair(actual, predicted)
    mean = math.fsum(a) / len(a)
    ss_tot = math.fsum((x - mean) ** 2 for x in a)
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined when all actual values are equal")
    ss_res = math.fsum((x - y) ** 2 for x, y in zip(a, p))
    return 1.0 - ss_res / ss_tot


def relative_errors(actual: Sequence[float], predicted: Sequence[float]) -> list[float]:
    """``|actual - predicted| / actual`` per point."""
    a, p = _pair(actual, predicted)
    out = []
    for i, (x, y) in enumerate(zip(a, p)):
        if x == 0.0:
            raise ValueError(f"relative error undefined for zero actual value at index {i}")
        out.append(abs(x - y) / abs(x))
    return out


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing the mean of the positions they span."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=float)
    sorted_x = x[order]
    i = 0
    n = x.size
    while i < n:
        j = i
        while j + 1 < n and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman's rho: Pearson correlation of average-tie ranks."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("spearman needs at least two points")
    ra = average_ranks(a)
    rb = average_ranks(b)
    # ranks are exact multiples of 0.5, so centring is exact
    da = ra - ra.mean()
    db = rb - rb.mean()
    saa = math.fsum(da * da)
    sbb = math.fsum(db * db)
    if saa == 0.0 or sbb == 0.0:
        raise ValueError("spearman is undefined when one input is entirely tied")
    rho = math.fsum(da * db) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, rho))
