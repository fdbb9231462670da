"""Synthetic training runs drawn from a known law, for recovery checks and demos."""

from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

import numpy as np

from inflaw.arch import (
    DEFAULT_CONVENTION,
    CountingConvention,
    TransformerConfig,
    count_params,
    swiglu_f_size,
)
from inflaw.data import RunSet, TrainingRun
from inflaw.laws import FittedLawRecord, evaluate


def config_for(n_params: float, ratio: float, *, n_heads: int = 8,
               convention: CountingConvention = DEFAULT_CONVENTION,
               label: Optional[str] = None) -> TransformerConfig:
    """Architecture with aspect ratio near ``ratio`` and size near ``n_params``.

    Widths are scanned in steps of ``8 * n_heads`` with the gated-MLP width
    rule; the width whose count is closest to ``n_params`` is returned.
    """
    step = 8 * n_heads
    best = None
    for d_model in range(step, 16384 + 1, step):
        n_layers = max(1, round(d_model / ratio))
        cfg = TransformerConfig(d_model, swiglu_f_size(d_model), n_layers, n_heads, label=label)
        gap = abs(math.log(count_params(cfg, convention) / n_params)) + abs(math.log(cfg.aspect_ratio / ratio))
        if best is None or gap < best[0]:
            best = (gap, cfg)
    return best[1]


def make_runs(
    law: FittedLawRecord,
    points: Iterable[tuple[TransformerConfig, int, Optional[str]]],
    *,
    noise_sd: float = 0.0,
    seed: Optional[int] = None,
    convention: CountingConvention = DEFAULT_CONVENTION,
) -> RunSet:
    """Runs whose loss is the law's prediction, plus optional Gaussian noise.

    ``points`` yields ``(config, n_tokens, tag)``; N is the counted size.
    """
    rng = np.random.default_rng(seed)
    runs = []
    for config, n_tokens, tag in points:
        n_params = count_params(config, convention)
        loss = evaluate(law.kind, law.coefficients, n_params, n_tokens, config.aspect_ratio)
        if noise_sd:
            loss += float(rng.normal(0.0, noise_sd))
        runs.append(TrainingRun(config, n_params, int(n_tokens), loss, tag, config.label))
    return RunSet(tuple(runs))


def sweep_points(
    sizes: Sequence[float],
    ratios: Sequence[float],
    token_multiples: Sequence[int],
    *,
    convention: CountingConvention = DEFAULT_CONVENTION,
) -> list[tuple[TransformerConfig, int, str]]:
    """Cartesian-free sweep: size ``i`` uses ``ratios[i % len(ratios)]``, every token multiple."""
    points = []
    for i, size in enumerate(sizes):
        ratio = ratios[i % len(ratios)]
        cfg = config_for(size, ratio, convention=convention, label=f"{size / 1e6:.0f}M-r{ratio:g}")
        n = count_params(cfg, convention)
        for mult in token_multiples:
            points.append((cfg, mult * n, f"{mult}N"))
    return points
