"""Transformer architecture arithmetic.

Parameter counting, aspect ratio, training FLOPs and aspect-ratio variant
enumeration for decoder-only transformers with a gated (SwiGLU) MLP.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

logger = logging.getLogger(__name__)

#: GPT-NeoX tokenizer vocabulary, used by every model in the reference sweep.
DEFAULT_VOCAB_SIZE = 50432

_INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class TransformerConfig:
    """One architecture point. ``label`` is informational and ignored by equality."""

    d_model: int
    f_size: int
    n_layers: int
    n_heads: int
    vocab_size: int = DEFAULT_VOCAB_SIZE
    label: Optional[str] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        for name in ("d_model", "f_size", "n_layers", "n_heads", "vocab_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError(f"{name} must be an int, got {value!r}")
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if self.d_model % self.n_heads:
            raise ValueError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        return (self.d_model, self.f_size, self.n_layers, self.n_heads, self.vocab_size)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def aspect_ratio(self) -> float:
        return aspect_ratio(self)

    def describe(self) -> str:
        name = self.label or "config"
        return (
            f"{name}(d_model={self.d_model}, f_size={self.f_size}, "
            f"n_layers={self.n_layers}, n_heads={self.n_heads})"
        )


@dataclass(frozen=True)
class CountingConvention:
    """How the parameter count treats embeddings and normalization layers.

    ``norm_params_per_layer`` is a multiplier: each layer contributes
    ``norm_params_per_layer * d_model`` normalization parameters. The final
    normalization, when included, is a single gain vector of ``d_model``.
    """

    tie_embeddings: bool = False
    norm_params_per_layer: int = 2
    include_final_norm: bool = True

    def __post_init__(self) -> None:
        if self.norm_params_per_layer < 0:
            raise ValueError("norm_params_per_layer must be nonnegative")


DEFAULT_CONVENTION = CountingConvention()
#: Attention + MLP + embeddings only; handy for hand-checkable arithmetic.
BARE_CONVENTION = CountingConvention(
    tie_embeddings=False, norm_params_per_layer=0, include_final_norm=False
)


@dataclass(frozen=True)
class Workload:
    """An inference workload; the default matches batch 1, 128 prompt / 256 generated tokens."""

    batch_size: int = 1
    input_tokens: int = 128
    output_tokens: int = 256
    device_tag: str = "a100-40gb"

    def __post_init__(self) -> None:
        for name in ("batch_size", "input_tokens", "output_tokens"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive int, got {value!r}")


DEFAULT_WORKLOAD = Workload()


def aspect_ratio(config: TransformerConfig) -> float:
    """Hidden size per layer, ``d_model / n_layers``."""
    return config.d_model / config.n_layers


def layer_params(config: TransformerConfig, convention: CountingConvention = DEFAULT_CONVENTION) -> int:
    """Parameters in one transformer block."""
    d, f = config.d_model, config.f_size
    attention = 4 * d * d
    mlp = 3 * d * f
    norms = convention.norm_params_per_layer * d
    return attention + mlp + norms


def count_params(config: TransformerConfig, convention: CountingConvention = DEFAULT_CONVENTION) -> int:
    """Total parameter count of a decoder-only transformer.

    Input embedding, ``n_layers`` blocks (attention ``4 d^2``, gated MLP
    ``3 d f``, per-layer norms), optional final norm and an output head that
    is absent when embeddings are tied.

    Raises
    ------
    OverflowError
        If the count does not fit in a signed 64-bit integer.
    """
    d = config.d_model
    embed = config.vocab_size * d
    head = 0 if convention.tie_embeddings else config.vocab_size * d
    final_norm = d if convention.include_final_norm else 0
    total = embed + config.n_layers * layer_params(config, convention) + final_norm + head
    if total > _INT64_MAX:
        raise OverflowError(f"parameter count {total} exceeds the 64-bit range for {config.describe()}")
    return total


def training_flops(n_params: float, n_tokens: float) -> float:
    """Approximate training compute, ``6 N D``."""
    if n_params < 1 or n_tokens < 1:
        raise ValueError("n_params and n_tokens must be >= 1")
    if float(n_params).is_integer() and float(n_tokens).is_integer():
        # exact integer product, rounded once
        return float(6 * int(n_params) * int(n_tokens))
    return 6.0 * n_params * n_tokens


def chinchilla_optimal_tokens(n_params: int) -> int:
    """Compute-optimal token count, 20 tokens per parameter."""
    if float(n_params) != int(n_params) or n_params < 1:
        raise ValueError(f"n_params must be a positive integer, got {n_params!r}")
    return 20 * int(n_params)


FSizeRule = Literal["swiglu", "preserve_ratio"]


def swiglu_f_size(d_model: int, multiple_of: int = 256) -> int:
    """Gated-MLP width ``8/3 * d_model`` rounded up to ``multiple_of``.

    Reproduces every intermediate size of the reference model sweep.
    """
    hidden = int(8 * d_model / 3)
    return multiple_of * math.ceil(hidden / multiple_of)


def _scaled_f_size(base: TransformerConfig, d_model: int, rule: FSizeRule) -> int:
    if d_model == base.d_model:
        return base.f_size
    if rule == "swiglu":
        return swiglu_f_size(d_model)
    if rule == "preserve_ratio":
        return max(128, 128 * round(d_model * base.f_size / base.d_model / 128))
    raise ValueError(f"unknown f_size rule {rule!r}")


def _nearest_layers(d_model: int, target: float) -> int:
    lo = max(1, math.floor(d_model / target))
    hi = max(1, math.ceil(d_model / target))
    # ties go to the deeper model, which keeps the count closer for wide targets
    return min((hi, lo), key=lambda n: abs(d_model / n - target))


def search_variant(
    base: TransformerConfig,
    target_ratio: float,
    size_tolerance: float,
    convention: CountingConvention = DEFAULT_CONVENTION,
    *,
    head_dim_multiple: int = 32,
    f_size_rule: FSizeRule = "swiglu",
    max_width_factor: float = 4.0,
) -> Optional[TransformerConfig]:
    """Best same-size variant of ``base`` at one aspect ratio, or ``None``.

    Widths are scanned in steps of ``n_heads * head_dim_multiple``; for each
    width the layer count giving the ratio nearest ``target_ratio`` is taken,
    and the width whose total count lands closest to the base count wins.
    """
    if target_ratio <= 0:
        raise ValueError("target ratio must be positive")
    if not 0 < size_tolerance < 1:
        raise ValueError("size_tolerance must lie in (0, 1)")
    step = base.n_heads * head_dim_multiple
    base_count = count_params(base, convention)
    best: Optional[tuple[float, int, TransformerConfig]] = None
    widths = range(step, int(base.d_model * max_width_factor) + 1, step)
    for d_model in widths:
        n_layers = _nearest_layers(d_model, target_ratio)
        f_size = _scaled_f_size(base, d_model, f_size_rule)
        candidate = TransformerConfig(
            d_model, f_size, n_layers, base.n_heads, base.vocab_size,
            label=_variant_label(base, target_ratio),
        )
        deviation = abs(count_params(candidate, convention) - base_count) / base_count
        if deviation > size_tolerance:
            continue
        key = (deviation, d_model)
        if best is None or key < best[:2]:
            best = (deviation, d_model, candidate)
    if best is None:
        return None
    found = best[2]
    if found == base:
        return base
    return found


def _variant_label(base: TransformerConfig, ratio: float) -> str:
    return f"{base.label or 'base'}-r{ratio:g}"


def enumerate_variants(
    base: TransformerConfig,
    ratio_grid: Sequence[float],
    size_tolerance: float,
    convention: CountingConvention = DEFAULT_CONVENTION,
    **search_kwargs,
) -> list[TransformerConfig]:
    """One variant per feasible target ratio; infeasible ratios are logged and skipped."""
    if not ratio_grid:
        raise ValueError("ratio_grid must be non-empty")
    variants = []
    for ratio in ratio_grid:
        found = search_variant(base, ratio, size_tolerance, convention, **search_kwargs)
        if found is None:
            logger.warning(
                "no variant of %s within %.1f%% of its size at aspect ratio %g",
                base.describe(), 100 * size_tolerance, ratio,
            )
            continue
        variants.append(found)
    return variants


def with_label(config: TransformerConfig, label: Optional[str]) -> TransformerConfig:
    return replace(config, label=label)
