"""Published reference data: architectures, released-model results and fitted coefficients."""

from __future__ import annotations

from typing import NamedTuple

from inflaw.arch import TransformerConfig
from inflaw.laws import FittedLawRecord, LawCoefficients, LawKind


def _cfg(size: str, variant: str, d: int, f: int, layers: int, heads: int) -> TransformerConfig:
    label = size if variant == "/" else f"{size}-{variant}"
    return TransformerConfig(d, f, layers, heads, label=label)


#: Every architecture of the training sweep, including the three 1B-scale models.
ARCHITECTURES: tuple[TransformerConfig, ...] = (
    _cfg("80M", "v1", 512, 1536, 8, 8),
    _cfg("80M", "v2", 576, 1536, 5, 8),
    _cfg("80M", "v3", 640, 1792, 3, 8),
    _cfg("80M", "v4", 448, 1280, 13, 8),
    _cfg("80M", "v5", 384, 1024, 22, 8),
    _cfg("86M", "v1", 576, 1536, 7, 8),
    _cfg("86M", "v2", 640, 1792, 4, 8),
    _cfg("116M", "v1", 640, 1792, 10, 10),
    _cfg("116M", "v2", 720, 2048, 6, 10),
    _cfg("116M", "v3", 800, 2304, 4, 10),
    _cfg("116M", "v4", 880, 2560, 3, 10),
    _cfg("116M", "v5", 560, 1536, 15, 10),
    _cfg("116M", "v6", 480, 1280, 24, 10),
    _cfg("126M", "v1", 720, 2048, 8, 10),
    _cfg("126M", "v2", 800, 2304, 5, 10),
    _cfg("164M", "v1", 768, 2048, 12, 12),
    _cfg("164M", "v2", 864, 2304, 8, 12),
    _cfg("164M", "v3", 960, 2560, 6, 12),
    _cfg("164M", "v4", 1056, 2816, 4, 12),
    _cfg("164M", "v5", 1152, 3072, 3, 12),
    _cfg("178M", "v1", 864, 2304, 10, 12),
    _cfg("178M", "v2", 960, 2560, 7, 12),
    _cfg("237M", "v1", 896, 2560, 14, 14),
    _cfg("237M", "v2", 1008, 2816, 10, 14),
    _cfg("237M", "v3", 1120, 3072, 8, 14),
    _cfg("237M", "v4", 1232, 3328, 6, 14),
    _cfg("313M", "v1", 1024, 2816, 16, 16),
    _cfg("313M", "v2", 1152, 3072, 12, 16),
    _cfg("313M", "v3", 1280, 3584, 9, 16),
    _cfg("313M", "v4", 1408, 3840, 7, 16),
    _cfg("339M", "v1", 1152, 3072, 14, 16),
    _cfg("Morph-1B", "v1", 2048, 5632, 24, 16),
    _cfg("Morph-1B", "v2", 2560, 6912, 16, 16),
    _cfg("Morph-1B", "/", 3072, 8192, 12, 16),
)

ARCHITECTURES_BY_LABEL = {c.label: c for c in ARCHITECTURES}

MORPH_1B_V1 = ARCHITECTURES_BY_LABEL["Morph-1B-v1"]
MORPH_1B_V2 = ARCHITECTURES_BY_LABEL["Morph-1B-v2"]
MORPH_1B = ARCHITECTURES_BY_LABEL["Morph-1B"]
MORPH_VARIANTS = (MORPH_1B_V1, MORPH_1B_V2, MORPH_1B)

#: Tokens used to train the 1B-scale models.
MORPH_TRAINING_TOKENS = 30_000_000_000


def size_label_params(label: str) -> float | None:
    """``"80M"`` -> 80e6; model names such as ``"Morph-1B"`` are not size labels."""
    size = label.split("-")[0]
    units = {"M": 1e6, "B": 1e9}
    if size and size[-1] in units:
        try:
            return float(size[:-1]) * units[size[-1]]
        except ValueError:
            return None
    return None


class ReleasedModel(NamedTuple):
    name: str
    d_model: int
    n_layers: int
    avg_accuracy: float
    latency_s: float


#: Downstream average accuracy and end-to-end latency (batch 1, 128 in / 256 out, A100).
RELEASED_MODELS: tuple[ReleasedModel, ...] = (
    ReleasedModel("Open-LM-1B", 2048, 24, 0.49, 3.61),
    ReleasedModel("OPT-1.3B", 2048, 24, 0.50, 2.55),
    ReleasedModel("Pythia-1.3B", 2048, 22, 0.49, 3.28),
    ReleasedModel("Neox-1.3B", 2048, 24, 0.49, 3.99),
    ReleasedModel("OPT-IML-1.3B", 2048, 24, 0.54, 2.54),
    ReleasedModel("Morph-1B-v1", 2048, 24, 0.52, 3.61),
    ReleasedModel("Morph-1B-v2", 2560, 16, 0.52, 2.57),
    ReleasedModel("Morph-1B", 3072, 12, 0.52, 1.96),
)

#: Measured latency of the three 1B-scale architectures.
MORPH_LATENCY_S = {
    MORPH_1B_V1: 3.61,
    MORPH_1B_V2: 2.57,
    MORPH_1B: 1.96,
}


def _law(kind: LawKind, E: float, A: float, B: float, alpha: float, eps: float = 0.0) -> FittedLawRecord:
    if kind is LawKind.CHINCHILLA:
        c = LawCoefficients.tied_chinchilla(E, A, B, alpha)
    else:
        c = LawCoefficients.tied_inference_efficient(E, A, B, alpha, eps)
    return FittedLawRecord(kind, c)


CH, IE = LawKind.CHINCHILLA, LawKind.INFERENCE_EFFICIENT

#: Coefficients fitted on the full protocol (20N sweep + one 160N run).
FULL_FIT = {
    CH: _law(CH, 2.13, 7720.62, 68572.73, 0.49),
    IE: _law(IE, 2.45, 54754.14, 778340.38, 0.61, 0.0011),
}
#: Coefficients fitted without over-training data.
NO_OVERTRAINING_FIT = {
    CH: _law(CH, 2.14, -25287.67, 248461.43, 0.51),
    IE: _law(IE, 2.41, -16247.15, 958437.97, 0.60, 0.0011),
}
#: Coefficients fitted on one randomly drawn variant per size.
RANDOM_SHAPE_FIT = {
    CH: _law(CH, 1.09, 793.45, 4090.85, 0.35),
    IE: _law(IE, 2.34, 32515.16, 408925.99, 0.58, 0.0016),
}

PUBLISHED_FITS = {
    "full": FULL_FIT,
    "no-overtraining": NO_OVERTRAINING_FIT,
    "random-shape": RANDOM_SHAPE_FIT,
}

#: (N, D) pairs of the fitting protocol; the last row is the over-trained point.
FIT_PROTOCOL = (
    (80e6, 1.6e9, "20N"),
    (116e6, 2.3e9, "20N"),
    (164e6, 3.2e9, "20N"),
    (237e6, 4.7e9, "20N"),
    (313e6, 6.2e9, "20N"),
    (80e6, 12.8e9, "160N"),
)
