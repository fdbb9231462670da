"""Ingestion, validation, splitting and persistence.

File formats (UTF-8, ``.`` decimal separator, scientific notation allowed):

* run file: ``label,d_model,f_size,n_layers,n_heads,vocab_size,n_params,n_tokens,loss,tag``
  -- architecture columns may be left blank together when unknown.
* latency file: ``label,d_model,f_size,n_layers,n_heads,batch_size,input_tokens,
  output_tokens,metric_kind,value,device_tag``
* fitted-law file: ``key = value`` lines, see :func:`save_law`.

Units: N in raw parameters, D in raw tokens, loss in nats.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from inflaw.arch import (
    DEFAULT_CONVENTION,
    DEFAULT_VOCAB_SIZE,
    CountingConvention,
    TransformerConfig,
    Workload,
    count_params,
)
from inflaw.laws import FitDiagnostics, FittedLawRecord, LawCoefficients, LawKind

logger = logging.getLogger(__name__)

RUN_COLUMNS = ("label", "d_model", "f_size", "n_layers", "n_heads", "vocab_size",
               "n_params", "n_tokens", "loss", "tag")
LATENCY_COLUMNS = ("label", "d_model", "f_size", "n_layers", "n_heads", "batch_size",
                   "input_tokens", "output_tokens", "metric_kind", "value", "device_tag")
CONFIG_COLUMNS = ("label", "d_model", "f_size", "n_layers", "n_heads", "vocab_size")
METRIC_KINDS = ("end_to_end", "ttft", "throughput_tokens_per_s")

LAW_SCHEMA_VERSION = 1
LAW_FIELDS = ("schema_version", "kind", "E", "A", "B", "alpha", "beta", "gamma", "epsilon",
              "tied", "sse", "iterations", "start_index", "converged", "reason",
              "data_digest", "seed")

_SIZE_RE = re.compile(r"^(?P<size>[^-]+)(?:-(?P<variant>v\d+))?")


class DataError(ValueError):
    """Malformed or invalid input; ``line`` is the 1-based file line when known."""

    def __init__(self, message: str, path: "str | Path | None" = None, line: Optional[int] = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class TrainingRun:
    config: Optional[TransformerConfig]
    n_params: int
    n_tokens: int
    loss: float
    tag: Optional[str] = None
    label: Optional[str] = None

    def __post_init__(self) -> None:
        if self.n_params < 1:
            raise ValueError("n_params must be positive")
        if self.n_tokens < 1:
            raise ValueError("n_tokens must be positive")
        if not (math.isfinite(self.loss) and self.loss > 0):
            raise ValueError(f"loss must be positive and finite, got {self.loss!r}")
        if self.label is None and self.config is not None and self.config.label:
            object.__setattr__(self, "label", self.config.label)

    @property
    def size_label(self) -> Optional[str]:
        """``80M`` for a run labelled ``80M-v1``."""
        if not self.label:
            return None
        return _SIZE_RE.match(self.label).group("size")

    @property
    def variant(self) -> Optional[str]:
        if not self.label:
            return None
        return _SIZE_RE.match(self.label).group("variant")

    @property
    def identity(self) -> tuple:
        arch = self.config.shape if self.config is not None else ("n_params", self.n_params)
        return (arch, self.n_tokens)


@dataclass(frozen=True)
class Provenance:
    source: str
    digest: str
    seed: Optional[int] = None
    selection: Optional[str] = None


@dataclass(frozen=True)
class RunSet:
    runs: tuple[TrainingRun, ...]
    provenance: Provenance = Provenance("<memory>", "")

    def __post_init__(self) -> None:
        object.__setattr__(self, "runs", tuple(self.runs))
        seen: dict[tuple, int] = {}
        for i, run in enumerate(self.runs):
            key = run.identity
            if key in seen:
                raise DataError(
                    f"duplicate run {run.label or i} (same architecture and n_tokens as "
                    f"{self.runs[seen[key]].label or seen[key]})"
                )
            seen[key] = i
        if not self.provenance.digest:
            object.__setattr__(self, "provenance", Provenance(
                self.provenance.source, runs_digest(self.runs), self.provenance.seed,
                self.provenance.selection))

    def __len__(self) -> int:
        return len(self.runs)

    def __iter__(self) -> Iterator[TrainingRun]:
        return iter(self.runs)

    def __getitem__(self, index: int) -> TrainingRun:
        return self.runs[index]


@dataclass(frozen=True)
class LatencyRecord:
    config: TransformerConfig
    workload: Workload
    latency_s: float
    metric_kind: str = "end_to_end"

    def __post_init__(self) -> None:
        if self.metric_kind not in METRIC_KINDS:
            raise ValueError(f"metric_kind must be one of {METRIC_KINDS}, got {self.metric_kind!r}")
        if not (math.isfinite(self.latency_s) and self.latency_s > 0):
            raise ValueError(f"latency value must be positive and finite, got {self.latency_s!r}")


# -- digests -----------------------------------------------------------------------


def canonical_bytes(raw: bytes) -> bytes:
    """Strip a UTF-8 BOM and normalize line endings."""
    if raw.startswith(b"\xef\xbb\xbf"):
        raw = raw[3:]
    return raw.replace(b"\r\n", b"\n").replace(b"\r", b"\n")


def content_digest(raw: bytes) -> str:
    return "sha256:" + hashlib.sha256(canonical_bytes(raw)).hexdigest()


def runs_digest(runs: Iterable[TrainingRun]) -> str:
    buf = io.StringIO()
    write_runs_csv(runs, buf)
    return content_digest(buf.getvalue().encode("utf-8"))


# -- scalar parsing ----------------------------------------------------------------


def _parse_int(text: str, name: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{name}: {text!r} is not a number") from None
    if not math.isfinite(value) or not value.is_integer():
        raise ValueError(f"{name}: {text!r} is not an integer")
    return int(value)


def _parse_float(text: str, name: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise ValueError(f"{name}: {text!r} is not a number") from None


def _read_rows(path: "str | Path", columns: Sequence[str]) -> tuple[list[tuple[int, dict]], bytes]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DataError("file not found", path) from None
    text = canonical_bytes(raw).decode("utf-8")
    if not text.strip():
        raise DataError("file is empty", path)
    reader = csv.reader(io.StringIO(text))
    header = None
    rows = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row) or row[0].lstrip().startswith("#"):
            continue
        if header is None:
            header = [cell.strip() for cell in row]
            if tuple(header) != tuple(columns):
                raise DataError(f"expected header {','.join(columns)}, got {','.join(header)}", path, line)
            continue
        if len(row) != len(columns):
            raise DataError(f"expected {len(columns)} fields, got {len(row)}", path, line)
        rows.append((line, dict(zip(columns, row))))
    if header is None:
        raise DataError("file is empty", path)
    if not rows:
        raise DataError("file has a header but no records", path)
    return rows, raw


def _config_from_row(row: dict, vocab_default: int = DEFAULT_VOCAB_SIZE) -> Optional[TransformerConfig]:
    arch_fields = ("d_model", "f_size", "n_layers", "n_heads")
    present = [bool(row[f].strip()) for f in arch_fields]
    if not any(present):
        return None
    if not all(present):
        missing = [f for f, p in zip(arch_fields, present) if not p]
        raise ValueError(f"partial architecture: missing {', '.join(missing)}")
    vocab_text = row.get("vocab_size", "").strip()
    vocab = _parse_int(vocab_text, "vocab_size") if vocab_text else vocab_default
    label = row.get("label", "").strip() or None
    return TransformerConfig(
        *(_parse_int(row[f], f) for f in arch_fields), vocab_size=vocab, label=label
    )


# -- training runs ------------------------------------------------------------------


def parse_run_row(row: dict, convention: CountingConvention = DEFAULT_CONVENTION) -> TrainingRun:
    config = _config_from_row(row)
    n_params = _parse_int(row["n_params"], "n_params")
    n_tokens = _parse_int(row["n_tokens"], "n_tokens")
    loss = _parse_float(row["loss"], "loss")
    if not math.isfinite(loss) or loss <= 0:
        raise ValueError(f"loss must be positive, got {row['loss'].strip()}")
    if n_params < 1:
        raise ValueError("n_params must be positive")
    if n_tokens < 1:
        raise ValueError("n_tokens must be positive")
    label = row["label"].strip() or None
    tag = row["tag"].strip() or None
    if config is not None:
        counted = count_params(config, convention)
        if abs(counted - n_params) > 0.05 * n_params:
            logger.warning(
                "run %s: n_params=%d differs from the counted %d by more than 5%%; keeping the file value",
                label, n_params, counted,
            )
    return TrainingRun(config, n_params, n_tokens, loss, tag, label)


def ingest_runs(path: "str | Path", convention: CountingConvention = DEFAULT_CONVENTION) -> RunSet:
    """Read and validate a run file; the first bad record raises :class:`DataError`."""
    rows, raw = _read_rows(path, RUN_COLUMNS)
    runs: list[TrainingRun] = []
    first_line: dict[tuple, tuple[int, Optional[str]]] = {}
    for line, row in rows:
        try:
            run = parse_run_row(row, convention)
        except (ValueError, TypeError) as exc:
            raise DataError(str(exc), path, line) from None
        key = run.identity
        if key in first_line:
            prev_line, prev_label = first_line[key]
            raise DataError(
                f"duplicate run {run.label!r}: same architecture and n_tokens as {prev_label!r} on line {prev_line}",
                path, line,
            )
        first_line[key] = (line, run.label)
        runs.append(run)
    return RunSet(tuple(runs), Provenance(str(path), content_digest(raw)))


def _fmt_float(value: float) -> str:
    """Shortest text that reads back to the same float."""
    return repr(float(value))


def _fmt_law_float(value: float) -> str:
    return format(float(value), ".17g")


def write_runs_csv(runs: Iterable[TrainingRun], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(RUN_COLUMNS)
    for run in runs:
        c = run.config
        arch = ["", "", "", "", ""] if c is None else [c.d_model, c.f_size, c.n_layers, c.n_heads, c.vocab_size]
        writer.writerow([run.label or "", *arch, run.n_params, run.n_tokens, _fmt_float(run.loss), run.tag or ""])


def save_runs(runs: Iterable[TrainingRun], path: "str | Path") -> None:
    buf = io.StringIO()
    write_runs_csv(runs, buf)
    atomic_write_text(path, buf.getvalue())


# -- splitting ----------------------------------------------------------------------


RunPredicate = Callable[[TrainingRun], bool]


def split_runs(runs: RunSet, selector: RunPredicate) -> tuple[RunSet, RunSet]:
    """Partition ``runs`` into (selected, rest), preserving order."""
    if not len(runs):
        raise ValueError("cannot split an empty run set")
    fit, test = [], []
    for run in runs:
        (fit if selector(run) else test).append(run)
    if not fit:
        raise ValueError("selector matched no runs; the fit partition is empty")
    name = getattr(selector, "description", None)
    seed = getattr(selector, "seed", None)
    prov = runs.provenance
    return (
        RunSet(tuple(fit), Provenance(prov.source, "", seed, name)),
        RunSet(tuple(test), Provenance(prov.source, "", seed, f"not ({name})" if name else None)),
    )


def default_group_key(run: TrainingRun) -> tuple:
    return (run.size_label, run.tag)


def one_variant_per_group(
    runs: Iterable[TrainingRun],
    seed: int,
    group_key: Callable[[TrainingRun], tuple] = default_group_key,
) -> RunPredicate:
    """Selector keeping one randomly drawn run per group (default: size label and tag).

    Draws use a Philox counter-based generator seeded with ``seed``; groups
    are visited in first-appearance order so the choice is replayable.
    """
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    run_list = list(runs)
    groups: dict[tuple, list[int]] = {}
    for i, run in enumerate(run_list):
        groups.setdefault(group_key(run), []).append(i)
    rng = np.random.Generator(np.random.Philox(seed))
    keys = {run_list[members[int(rng.integers(len(members)))]].identity for members in groups.values()}

    def selector(run: TrainingRun) -> bool:
        return run.identity in keys

    selector.description = f"one variant per group, seed={seed}"
    selector.seed = seed
    return selector


# -- latency ------------------------------------------------------------------------


def ingest_latency(path: "str | Path", vocab_size: int = DEFAULT_VOCAB_SIZE) -> list[LatencyRecord]:
    rows, _ = _read_rows(path, LATENCY_COLUMNS)
    records = []
    for line, row in rows:
        try:
            config = _config_from_row(row, vocab_size)
            if config is None:
                raise ValueError("latency records need an architecture")
            workload = Workload(
                _parse_int(row["batch_size"], "batch_size"),
                _parse_int(row["input_tokens"], "input_tokens"),
                _parse_int(row["output_tokens"], "output_tokens"),
                row["device_tag"].strip(),
            )
            kind = row["metric_kind"].strip()
            value = _parse_float(row["value"], "value")
            records.append(LatencyRecord(config, workload, value, kind))
        except (ValueError, TypeError) as exc:
            raise DataError(str(exc), path, line) from None
    return records


def write_latency_csv(records: Iterable[LatencyRecord], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(LATENCY_COLUMNS)
    for rec in records:
        c, w = rec.config, rec.workload
        writer.writerow([c.label or "", c.d_model, c.f_size, c.n_layers, c.n_heads, w.batch_size,
                         w.input_tokens, w.output_tokens, rec.metric_kind, _fmt_float(rec.latency_s),
                         w.device_tag])


# -- configs ------------------------------------------------------------------------


def read_configs(path: "str | Path") -> list[TransformerConfig]:
    rows, _ = _read_rows(path, CONFIG_COLUMNS)
    configs = []
    for line, row in rows:
        try:
            config = _config_from_row(row)
            if config is None:
                raise ValueError("architecture columns are required")
        except (ValueError, TypeError) as exc:
            raise DataError(str(exc), path, line) from None
        configs.append(config)
    return configs


def write_configs_csv(configs: Iterable[TransformerConfig], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CONFIG_COLUMNS)
    for c in configs:
        writer.writerow([c.label or "", c.d_model, c.f_size, c.n_layers, c.n_heads, c.vocab_size])


# -- fitted laws --------------------------------------------------------------------


def format_law(record: FittedLawRecord) -> str:
    """Serialize a fitted law as ``key = value`` lines; floats to 17 significant digits."""
    c, diag = record.coefficients, record.diagnostics
    values = {
        "schema_version": str(LAW_SCHEMA_VERSION),
        "kind": record.kind.value,
        "E": _fmt_law_float(c.E),
        "A": _fmt_law_float(c.A),
        "B": _fmt_law_float(c.B),
        "alpha": _fmt_law_float(c.alpha),
        "beta": _fmt_law_float(c.beta),
        "gamma": _fmt_law_float(c.gamma),
        "epsilon": _fmt_law_float(c.epsilon),
        "tied": "true" if c.tied else "false",
        "sse": _fmt_law_float(diag.sse),
        "iterations": str(diag.iterations),
        "start_index": str(diag.start_index),
        "converged": "true" if diag.converged else "false",
        "reason": diag.reason.replace("\n", " "),
        "data_digest": record.data_digest,
        "seed": "none" if record.seed is None else str(record.seed),
    }
    lines = ["# fitted scaling law; units: N parameters, D tokens, loss nats"]
    lines += [f"{key} = {values[key]}" for key in LAW_FIELDS]
    return "\n".join(lines) + "\n"


def _parse_bool(text: str, key: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"{key} must be true or false, got {text!r}")


def parse_law(text: str, source: str = "<string>") -> FittedLawRecord:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise DataError(f"expected 'key = value', got {stripped!r}", source, lineno)
        key = key.strip()
        if key in values:
            raise DataError(f"duplicate key {key!r}", source, lineno)
        values[key] = value.strip()
    missing = [k for k in LAW_FIELDS if k not in values]
    if "schema_version" in values and values["schema_version"] != str(LAW_SCHEMA_VERSION):
        raise DataError(
            f"schema version mismatch: file has {values['schema_version']}, reader supports {LAW_SCHEMA_VERSION}",
            source,
        )
    if missing:
        raise DataError(f"missing fields: {', '.join(missing)}", source)
    unknown = sorted(set(values) - set(LAW_FIELDS))
    if unknown:
        raise DataError(f"unknown fields: {', '.join(unknown)}", source)
    try:
        kind = LawKind.parse(values["kind"])
        f = {k: _parse_float(values[k], k) for k in ("E", "A", "B", "alpha", "beta", "gamma", "epsilon", "sse")}
        coefficients = LawCoefficients(
            f["E"], f["A"], f["B"], f["alpha"], f["beta"], f["gamma"], f["epsilon"],
            tied=_parse_bool(values["tied"], "tied"),
        )
        diagnostics = FitDiagnostics(
            sse=f["sse"],
            iterations=_parse_int(values["iterations"], "iterations"),
            start_index=_parse_int(values["start_index"], "start_index"),
            converged=_parse_bool(values["converged"], "converged"),
            reason=values["reason"],
        )
        seed = None if values["seed"] == "none" else _parse_int(values["seed"], "seed")
        return FittedLawRecord(kind, coefficients, diagnostics, values["data_digest"], seed)
    except ValueError as exc:
        raise DataError(str(exc), source) from None


def save_law(record: FittedLawRecord, path: "str | Path") -> None:
    atomic_write_text(path, format_law(record))


def load_law(path: "str | Path") -> FittedLawRecord:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError("file not found", path) from None
    return parse_law(text, str(path))


# -- output files -------------------------------------------------------------------


def atomic_write_text(path: "str | Path", text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def read_table(path: "str | Path", columns: Sequence[str]) -> list[dict]:
    """Rows of a CSV emitted by this package, validated against ``columns``."""
    rows, _ = _read_rows(path, columns)
    return [row for _, row in rows]
