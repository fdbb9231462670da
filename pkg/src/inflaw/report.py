"""CSV and Markdown rendering of fits, rankings, frontiers and reports."""

from __future__ import annotations

import csv
import io
from typing import Iterable, Optional, Sequence

from inflaw.arch import training_flops
from inflaw.data import RunSet, format_law
from inflaw.laws import FitReport
from inflaw.select import ParetoPoint, RankedCandidate

RANKING_COLUMNS = ("rank", "label", "d_model", "n_layers", "n_params", "predicted_loss", "predicted_latency_s")
PARETO_COLUMNS = ("label", "latency_s", "quality")
PREDICTION_COLUMNS = ("label", "d_model", "n_layers", "aspect_ratio", "n_params", "n_tokens", "predicted_loss")
POINT_COLUMNS = ("label", "tag", "n_params", "n_tokens", "aspect_ratio", "actual_loss", "predicted_loss",
                 "residual", "relative_error", "split")


def _g(x: float) -> str:
    return repr(float(x))


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def markdown_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(str(cell) for cell in row) + " |")
    return "\n".join(lines) + "\n"


def ranking_rows(ranked: Sequence[RankedCandidate], precise: bool = True) -> list[list]:
    fmt = _g if precise else (lambda x: f"{x:.4f}")
    return [
        [c.rank, c.label, c.config.d_model, c.config.n_layers, c.n_params, fmt(c.predicted_loss),
         fmt(c.predicted_latency_s)]
        for c in ranked
    ]


def ranking_csv(ranked: Sequence[RankedCandidate]) -> str:
    return _csv(RANKING_COLUMNS, ranking_rows(ranked))


def ranking_markdown(ranked: Sequence[RankedCandidate]) -> str:
    return markdown_table(RANKING_COLUMNS, ranking_rows(ranked, precise=False))


def pareto_csv(points: Sequence[ParetoPoint]) -> str:
    return _csv(PARETO_COLUMNS, [[p.label, _g(p.latency_s), _g(p.quality)] for p in points])


def pareto_markdown(points: Sequence[ParetoPoint]) -> str:
    return markdown_table(PARETO_COLUMNS, [[p.label, f"{p.latency_s:g}", f"{p.quality:g}"] for p in points])


def point_rows(report: FitReport, split: str) -> list[list]:
    rows = []
    for p in report.per_point:
        run = p.run
        ratio = _g(run.config.aspect_ratio) if run.config is not None else ""
        rows.append([run.label or "", run.tag or "", run.n_params, run.n_tokens, ratio, _g(run.loss),
                     _g(p.predicted), _g(p.residual), _g(p.relative_error), split])
    return rows


def points_csv(reports: Sequence[tuple[str, FitReport]]) -> str:
    """Predicted-vs-actual pairs, one row per run, tagged ``fit`` or ``test``."""
    rows = []
    for split, report in reports:
        rows.extend(point_rows(report, split))
    return _csv(POINT_COLUMNS, rows)


def _fmt_opt(x: Optional[float], spec: str = ".4f") -> str:
    return "n/a" if x is None else format(x, spec)


def metrics_markdown(reports: Sequence[tuple[str, FitReport]]) -> str:
    rows = [
        [split, len(r.per_point), f"{r.mse:.6g}", _fmt_opt(r.r_squared), _fmt_opt(r.spearman),
         f"{100 * r.max_relative_error:.3f}%"]
        for split, r in reports
    ]
    return markdown_table(("split", "runs", "MSE", "R^2", "Spearman", "max rel. error"), rows)


def total_flops(runs: Iterable) -> float:
    return sum(training_flops(r.n_params, r.n_tokens) for r in runs)


def render_report(
    law_record,
    reports: Sequence[tuple[str, FitReport]],
    *,
    all_runs: RunSet,
    fit_runs: RunSet,
    law_source: str,
    inputs: Sequence[tuple[str, str]],
) -> str:
    """Markdown summary embedding the law file, input digests, metrics and compute totals."""
    fit_flops = total_flops(fit_runs)
    full_flops = total_flops(all_runs)
    parts = [
        "# Scaling-law report\n",
        "## Inputs\n",
        markdown_table(("input", "digest"), inputs),
        "\n## Fitted law\n",
        f"Source: `{law_source}`\n",
        "```\n" + format_law(law_record) + "```\n",
        "\n## Fit quality\n",
        metrics_markdown(reports),
        "\n## Training compute (6ND)\n",
        markdown_table(
            ("set", "runs", "FLOPs"),
            [["fit subset", len(fit_runs), f"{fit_flops:.6g}"],
             ["all runs", len(all_runs), f"{full_flops:.6g}"]],
        ),
        f"\nFit subset uses {100 * fit_flops / full_flops:.1f}% of the full sweep's training compute.\n",
        "\nPlot-ready predicted-vs-actual pairs are in the accompanying `points.csv`.\n",
    ]
    return "".join(parts)
