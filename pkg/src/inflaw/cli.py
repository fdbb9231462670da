"""Command-line interface: ingest -> fit -> evaluate -> select -> report.

Exit status is 0 on success, 1 on invalid input or flags, 2 on numerical
failure. Output paths default to ``$INFLAW_OUTPUT_DIR`` (or the working
directory) when not given.
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from inflaw import report as rpt
from inflaw.arch import (
    CountingConvention,
    TransformerConfig,
    Workload,
    count_params,
    search_variant,
)
from inflaw.data import (
    DataError,
    atomic_write_text,
    content_digest,
    ingest_latency,
    ingest_runs,
    load_law,
    one_variant_per_group,
    read_configs,
    read_table,
    save_law,
    split_runs,
    write_configs_csv,
)
from inflaw.laws import LawKind, evaluate, fit_law, fit_report
from inflaw.select import (
    Constraints,
    MeasuredLatencyTable,
    ParetoPoint,
    SortKey,
    fit_latency_model,
    pareto_frontier,
    rank_candidates,
)
from inflaw.selectors import parse_selector
from inflaw.tables import ARCHITECTURES_BY_LABEL

logger = logging.getLogger("inflaw")

OUTPUT_DIR_ENV = "INFLAW_OUTPUT_DIR"

SELECTOR_HELP = """\
split selector grammar:
  expr   := term ("or" term)*        term := factor ("and" factor)*
  factor := "not" factor | "(" expr ")" | "true" | "false"
          | FIELD ("==" | "!=") VALUE | FIELD "in" "{" VALUE, ... "}"
  FIELD  := tag | size | variant | label
  e.g.  "tag in {20N} or (size==80M and tag==160N)"
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _output_path(value: Optional[str], default_name: str) -> Path:
    if value:
        return Path(value)
    return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / default_name


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        atomic_write_text(path, text)
    else:
        sys.stdout.write(text)


def _convention(args) -> CountingConvention:
    return CountingConvention(
        tie_embeddings=args.tie_embeddings,
        norm_params_per_layer=args.norm_params_per_layer,
        include_final_norm=not args.no_final_norm,
    )


def _workload(args) -> Workload:
    return Workload(args.batch_size, args.input_tokens, args.output_tokens, args.device)


def _split(args, runs):
    selector = parse_selector(args.split)
    if args.one_variant_per_size:
        sampler = one_variant_per_group([r for r in runs if selector(r)], args.seed)

        def combined(run) -> bool:
            return selector(run) and sampler(run)

        combined.description = f"({selector.description}) and {sampler.description}"
        combined.seed = args.seed
        return split_runs(runs, combined)
    return split_runs(runs, selector)


def _reports(record, fit, test):
    reports = [("fit", fit_report(record, fit))]
    if len(test):
        reports.append(("test", fit_report(record, test)))
    return reports


# -- subcommands ---------------------------------------------------------------------


def cmd_fit(args) -> int:
    runs = ingest_runs(args.runs, _convention(args))
    fit, test = _split(args, runs)
    seed = args.seed if args.one_variant_per_size else None
    record = fit_law(args.law, fit, tie_exponents=not args.untied, data_digest=fit.provenance.digest, seed=seed)
    out = _output_path(args.out, "law.txt")
    save_law(record, out)
    reports = _reports(record, fit, test)
    text = (
        f"# Fit report: {record.kind.value}\n\n"
        f"Fitted on {len(fit)} of {len(runs)} runs; law written to `{out}`.\n\n"
        + rpt.metrics_markdown(reports)
    )
    _emit(text, args.report)
    if args.points:
        atomic_write_text(args.points, rpt.points_csv(reports))
    return 0


def cmd_evaluate(args) -> int:
    record = load_law(args.law)
    runs = ingest_runs(args.runs, _convention(args))
    report = fit_report(record, runs)
    _emit(rpt.metrics_markdown([("test", report)]), None)
    if args.out:
        atomic_write_text(args.out, rpt.points_csv([("test", report)]))
    return 0


def cmd_predict(args) -> int:
    record = load_law(args.law)
    configs = read_configs(args.configs)
    convention = _convention(args)
    rows = []
    for c in configs:
        n = count_params(c, convention)
        loss = evaluate(record.kind, record.coefficients, n, args.tokens, c.aspect_ratio)
        rows.append([c.label or "", c.d_model, c.n_layers, rpt._g(c.aspect_ratio), n, args.tokens, rpt._g(loss)])
    _emit(rpt._csv(rpt.PREDICTION_COLUMNS, rows), args.out)
    return 0


def cmd_select(args) -> int:
    record = load_law(args.law)
    configs = read_configs(args.configs)
    workload = _workload(args)
    records = [r for r in ingest_latency(args.latency) if r.workload == workload]
    if not records:
        raise DataError(f"no latency records match workload {workload}", args.latency)
    if args.latency_mode == "table":
        provider = MeasuredLatencyTable.from_records(records)
    else:
        knees = [int(k) for k in args.knees.split(",")] if args.knees else None
        provider = fit_latency_model(records, knees)
        logger.info("latency model: %s", provider)
    bounds = (args.max_params, args.max_tokens, args.max_latency)
    constraints = None
    if any(b is not None for b in bounds):
        constraints = Constraints(args.max_params, args.max_tokens, args.max_latency, workload)
    ranked = rank_candidates(configs, args.tokens, record, provider, constraints, args.k, args.sort_key,
                             _convention(args))
    out = _output_path(args.out, "ranking.csv")
    atomic_write_text(out, rpt.ranking_csv(ranked))
    _emit(rpt.ranking_markdown(ranked), args.markdown)
    return 0


def _read_points(path: str) -> list[ParetoPoint]:
    points = []
    for i, row in enumerate(read_table(path, rpt.PARETO_COLUMNS), 1):
        try:
            points.append(ParetoPoint(row["label"].strip(), float(row["latency_s"]), float(row["quality"])))
        except ValueError as exc:
            raise DataError(f"record {i}: {exc}", path) from None
    return points


def cmd_pareto(args) -> int:
    frontier = pareto_frontier(_read_points(args.points))
    out = _output_path(args.out, "pareto.csv")
    atomic_write_text(out, rpt.pareto_csv(frontier))
    _emit(rpt.pareto_markdown(frontier), args.markdown)
    return 0


def _parse_base(text: str) -> TransformerConfig:
    if text in ARCHITECTURES_BY_LABEL:
        return ARCHITECTURES_BY_LABEL[text]
    try:
        d, f, layers, heads = (int(x) for x in text.split(","))
    except ValueError:
        raise ValueError(
            f"--base must be a known architecture label or d_model,f_size,n_layers,n_heads; got {text!r}"
        ) from None
    return TransformerConfig(d, f, layers, heads, label="base")


def cmd_variants(args) -> int:
    base = _parse_base(args.base)
    convention = _convention(args)
    ratios = [float(x) for x in args.ratios.split(",") if x.strip()]
    if not ratios:
        raise ValueError("--ratios is empty")
    found, omitted = [], []
    for ratio in ratios:
        v = search_variant(base, ratio, args.tolerance, convention,
                           head_dim_multiple=args.head_dim_multiple, f_size_rule=args.f_size_rule)
        (found.append(v) if v is not None else omitted.append(ratio))
    for ratio in omitted:
        print(f"omitted ratio {ratio:g}: no variant within {100 * args.tolerance:g}% of the base size",
              file=sys.stderr)
    if not found:
        raise ValueError("no aspect ratio in the grid admits a feasible variant")
    buf = io.StringIO()
    write_configs_csv(found, buf)
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_report(args) -> int:
    record = load_law(args.law)
    runs = ingest_runs(args.runs, _convention(args))
    fit, test = _split(args, runs)
    reports = _reports(record, fit, test)
    out_dir = Path(args.out_dir) if args.out_dir else Path(os.environ.get(OUTPUT_DIR_ENV, "."))
    law_text = Path(args.law).read_text(encoding="utf-8")
    inputs = [(str(args.law), content_digest(law_text.encode())), (str(args.runs), runs.provenance.digest)]
    text = rpt.render_report(record, reports, all_runs=runs, fit_runs=fit, law_source=str(args.law),
                             inputs=inputs)
    atomic_write_text(out_dir / "report.md", text)
    atomic_write_text(out_dir / "points.csv", rpt.points_csv(reports))
    sys.stdout.write(text)
    return 0


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    counting = common.add_argument_group("parameter counting")
    counting.add_argument("--tie-embeddings", action="store_true", help="share input and output embeddings")
    counting.add_argument("--norm-params-per-layer", type=int, default=2, metavar="K",
                          help="per-layer normalization parameters as a multiple of d_model (default 2)")
    counting.add_argument("--no-final-norm", action="store_true", help="omit the final normalization")

    split = argparse.ArgumentParser(add_help=False)
    split.add_argument("--split", default="true", metavar="EXPR", help="runs to fit on (default: all)")
    split.add_argument("--one-variant-per-size", action="store_true",
                       help="then keep one random variant per (size, tag) group")
    split.add_argument("--seed", type=int, default=0, help="seed for --one-variant-per-size (default 0)")

    workload = argparse.ArgumentParser(add_help=False)
    workload.add_argument("--batch-size", type=int, default=1)
    workload.add_argument("--input-tokens", type=int, default=128)
    workload.add_argument("--output-tokens", type=int, default=256)
    workload.add_argument("--device", default="a100-40gb")

    parser = _Parser(prog="inflaw", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("fit", parents=[common, split], help="fit a scaling law", epilog=SELECTOR_HELP,
                       formatter_class=fmt)
    p.add_argument("--law", required=True, choices=[k.value for k in LawKind])
    p.add_argument("--runs", required=True)
    p.add_argument("--untied", action="store_true", help="fit separate exponents instead of one shared exponent")
    p.add_argument("--out", help="fitted-law file (default law.txt)")
    p.add_argument("--report", help="write the fit report here instead of stdout")
    p.add_argument("--points", help="also write predicted-vs-actual pairs as CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", parents=[common], help="score a saved law on a run file")
    p.add_argument("--law", required=True)
    p.add_argument("--runs", required=True)
    p.add_argument("--out", help="per-run predictions CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="predict loss for architectures")
    p.add_argument("--law", required=True)
    p.add_argument("--configs", required=True, help="CSV: " + ",".join(("label", "d_model", "f_size",
                                                                       "n_layers", "n_heads", "vocab_size")))
    p.add_argument("--tokens", required=True, type=lambda s: int(float(s)), help="training tokens D")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("select", parents=[common, workload], help="rank candidates under constraints")
    p.add_argument("--law", required=True)
    p.add_argument("--configs", required=True)
    p.add_argument("--tokens", required=True, type=lambda s: int(float(s)))
    p.add_argument("--latency", required=True, help="latency measurement CSV")
    p.add_argument("--latency-mode", choices=("table", "model"), default="table",
                   help="exact lookup of measurements, or a fitted latency model")
    p.add_argument("--knees", help="comma-separated width-knee grid for --latency-mode model")
    p.add_argument("--max-params", type=lambda s: int(float(s)))
    p.add_argument("--max-tokens", type=lambda s: int(float(s)))
    p.add_argument("--max-latency", type=float, help="seconds")
    p.add_argument("-k", type=int, default=1)
    p.add_argument("--sort-key", choices=[k.value for k in SortKey], default=SortKey.LOSS_THEN_LATENCY.value)
    p.add_argument("--out", help="ranking CSV (default ranking.csv)")
    p.add_argument("--markdown", help="write the Markdown table here instead of stdout")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("pareto", parents=[common], help="latency/quality Pareto frontier")
    p.add_argument("--points", required=True, help="CSV: label,latency_s,quality")
    p.add_argument("--out", help="frontier CSV (default pareto.csv)")
    p.add_argument("--markdown")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("variants", parents=[common], help="same-size variants at new aspect ratios")
    p.add_argument("--base", required=True, help="architecture label (e.g. Morph-1B-v1) or d,f,L,heads")
    p.add_argument("--ratios", required=True, help="comma-separated aspect ratios")
    p.add_argument("--tolerance", type=float, default=0.2, help="allowed relative size change (default 0.2)")
    p.add_argument("--head-dim-multiple", type=int, default=32)
    p.add_argument("--f-size-rule", choices=("swiglu", "preserve_ratio"), default="swiglu")
    p.add_argument("--out")
    p.set_defaults(func=cmd_variants)

    p = sub.add_parser("report", parents=[common, split], help="Markdown report with plot-ready CSVs",
                       epilog=SELECTOR_HELP, formatter_class=fmt)
    p.add_argument("--law", required=True)
    p.add_argument("--runs", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ArithmeticError as exc:
        print(f"inflaw {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"inflaw {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
