import logging
import math
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inflaw.arch import DEFAULT_WORKLOAD
from inflaw.data import (
    DataError,
    LatencyRecord,
    RunSet,
    TrainingRun,
    canonical_bytes,
    content_digest,
    format_law,
    ingest_latency,
    ingest_runs,
    load_law,
    one_variant_per_group,
    parse_law,
    read_configs,
    save_law,
    save_runs,
    split_runs,
    write_configs_csv,
    write_latency_csv,
)
from inflaw.laws import FitDiagnostics, FittedLawRecord, LawCoefficients, LawKind
from inflaw.selectors import parse_selector
from inflaw.tables import ARCHITECTURES, CH, FULL_FIT, MORPH_1B, MORPH_VARIANTS

HEADER = "label,d_model,f_size,n_layers,n_heads,vocab_size,n_params,n_tokens,loss,tag\n"
ROW_80M = "80M-v1,512,1536,8,8,50432,78914048,1.6e9,4.10,20N\n"
ROW_116M = "116M-v1,640,1792,10,10,50432,115000000,2.3e9,3.95,20N\n"


def write(tmp_path, text, name="runs.csv"):
    path = tmp_path / name
    if isinstance(text, bytes):
        path.write_bytes(text)
    else:
        path.write_text(text)
    return path


class TestIngestRuns:
    def test_well_formed(self, tmp_path):
        runs = ingest_runs(write(tmp_path, HEADER + ROW_80M + ROW_116M))
        assert len(runs) == 2
        assert runs[0].n_tokens == 1_600_000_000
        assert runs[0].size_label == "80M" and runs[0].variant == "v1"
        assert runs.provenance.digest.startswith("sha256:")

    def test_comments_and_blank_lines(self, tmp_path):
        runs = ingest_runs(write(tmp_path, "# sweep\n" + HEADER + "\n" + ROW_80M + "# done\n"))
        assert len(runs) == 1

    def test_duplicate_named(self, tmp_path):
        with pytest.raises(DataError, match="duplicate run '80M-v1'") as info:
            ingest_runs(write(tmp_path, HEADER + ROW_80M + ROW_80M))
        assert info.value.line == 3

    def test_negative_loss(self, tmp_path):
        with pytest.raises(DataError, match="loss must be positive"):
            ingest_runs(write(tmp_path, HEADER + ROW_80M.replace("4.10", "-1")))

    @pytest.mark.parametrize("bad, message", [
        ("80M-v1,512,1536,8,8,50432,78914048,1.6e9,abc,20N\n", "not a number"),
        ("80M-v1,512,1536,8,8,50432,78914048,1.5,4.1,20N\n", "not an integer"),
        ("80M-v1,512,1536,,8,50432,78914048,1.6e9,4.1,20N\n", "partial architecture"),
        ("80M-v1,510,1536,8,8,50432,78914048,1.6e9,4.1,20N\n", "not divisible"),
        ("80M-v1,512,1536,8,8,50432,78914048,1.6e9\n", "expected 10 fields"),
    ])
    def test_bad_rows_name_the_line(self, tmp_path, bad, message):
        with pytest.raises(DataError, match=message) as info:
            ingest_runs(write(tmp_path, HEADER + ROW_116M + bad))
        assert ":3:" in str(info.value)

    def test_wrong_header(self, tmp_path):
        with pytest.raises(DataError, match="expected header"):
            ingest_runs(write(tmp_path, "a,b\n1,2\n"))

    @pytest.mark.parametrize("text, message", [("", "empty"), ("# only\n", "empty"), (HEADER, "no records")])
    def test_empty_inputs(self, tmp_path, text, message):
        with pytest.raises(DataError, match=message):
            ingest_runs(write(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            ingest_runs(tmp_path / "nope.csv")

    def test_runs_without_architecture(self, tmp_path):
        runs = ingest_runs(write(tmp_path, HEADER + "x,,,,,,80000000,1.6e9,4.1,20N\n"))
        assert runs[0].config is None

    def test_size_mismatch_warns_but_keeps_file_value(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING):
            runs = ingest_runs(write(tmp_path, HEADER + ROW_80M.replace("78914048", "90000000")))
        assert runs[0].n_params == 90_000_000
        assert "more than 5%" in caplog.text

    def test_digest_ignores_bom_and_line_endings(self, tmp_path):
        a = ingest_runs(write(tmp_path, HEADER + ROW_80M, "a.csv"))
        b = ingest_runs(write(tmp_path, b"\xef\xbb\xbf" + (HEADER + ROW_80M).replace("\n", "\r\n").encode(), "b.csv"))
        assert a.provenance.digest == b.provenance.digest
        assert a.runs == b.runs

    def test_save_round_trip(self, tmp_path):
        runs = ingest_runs(write(tmp_path, HEADER + ROW_80M + ROW_116M))
        save_runs(runs, tmp_path / "again.csv")
        assert ingest_runs(tmp_path / "again.csv").runs == runs.runs


def test_canonical_bytes():
    assert canonical_bytes(b"\xef\xbb\xbfa\r\nb\rc\n") == b"a\nb\nc\n"
    assert content_digest(b"x") == content_digest(b"\xef\xbb\xbfx")


class TestSplit:
    def runset(self):
        runs = [TrainingRun(c, 20 * 10**8, 10**10, 3.0, "20N") for c in ARCHITECTURES if c.label.startswith(("80M", "116M"))]
        runs.append(TrainingRun(ARCHITECTURES[0], 10**8, 128 * 10**8, 2.9, "160N"))
        return RunSet(tuple(runs))

    def test_tag_selector(self):
        runs = self.runset()
        fit, test = split_runs(runs, parse_selector("tag==20N"))
        assert (len(fit), len(test)) == (len(runs) - 1, 1)
        assert fit.provenance.selection == "tag==20N"

    def test_true_selector(self):
        fit, test = split_runs(self.runset(), parse_selector("true"))
        assert len(test) == 0

    def test_empty_fit_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            split_runs(self.runset(), parse_selector("false"))

    def test_one_variant_per_group(self):
        runs = self.runset()
        sel = one_variant_per_group(runs, 123)
        fit, _ = split_runs(runs, sel)
        assert sorted((r.size_label, r.tag) for r in fit) == [("116M", "20N"), ("80M", "160N"), ("80M", "20N")]
        assert fit.provenance.seed == 123
        again, _ = split_runs(runs, one_variant_per_group(runs, 123))
        assert again.runs == fit.runs

    def test_seeds_differ(self):
        runs = self.runset()
        picks = {tuple(r.label for r in split_runs(runs, one_variant_per_group(runs, s))[0]) for s in range(20)}
        assert len(picks) > 1

    def test_seed_range(self):
        with pytest.raises(ValueError):
            one_variant_per_group([], -1)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=34))
    def test_split_is_partition(self, mask):
        runs = RunSet(tuple(TrainingRun(c, 10**8, 10**9, 3.0) for c in ARCHITECTURES[:len(mask)]))
        flags = dict(zip((r.identity for r in runs), mask))
        if not any(mask):
            return
        fit, test = split_runs(runs, lambda r: flags[r.identity])
        assert len(fit) + len(test) == len(runs)
        assert set(fit.runs).isdisjoint(test.runs)
        assert set(fit.runs) | set(test.runs) == set(runs.runs)


class TestLatencyAndConfigs:
    def test_latency_round_trip(self, tmp_path):
        records = [LatencyRecord(MORPH_1B, DEFAULT_WORKLOAD, 1.96)]
        with open(tmp_path / "lat.csv", "w") as fh:
            write_latency_csv(records, fh)
        got = ingest_latency(tmp_path / "lat.csv")
        assert got == records
        assert got[0].latency_s == 1.96

    def test_latency_bad_metric_kind(self, tmp_path):
        text = ("label,d_model,f_size,n_layers,n_heads,batch_size,input_tokens,output_tokens,metric_kind,value,"
                "device_tag\nm,3072,8192,12,16,1,128,256,p99,1.9,a100-40gb\n")
        with pytest.raises(DataError, match="metric_kind"):
            ingest_latency(write(tmp_path, text, "lat.csv"))

    def test_configs_round_trip(self, tmp_path):
        with open(tmp_path / "c.csv", "w") as fh:
            write_configs_csv(MORPH_VARIANTS, fh)
        got = read_configs(tmp_path / "c.csv")
        assert got == list(MORPH_VARIANTS)
        assert [c.label for c in got] == [c.label for c in MORPH_VARIANTS]


finite_coef = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestLawFiles:
    def test_published_round_trip(self, tmp_path):
        for record in FULL_FIT.values():
            save_law(record, tmp_path / "law.txt")
            assert load_law(tmp_path / "law.txt") == record

    @settings(max_examples=100, deadline=None)
    @given(st.sampled_from(list(LawKind)), finite_coef, finite_coef, finite_coef, finite_coef, finite_coef,
           finite_coef, finite_coef, st.floats(0, 1e3), st.integers(0, 10**6), st.booleans(),
           st.one_of(st.none(), st.integers(0, 2**64 - 1)))
    def test_round_trip_is_identity(self, kind, E, A, B, a, b, g, eps, sse, iters, conv, seed):
        if kind is LawKind.CHINCHILLA:
            eps = 0.0
        record = FittedLawRecord(
            kind, LawCoefficients(E, A, B, a, b, g, eps, tied=False),
            FitDiagnostics(sse, iters, iters % 7, conv, "some reason"), "sha256:abc", seed,
        )
        assert parse_law(format_law(record)) == record

    def test_unknown_kind(self):
        text = format_law(FULL_FIT[CH]).replace("kind = chinchilla", "kind = kaplan")
        with pytest.raises(DataError, match="unknown law kind"):
            parse_law(text)

    def test_schema_mismatch(self):
        text = format_law(FULL_FIT[CH]).replace("schema_version = 1", "schema_version = 2")
        with pytest.raises(DataError, match="schema version"):
            parse_law(text)

    @pytest.mark.parametrize("edit, message", [
        (lambda t: re.sub(r"(?m)^E = .*\n", "", t), "missing fields: E"),
        (lambda t: t + "extra = 1\n", "unknown fields"),
        (lambda t: t + "E = 3\n", "duplicate key"),
        (lambda t: t + "garbage\n", "key = value"),
        (lambda t: t.replace("tied = true", "tied = yes"), "true or false"),
    ])
    def test_malformed(self, edit, message):
        with pytest.raises(DataError, match=message):
            parse_law(edit(format_law(FULL_FIT[CH])))

    def test_floats_are_exact(self):
        c = LawCoefficients(math.pi, 1 / 3, 2 ** 0.5, 0.1, 0.2, 0.3, 1e-300)
        record = FittedLawRecord(LawKind.INFERENCE_EFFICIENT, c)
        assert parse_law(format_law(record)).coefficients == c
