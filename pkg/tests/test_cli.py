import csv

import numpy as np
import pytest

from inflaw.arch import DEFAULT_WORKLOAD
from inflaw.cli import main
from inflaw.data import LatencyRecord, load_law, save_law, save_runs, write_configs_csv, write_latency_csv
from inflaw.select import LatencyModel
from inflaw.synthetic import make_runs, sweep_points
from inflaw.tables import ARCHITECTURES, CH, FULL_FIT, IE, MORPH_LATENCY_S, MORPH_VARIANTS


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("INFLAW_OUTPUT_DIR", str(tmp_path / "out"))
    pts = sweep_points(np.geomspace(8e7, 6e8, 5), [24, 200, 60, 120, 40], (20, 160))
    save_runs(make_runs(FULL_FIT[CH], pts), tmp_path / "runs.csv")
    save_law(FULL_FIT[IE], tmp_path / "law.txt")
    with open(tmp_path / "configs.csv", "w") as fh:
        write_configs_csv(MORPH_VARIANTS, fh)
    with open(tmp_path / "lat.csv", "w") as fh:
        write_latency_csv([LatencyRecord(c, DEFAULT_WORKLOAD, t) for c, t in MORPH_LATENCY_S.items()], fh)
    return tmp_path


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_fit_writes_law_and_report(workdir, capsys):
    code = main(["fit", "--law", "chinchilla", "--runs", str(workdir / "runs.csv"), "--split", "tag==20N",
                 "--points", str(workdir / "points.csv")])
    assert code == 0
    record = load_law(workdir / "out" / "law.txt")
    assert record.coefficients.alpha == pytest.approx(0.49, rel=1e-6)
    out = capsys.readouterr().out
    assert "| fit | 5 |" in out and "| test | 5 |" in out
    assert {r["split"] for r in rows(workdir / "points.csv")} == {"fit", "test"}


def test_fit_is_byte_deterministic(workdir):
    args = ["fit", "--law", "chinchilla", "--runs", str(workdir / "runs.csv")]
    assert main(args + ["--out", str(workdir / "a.txt")]) == 0
    assert main(args + ["--out", str(workdir / "b.txt")]) == 0
    assert (workdir / "a.txt").read_bytes() == (workdir / "b.txt").read_bytes()


def test_evaluate(workdir, capsys):
    assert main(["evaluate", "--law", str(workdir / "law.txt"), "--runs", str(workdir / "runs.csv"),
                 "--out", str(workdir / "eval.csv")]) == 0
    assert "| test | 10 |" in capsys.readouterr().out
    assert len(rows(workdir / "eval.csv")) == 10


def test_predict(workdir, capsys):
    assert main(["predict", "--law", str(workdir / "law.txt"), "--configs", str(workdir / "configs.csv"),
                 "--tokens", "30e9"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("label,d_model")
    losses = [float(line.split(",")[-1]) for line in lines[1:]]
    assert losses == sorted(losses)


def test_select_with_budget(workdir, capsys):
    code = main(["select", "--law", str(workdir / "law.txt"), "--configs", str(workdir / "configs.csv"),
                 "--tokens", "30e9", "--latency", str(workdir / "lat.csv"), "--max-latency", "2.0"])
    assert code == 0
    ranking = rows(workdir / "out" / "ranking.csv")
    assert [(r["d_model"], r["n_layers"]) for r in ranking] == [("3072", "12")]
    assert "Morph-1B" in capsys.readouterr().out


def test_select_with_fitted_model(workdir):
    records = [LatencyRecord(c, DEFAULT_WORKLOAD, LatencyModel(0.1, 1e-5, 1024, 0.3)(c)) for c in ARCHITECTURES]
    with open(workdir / "lat_sweep.csv", "w") as fh:
        write_latency_csv(records, fh)
    code = main(["select", "--law", str(workdir / "law.txt"), "--configs", str(workdir / "configs.csv"),
                 "--tokens", "30e9", "--latency", str(workdir / "lat_sweep.csv"), "--latency-mode", "model",
                 "-k", "3", "--sort-key", "latency_then_loss", "--out", str(workdir / "r.csv")])
    assert code == 0
    assert [r["label"] for r in rows(workdir / "r.csv")] == ["Morph-1B", "Morph-1B-v2", "Morph-1B-v1"]


def test_select_infeasible_is_validation_error(workdir, capsys):
    code = main(["select", "--law", str(workdir / "law.txt"), "--configs", str(workdir / "configs.csv"),
                 "--tokens", "30e9", "--latency", str(workdir / "lat.csv"), "--max-latency", "0.5"])
    assert code == 1
    assert "violate the constraints" in capsys.readouterr().err


def test_pareto(workdir):
    (workdir / "pts.csv").write_text("label,latency_s,quality\na,1,0.5\nb,2,0.6\nc,2,0.4\nd,3,0.6\n")
    assert main(["pareto", "--points", str(workdir / "pts.csv")]) == 0
    assert [r["label"] for r in rows(workdir / "out" / "pareto.csv")] == ["a", "b"]


def test_variants(workdir, capsys):
    assert main(["variants", "--base", "Morph-1B-v1", "--ratios", "160,256,64"]) == 0
    captured = capsys.readouterr()
    assert "omitted ratio 64" in captured.err
    assert "2560,6912,16,16" in captured.out and "3072,8192,12,16" in captured.out


def test_variants_explicit_base(capsys):
    assert main(["variants", "--base", "2048,5632,24,16", "--ratios", "256"]) == 0
    assert "3072,8192,12,16" in capsys.readouterr().out


def test_report(workdir):
    assert main(["report", "--law", str(workdir / "law.txt"), "--runs", str(workdir / "runs.csv"),
                 "--split", "tag==20N"]) == 0
    text = (workdir / "out" / "report.md").read_text()
    assert "| fit subset | 5 |" in text and "| all runs | 10 |" in text
    assert "sha256:" in text
    assert (workdir / "out" / "points.csv").exists()


@pytest.mark.parametrize("argv", [
    ["fit", "--law", "kaplan", "--runs", "x.csv"],
    ["fit", "--law", "chinchilla"],
    ["nonsense"],
])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1


def test_missing_file_exit_1(workdir, capsys):
    assert main(["evaluate", "--law", str(workdir / "nope.txt"), "--runs", str(workdir / "runs.csv")]) == 1
    assert "not found" in capsys.readouterr().err


def test_bad_selector_exit_1(workdir, capsys):
    assert main(["fit", "--law", "chinchilla", "--runs", str(workdir / "runs.csv"), "--split", "tag ="]) == 1
    assert "expected" in capsys.readouterr().err


def test_numerical_failure_exit_2(workdir, capsys):
    # three runs cannot determine the five free parameters of an untied law
    (workdir / "tiny.csv").write_text(
        "label,d_model,f_size,n_layers,n_heads,vocab_size,n_params,n_tokens,loss,tag\n"
        + "".join(f"r{i},,,,,,{10 ** (i + 8)},{10 ** (i + 10)},3.0,20N\n" for i in range(3))
    )
    code = main(["fit", "--law", "chinchilla", "--runs", str(workdir / "tiny.csv"), "--untied"])
    assert code == 2
    assert "under-determined" in capsys.readouterr().err
