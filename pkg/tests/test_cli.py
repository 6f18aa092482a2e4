import json

import pandas as pd

from binned_ssa.cli import build_parser, main


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out


def test_parser_lists_every_method():
    args = build_parser().parse_args(["simulate", "--model", "birth-death", "--tfinal", "1", "--method", "nsm"])
    assert args.method == "nsm"
    assert args.bin_width is None


def test_simulate_writes_csv(tmp_path):
    out = tmp_path / "traj.csv"
    counters = tmp_path / "counters.json"
    code = main(
        [
            "simulate", "--model", "birth-death", "--method", "nrm-bins", "--tfinal", "2", "--interval", "0.5",
            "--seed", "3", "--out", str(out), "--counters", str(counters),
        ]
    )
    assert code == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["t", "A"]
    assert frame["t"].tolist() == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert json.loads(counters.read_text())["steps"] > 0


def test_simulate_counters_to_stdout(capsys):
    assert main(["simulate", "--model", "three-channel", "--tfinal", "1", "--output", "counters"]) == 0
    assert "steps=" in capsys.readouterr().out


def test_simulate_honours_bin_flags(tmp_path):
    out = tmp_path / "t.csv"
    args = ["simulate", "--model", "birth-death", "--tfinal", "1", "--bin-width", "0.05", "--bins", "40"]
    assert main(args + ["--out", str(out)]) == 0
    assert len(pd.read_csv(out)) == 1


def test_usage_errors():
    assert main(["simulate", "--model", "birth-death", "--tfinal", "1", "--method", "bogus"]) == 1
    assert main(["simulate", "--model", "birth-death"]) == 1
    assert main([]) == 1
    assert main(["simulate", "--model", "birth-death", "--tfinal", "0"]) == 1
    assert main(["simulate", "--model", "birth-death", "--tfinal", "1", "--output", "interval"]) == 1


def test_model_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("species A 1\nreaction r: A -> Z @ 1\n")
    assert main(["simulate", "--model", str(bad), "--tfinal", "1"]) == 2
    assert main(["validate", "--model", str(tmp_path / "missing.txt")]) == 2
    assert main(["spatial", "--domain", "1.0", "--subvolume", "0.3", "--tfinal", "0.01"]) == 2


def test_validate(capsys):
    assert main(["validate", "--model", "elf-ehrenberg"]) == 0
    out = capsys.readouterr().out
    assert "species=8 channels=12" in out
    assert out.strip().endswith("ok")


def test_ensemble(tmp_path):
    out = tmp_path / "ens.csv"
    code = main(
        ["ensemble", "--model", "birth-death", "--tfinal", "1", "--interval", "0.5", "--n", "4", "--out", str(out)]
    )
    assert code == 0
    assert list(pd.read_csv(out).columns) == ["t", "A_mean", "A_var"]


def test_spatial(tmp_path):
    out = tmp_path / "snap.csv"
    code = main(
        [
            "spatial", "--domain", "1.2", "--subvolume", "0.6", "--method", "nsm", "--tfinal", "0.01",
            "--out", str(out),
        ]
    )
    assert code == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["subvolume", "species", "count"]
    assert len(frame) == 8 * 8


def test_benchmark(tmp_path):
    csv = tmp_path / "bench.csv"
    code = main(
        [
            "benchmark", "--method", "cr", "--M", "100", "--degree", "4", "--steps", "500", "--warmup", "10",
            "--reps", "1", "--csv", str(csv),
        ]
    )
    assert code == 0
    row = pd.read_csv(csv).iloc[0]
    assert row["method"] == "cr"
    assert row["channels"] == 100
    assert row["steps"] == 500


def test_sweep_and_plot(tmp_path, capsys):
    csv = tmp_path / "width.csv"
    assert main(["sweep", "width", "--M", "200", "--widths", "1,2", "--steps", "300", "--csv", str(csv)]) == 0
    assert len(pd.read_csv(csv)) == 4
    assert main(["plot", "--csv", str(csv), "--out-dir", str(tmp_path / "svg")]) == 0
    assert "width_ns_per_step.svg" in capsys.readouterr().out
    assert main(["sweep", "scaling", "--methods", "direct,bogus", "--csv", str(csv)]) == 1
