import json
import subprocess
import sys

import pytest

from drowsiness.cli import build_parser, main, resolve_config

TINY = ["--set", "n_bootstrap=3", "--set", "psd_training.epochs=1",
        "--set", "psd_training.max_batches_per_epoch=2", "--set", "psd_training.batch_size=8",
        "--set", "raw_training.epochs=1", "--set", "raw_training.max_batches_per_epoch=1",
        "--set", "raw_training.batch_size=4"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(out), "--subjects", "3", "--duration", "60",
                 "--seed", "4"]) == 0
    return out


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes()
            for p in sorted(path.rglob("*")) if p.is_file()}


def test_parser_lists_all_subcommands():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == {"synth", "preprocess", "features", "run", "compare", "report"}


def test_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "drowsiness.cli", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "compare" in r.stdout


@pytest.mark.parametrize("argv", [["bogus"], ["compare", "--data", "x", "--out", "y", "--nope"],
                                  ["run", "--data", "x"], []])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1


def test_missing_data_exits_2(tmp_path):
    assert main(["compare", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o"),
                 "--seed", "1"]) == 2


def test_compare_without_seed_exits_1(data, tmp_path):
    assert main(["compare", "--data", str(data), "--out", str(tmp_path / "o")]) == 1


def test_bad_override_exits_1(data, tmp_path):
    assert main(["compare", "--data", str(data), "--out", str(tmp_path / "o"), "--seed", "1",
                 "--set", "no_such_key=3"]) == 1


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"seed": 3, "n_repeats": 4, "ridge_lambda": 2.0}))
    args = build_parser().parse_args(["compare", "--data", "d", "--out", "o", "--config",
                                      str(cfg_file), "--set", "ridge_lambda=5", "--repeats",
                                      "2"])
    cfg = resolve_config(args)
    assert (cfg.seed, cfg.n_repeats, cfg.ridge_lambda) == (3, 2, 5.0)
    args = build_parser().parse_args(["compare", "--data", "d", "--out", "o", "--config",
                                      str(cfg_file), "--seed", "9"])
    assert resolve_config(args).seed == 9


def test_preprocess_features_run_chain(data, tmp_path):
    pre, feats = tmp_path / "pre", tmp_path / "feats"
    assert main(["preprocess", "--data", str(data), "--out", str(pre)]) == 0
    assert json.loads((pre / "dataset.json").read_text())["preprocessed"] is True
    assert main(["features", "--data", str(pre), "--out", str(feats)]) == 0
    assert sorted(p.name for p in (feats / "S01").iterdir()) == [
        "features.json", "labels.csv", "psd_db.npy", "psd_z.npy"]
    # features refuse raw data (a data error)
    assert main(["features", "--data", str(data), "--out", str(tmp_path / "f2")]) == 2
    for src in (data, pre):
        out = tmp_path / f"run-{src.name}"
        assert main(["run", "--data", str(src), "--algorithm", "RR", "--target", "S02",
                     "--out", str(out)]) == 0
    assert (tmp_path / "run-data" / "predictions.csv").read_bytes() == \
        (tmp_path / "run-pre" / "predictions.csv").read_bytes()


def test_run_unknown_target_or_algorithm(data, tmp_path):
    assert main(["run", "--data", str(data), "--algorithm", "RR", "--target", "S99",
                 "--out", str(tmp_path / "o")]) != 0
    assert main(["run", "--data", str(data), "--algorithm", "SVR", "--target", "S01",
                 "--out", str(tmp_path / "o")]) != 0


def test_compare_outputs_and_reproduction(data, tmp_path):
    base = ["compare", "--data", str(data), "--repeats", "2", "--seed", "11", *TINY]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(base + ["--out", str(a)]) == 0
    assert sorted(p.name for p in a.iterdir()) == [
        "anova.csv", "averages.csv", "config.resolved.json", "fig1_data.csv", "pairwise.csv",
        "predictions.csv", "report.json"]
    assert main(base + ["--out", str(b), "--jobs", "2"]) == 0
    assert _tree(a) == _tree(b)

    # the resolved config alone reproduces the run
    c = tmp_path / "c"
    assert main(["compare", "--data", str(data), "--config", str(a / "config.resolved.json"),
                 "--out", str(c)]) == 0
    assert _tree(a) == _tree(c)

    # report re-emits the same tables
    d = tmp_path / "d"
    assert main(["report", "--in", str(a / "report.json"), "--out", str(d)]) == 0
    for name in ("anova.csv", "averages.csv", "fig1_data.csv", "pairwise.csv", "report.json"):
        assert (a / name).read_bytes() == (d / name).read_bytes()


def test_synth_null_and_profile(tmp_path):
    prof = tmp_path / "p.json"
    prof.write_text(json.dumps({"n_channels": 6, "earlobe_indices": [4, 5]}))
    out = tmp_path / "s"
    assert main(["synth", "--out", str(out), "--subjects", "2", "--duration", "35",
                 "--profile", str(prof), "--null"]) == 0
    index = json.loads((out / "dataset.json").read_text())
    assert index["profile"]["n_channels"] == 6 and index["profile"]["alpha_coupling"] == 0
    prof.write_text(json.dumps({"colour": "blue"}))
    assert main(["synth", "--out", str(tmp_path / "t"), "--profile", str(prof)]) == 1
