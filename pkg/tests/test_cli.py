import json
import os

import numpy as np
import pytest

from unicls.cli import COMMANDS, build_parser, main, train_config
from unicls.core import ClassifierHead, LabeledDataset, MetricBatch, compute_metrics
from unicls.data_io import SyntheticSpec, generate_synthetic, load_head, load_report, save_features_csv, save_report
from unicls.evaluation import evaluate
from unicls.losses import TABLE_LOSS_NAMES
from unicls.trainer import train

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")
REGEN = os.environ.get("UNICLS_REGEN_GOLDEN") == "1"


def run(capsys, *argv):
    rc = main(list(argv))
    out, err = capsys.readouterr()
    return rc, out, err


def small_csv(tmp_path, seed=0):
    data = generate_synthetic(SyntheticSpec(3, 4, 8, 5.0, 0.5, seed))
    path = tmp_path / "f.csv"
    save_features_csv(data, path)
    return data, path


@pytest.mark.parametrize("command", [None, *COMMANDS])
def test_help_matches_golden(capsys, command):
    argv = ["--help"] if command is None else [command, "--help"]
    rc, out, _ = run(capsys, *argv)
    assert rc == 0
    path = os.path.join(GOLDEN, f"help_{command or 'main'}.txt")
    if REGEN:
        with open(path, "w") as fh:
            fh.write(out)
    with open(path) as fh:
        assert out == fh.read()


@pytest.mark.parametrize("command", list(COMMANDS))
def test_help_lists_every_flag(capsys, command):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command").choices[command]
    _, out, _ = run(capsys, command, "--help")
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in out


def test_train_example_writes_report(tmp_path, capsys):
    out = tmp_path / "run1"
    rc, text, _ = run(capsys, "train", "--loss", "bce-nu", "--gamma", "96", "--synthetic", "--classes", "16",
                      "--dim", "32", "--samples-per-class", "10", "--epochs", "5", "--seed", "7", "--out", str(out))
    assert rc == 0
    tree = json.loads((out / "report.json").read_text())
    assert tree["kind"] == "AccuracyReport"
    for key in ("a_sw", "a_cw", "a_uni", "t_star"):
        assert key in tree["data"]
    assert len(tree["extra"]["learned_bias"]) == 16
    assert tree["extra"]["config"]["loss"] == "bce-nu" and tree["extra"]["config"]["seed"] == 7
    assert tree["extra"]["train_config"]["loss"]["name"] == "bce-nu"
    assert "a_uni_at_learned_threshold" in tree["extra"]
    assert text.startswith("a_sw=")
    for name in ("run.json", "head.json"):
        assert (out / name).exists()


def test_train_matches_library(tmp_path, capsys):
    argv = ["train", "--loss", "bce-d", "--synthetic", "--classes", "4", "--dim", "5", "--samples-per-class", "12",
            "--epochs", "4", "--hidden", "6", "--seed", "3", "--data-seed", "2", "--out", str(tmp_path)]
    assert run(capsys, *argv)[0] == 0
    args = build_parser().parse_args(argv)
    data = generate_synthetic(SyntheticSpec(4, 5, 12, seed=2))
    lib = train(train_config(args), data)
    assert load_report(tmp_path / "report.json") == lib.eval_history[-1]
    head = load_head(tmp_path / "head.json")
    assert np.array_equal(head.weights, lib.final_head.weights)
    assert np.array_equal(head.bias, lib.final_head.bias)


def test_theory_check_examples(capsys):
    rc, out, _ = run(capsys, "theory-check", "--classes", "1000", "--gamma", "2")
    assert rc == 0 and "condition=false" in out
    rc, out, _ = run(capsys, "theory-check", "--classes", "10,1000", "--gamma", "1,96")
    rows = out.strip().splitlines()
    assert len(rows) == 4
    assert ["condition=true" in r for r in rows] == [False, True, False, True]
    for r in rows:
        cells = dict(c.split("=", 1) for c in r.split())
        assert float(cells["abs_diff"]) <= 1e-9
    rc, out, _ = run(capsys, "theory-check", "--classes", "2", "--bounds=-1,1")
    cells = dict(c.split("=", 1) for c in out.split())
    assert rc == 0 and abs(float(cells["stationary_bias"])) <= 1e-12
    assert "gamma" not in cells and cells["A"] == "-1"


def test_evaluate_identity_head_matches_library(tmp_path, capsys):
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(20, 3))
    data = LabeledDataset(feats, rng.integers(0, 3, 20), 3)
    path = tmp_path / "f.csv"
    save_features_csv(data, path)
    head = ClassifierHead(np.eye(3), np.zeros(3), "zero")
    save_report(head, tmp_path / "head.json")
    rc, out, _ = run(capsys, "evaluate", "--features", str(path), "--head", str(tmp_path / "head.json"),
                     "--out", str(tmp_path / "ev"))
    assert rc == 0
    lib = evaluate(compute_metrics(head, data))
    # identity head: the metrics are the features themselves
    assert lib == evaluate(MetricBatch(feats, data.labels))
    assert load_report(tmp_path / "ev" / "report.json") == lib
    assert f"a_sw={lib.a_sw:.6g}" in out


def test_evaluate_run_file_uses_full_model(tmp_path, capsys):
    data, path = small_csv(tmp_path)
    out = tmp_path / "t"
    run(capsys, "train", "--loss", "bce-u", "--features", str(path), "--hidden", "5", "--epochs", "3",
        "--out", str(out))
    trained = load_report(out / "report.json")
    rc, text, _ = run(capsys, "evaluate", "--features", str(path), "--head", str(out / "run.json"))
    assert rc == 0
    assert text.strip() == (f"a_sw={trained.a_sw:.6g} a_cw={trained.a_cw:.6g} a_uni={trained.a_uni:.6g} "
                            f"t_star={trained.t_star:.6g}")


def test_out_env_variable(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("UNICLS_OUT", str(tmp_path / "env"))
    rc, _, _ = run(capsys, "gen-data", "--classes", "2", "--dim", "2", "--samples-per-class", "3")
    assert rc == 0
    assert (tmp_path / "env" / "features.csv").read_text().startswith("id,label,f0,f1\n")


def test_gen_data_matches_library(tmp_path, capsys):
    run(capsys, "gen-data", "--classes", "3", "--dim", "2", "--samples-per-class", "4", "--data-seed", "5",
        "--center-offset", "1.5", "--out", str(tmp_path))
    expected = tmp_path / "lib.csv"
    save_features_csv(generate_synthetic(SyntheticSpec(3, 2, 4, seed=5, center_offset=1.5)), expected)
    assert (tmp_path / "features.csv").read_bytes() == expected.read_bytes()


def test_dist_export(tmp_path, capsys):
    data, path = small_csv(tmp_path)
    head = ClassifierHead(np.random.default_rng(1).normal(size=(4, 3)), np.zeros(3), "zero")
    save_report(head, tmp_path / "head.json")
    rc, _, _ = run(capsys, "dist-export", "--features", str(path), "--head", str(tmp_path / "head.json"),
                   "--bins", "9", "--out", str(tmp_path / "d"))
    if rc == 1:
        pytest.skip("random head classified nothing")
    assert rc == 0
    lines = (tmp_path / "d" / "histogram.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,pos_count,neg_count" and len(lines) == 10
    tree = json.loads((tmp_path / "d" / "distribution.json").read_text())
    assert tree["kind"] == "DistributionReport" and tree["extra"]["config"]["bins"] == 9


def test_sweeps(tmp_path, capsys):
    # N = 100 so the condition is false at gamma 1 and true at gamma 16
    base = ["--synthetic", "--classes", "100", "--dim", "4", "--samples-per-class", "1", "--epochs", "2"]
    rc, _, _ = run(capsys, "sweep-gamma", "--loss", "bce-nu", "--gammas", "1,16", *base, "--out", str(tmp_path / "g"))
    assert rc == 0
    lines = (tmp_path / "g" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "gamma,condition,a_sw,a_cw,a_uni,t_star,final_loss"
    assert [ln.split(",")[:2] for ln in lines[1:]] == [["1.0", "false"], ["16.0", "true"]]
    tree = json.loads((tmp_path / "g" / "sweep.json").read_text())
    assert tree["kind"] == "Sweep" and tree["data"]["parameter"] == "gamma" and len(tree["data"]["rows"]) == 2
    rc, _, _ = run(capsys, "sweep-bias-init", "--loss", "bce-d", "--modes", "1,4", *base, "--out", str(tmp_path / "b"))
    assert rc == 0
    lines = (tmp_path / "b" / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("bias_init,") and [ln.split(",")[:2] for ln in lines[1:]] == [["1", ""], ["4", ""]]


def test_unknown_loss_is_usage_error(capsys):
    rc, _, err = run(capsys, "train", "--loss", "bce-x", "--synthetic")
    assert rc == 2
    for name in TABLE_LOSS_NAMES:
        assert name in err


@pytest.mark.parametrize("argv", [
    [],
    ["train", "--synthetic"],
    ["train", "--loss", "soft-d"],
    ["train", "--loss", "soft-d", "--synthetic", "--features", "x.csv"],
    ["train", "--loss", "soft-d", "--synthetic", "--bias-init", "8"],
    ["theory-check", "--classes", "10"],
    ["nope"],
])
def test_usage_errors_exit_2(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    rc, _, err = run(capsys, "train", "--loss", "soft-d", "--features", str(tmp_path / "missing.csv"))
    assert rc == 1 and err.startswith("unicls: error:") and "missing.csv" in err
    rc, _, err = run(capsys, "theory-check", "--classes", "1", "--gamma", "2")
    assert rc == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("id,label,f0\n0,0,1e400\n")
    rc, _, err = run(capsys, "train", "--loss", "soft-d", "--features", str(bad), "--out", str(tmp_path))
    assert rc == 1 and "bad.csv:2:" in err


def test_divergence_reports_location(tmp_path, capsys):
    bad = tmp_path / "huge.csv"
    bad.write_text("id,label,f0,f1\n0,0,1e200,1e200\n1,1,-1e200,1e200\n")
    with np.errstate(all="ignore"):
        rc, _, err = run(capsys, "train", "--loss", "soft-d", "--features", str(bad), "--lr", "1",
                         "--out", str(tmp_path / "o"))
    assert rc == 1 and "epoch" in err
