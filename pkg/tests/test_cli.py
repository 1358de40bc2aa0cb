import configparser
import filecmp
import subprocess
import sys

import numpy as np
import pytest

from stimpute.cli import COMMANDS, main
from stimpute.data import read_series, write_series

TINY = """
[run]
profile = synth
samples = 3
plot_nodes = 2
[data]
window_length = 8
[model]
channels = 8
heads = 2
layers = 1
virtual_nodes = 2
steps = 10
[train]
epochs = 1
[synth]
node_count = 6
n_steps = 400
missing_rate = 0.05
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY)
    assert main(["synth", "--config", str(root / "tiny.ini"), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(root / "data" / "config.ini"), "--out", str(root / "model")]) == 0
    assert main(["impute", "--config", str(root / "model" / "config.ini"), "--out", str(root / "imp")]) == 0
    return root


def test_subcommands():
    assert set(COMMANDS) == {"train", "impute", "evaluate", "simulate-mask", "synth"}


def test_declared_files(run):
    for name in ("series.csv", "coords.csv", "truth.csv", "adjacency.txt", "config.ini"):
        assert (run / "data" / name).is_file()
    for name in ("model.safetensors", "loss_trace.txt", "config.ini"):
        assert (run / "model" / name).is_file()
    trace = (run / "model" / "loss_trace.txt").read_text().split()
    assert trace[0] == "1" and float(trace[2]) == 1e-3
    imp = run / "imp"
    for suffix in ("median.csv", "q05.csv", "q95.csv", "target.txt", "cond.txt"):
        assert (imp / f"window_0000_{suffix}").is_file()
    plots = sorted(p.name for p in (imp / "plots").iterdir())
    assert plots == ["window_0000_s000.svg", "window_0000_s001.svg"]
    assert (imp / "plots" / plots[0]).read_text().lstrip().startswith("<?xml")


def test_band_ordering(run):
    _, _, lo, _ = read_series(run / "imp" / "window_0000_q05.csv")
    _, _, mid, _ = read_series(run / "imp" / "window_0000_median.csv")
    _, _, hi, _ = read_series(run / "imp" / "window_0000_q95.csv")
    assert (lo <= mid + 1e-12).all() and (mid <= hi + 1e-12).all()


def test_impute_rerun_identical(run):
    assert main(["impute", "--config", str(run / "model" / "config.ini"), "--out", str(run / "imp2")]) == 0
    names = sorted(p.name for p in (run / "imp").iterdir() if p.is_file())
    match, mismatch, errors = filecmp.cmpfiles(run / "imp", run / "imp2", names, shallow=False)
    assert not mismatch and not errors
    plot_names = sorted(p.name for p in (run / "imp" / "plots").iterdir())
    _, mismatch, _ = filecmp.cmpfiles(run / "imp" / "plots", run / "imp2" / "plots", plot_names, shallow=False)
    assert not mismatch


def test_echoed_config_reproduces_training(run):
    assert main(["train", "--config", str(run / "model" / "config.ini"), "--out", str(run / "model2")]) == 0
    a = (run / "model" / "model.safetensors").read_bytes()
    b = (run / "model2" / "model.safetensors").read_bytes()
    assert a == b


def test_evaluate_writes_report(run, capsys):
    assert main(["evaluate", "--config", str(run / "model" / "config.ini"), "--pattern", "point", "--out", str(run / "ev")]) == 0
    kv = dict(line.split("=") for line in (run / "ev" / "metrics.kv").read_text().splitlines())
    assert {"mae", "mse", "crps", "windows", "target_cells"} <= set(kv)
    assert "mae" in capsys.readouterr().out


def test_simulate_mask_failure(run):
    out = run / "masks"
    assert main(["simulate-mask", "--config", str(run / "model" / "config.ini"), "--pattern", "failure:s003", "--out", str(out)]) == 0
    target = np.loadtxt(out / "window_0000_target.txt")
    cond = np.loadtxt(out / "window_0000_cond.txt")
    assert not cond[3].any()
    assert not np.delete(target, 3, axis=0).any()


def test_empty_evaluation_mask(run, capsys):
    ids, stamps, values, mask = read_series(run / "data" / "series.csv")
    mask[:, int(0.8 * mask.shape[1]) :] = 0  # nothing observed in the test split
    write_series(run / "holes.csv", values, mask, ids, stamps)
    cfg = configparser.ConfigParser()
    cfg.read(run / "model" / "config.ini")
    cfg.set("data", "series", str(run / "holes.csv"))
    with open(run / "holes.ini", "w") as fh:
        cfg.write(fh)
    code = main(["evaluate", "--config", str(run / "holes.ini"), "--out", str(run / "ev_empty")])
    assert code != 0
    assert "empty evaluation mask" in capsys.readouterr().err


@pytest.mark.parametrize(
    "args, code",
    [
        (["train", "--config", "/nonexistent.ini"], 3),
        (["train"], 2),  # no data paths in the defaults
        (["train", "--profile", "synth", "--seed", "-1"], 2),
    ],
)
def test_error_exit_codes(tmp_path, args, code, capsys):
    assert main([*args, "--out", str(tmp_path / "o")]) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "error" in err[0]


def test_bad_config_value(tmp_path, run, capsys):
    (tmp_path / "bad.ini").write_text(f"[model]\nchannels = lots\n[data]\nseries = {run / 'data' / 'series.csv'}\ncoords = {run / 'data' / 'coords.csv'}\n")
    assert main(["train", "--config", str(tmp_path / "bad.ini"), "--out", str(tmp_path / "o")]) == 2
    assert "channels" in capsys.readouterr().err


def test_unknown_key(tmp_path):
    (tmp_path / "bad.ini").write_text("[model]\nwidth = 3\n")
    assert main(["synth", "--config", str(tmp_path / "bad.ini"), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stimpute", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in COMMANDS:
        assert name in proc.stdout
