import hashlib
import json
import os

import numpy as np
import pytest

from layerlab import cli
from layerlab import fileio as io_

SCALAR = """\
potential.name = scalar_quartic
grid1d.y_max = 20
grid1d.n = 801
grid2d.y_max = 8
grid2d.n_y = 161
grid2d.per_unit = 8
strip.L = 4
sweep.eta_tol = 0.2
effpot.n_seeds = 2
effpot.p_values = 0.2
effpot.battery_size = 5
continuation.L_list = 3, 4, 5
"""

TWO = """\
potential.name = two_channel
potential.A = 0.05
grid1d.n = 1201
grid2d.y_max = 12
grid2d.n_y = 121
grid2d.per_unit = 8
strip.L = 4
effpot.n_seeds = 2
effpot.p_values = 0.1
effpot.battery_size = 5
"""


@pytest.fixture(scope="module")
def cfgdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cfg")
    (d / "scalar.cfg").write_text(SCALAR)
    (d / "two.cfg").write_text(TWO)
    return d


def run(*argv):
    return cli.main([str(a) for a in argv])


def digests(d):
    out = {}
    for name in sorted(os.listdir(d)):
        if name != "timings.json":
            out[name] = hashlib.sha256((d / name).read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def scalar_runs(cfgdir, tmp_path_factory):
    outs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"run{k}")
        assert run("run", "--config", cfgdir / "scalar.cfg", "--out", out) == 0
        outs.append(out)
    return outs


def test_run_manifest(scalar_runs):
    man = json.loads((scalar_runs[0] / "manifest.json").read_text())
    assert set(man["stages"].values()) == {"ok"}
    assert "error" not in man
    assert man["config"]["potential"]["name"] == "scalar_quartic"
    assert "numpy" in man["versions"]
    assert (scalar_runs[0] / "timings.json").exists()
    assert (scalar_runs[0] / "config.echo").read_text().startswith("potential.name = scalar_quartic")


def test_run_is_deterministic(scalar_runs):
    a, b = (digests(d) for d in scalar_runs)
    assert a == b
    assert len(a) > 10


def test_rerun_from_echo(scalar_runs, tmp_path):
    # The echoed config reproduces the same configuration.
    out = tmp_path / "e"
    assert run("connect", "--config", scalar_runs[0] / "config.echo", "--out", out) == 0
    assert (out / "connect.json").read_bytes() == (scalar_runs[0] / "connect.json").read_bytes()


@pytest.mark.parametrize("text", ["bogus = 1\n", "grid1d.n = x\n"])
def test_bad_config_exit_2(tmp_path, text):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    assert run("connect", "--config", p, "--out", tmp_path) == 2


def test_usage_errors_exit_2(cfgdir, tmp_path, monkeypatch, capsys):
    assert run("frobnicate") == 2
    assert run("project", "--config", cfgdir / "two.cfg") == 2  # --in missing
    assert run("connect", "--config", cfgdir / "two.cfg", "--threads", "0", "--out", tmp_path) == 2
    assert run("connect", "--format", "xml") == 2
    assert run("continue-l", "--L", "3,a") == 2
    monkeypatch.setenv("LAYERLAB_LOG", "loud")
    assert run("connect", "--config", cfgdir / "two.cfg", "--out", tmp_path) == 2
    assert "LAYERLAB_LOG" in capsys.readouterr().err


def test_branch_out_of_range_exit_2(cfgdir, tmp_path):
    p = tmp_path / "b.cfg"
    p.write_text(TWO + "strip.branch_right = 5\n")
    assert run("strip", "--config", p, "--out", tmp_path) == 2


def test_nonconvergence_exit_3(cfgdir, tmp_path):
    p = tmp_path / "n.cfg"
    p.write_text(TWO + "solver.max_iters = 1\n")
    assert run("strip", "--config", p, "--out", tmp_path) == 3


def test_two_channel_subcommands(cfgdir, tmp_path, capsys):
    out = tmp_path / "o"
    cfg = cfgdir / "two.cfg"
    assert run("connect", "--config", cfg, "--out", out) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["N"] == 2
    assert run("spectrum", "--config", cfg, "--out", out) == 0
    capsys.readouterr()
    # global flags after the subcommand
    assert run("strip", "--eta", "0.25", "--config", cfg, "--out", out, "--format", "json") == 0
    summ = json.loads(capsys.readouterr().out)
    assert summ["eta_bar"] == 0.25
    fld = out / "strip_L4_eta0.25_field.bin"
    assert fld.exists()
    f = io_.read_field(str(fld))
    assert f.grid.n_x == 33 and f.m == 2
    # project a stored connection: it is its own translate
    assert run("project", "--config", cfg, "--out", out, "--in", out / "connection_1.csv") == 0
    pr = json.loads(capsys.readouterr().out)
    assert pr["branch"] == 1
    assert pr["q"] < 1e-8 and abs(pr["h"]) < 1e-8


def test_analyze_structure_violation_exit_4(cfgdir, tmp_path):
    out = tmp_path / "o"
    cfg = cfgdir / "two.cfg"
    assert run("connect", "--config", cfg, "--out", out) == 0
    _, data, _ = io_.read_array(str(out / "connection_0.csv"))
    prof = data[:, 1:]
    n_x = 17
    vals = np.repeat(prof[None], n_x, axis=0)
    # two separated excursions away from the manifold
    vals[4] *= 0.3
    vals[12] *= 0.3
    from layerlab import discretization as dz
    g = dz.Grid2D(4.0, n_x, float(data[-1, 0]), len(data))
    path = io_.write_array(str(tmp_path / "bad_field"), *io_.field_columns(dz.Field2D(g, vals)), "csv")
    assert run("analyze", "--config", cfg, "--out", out, "--field", path) == 4


def test_log_levels(cfgdir, tmp_path, monkeypatch):
    monkeypatch.setenv("LAYERLAB_LOG", "DEBUG")
    assert run("connect", "--config", cfgdir / "scalar.cfg", "--out", tmp_path) == 0
