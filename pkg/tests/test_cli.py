import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fgl import besov as bv
from fgl import cli
from fgl import problems as pb


def write_ini(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, command, ini="", out="out", seed=None):
    args = [command, "--out", str(tmp_path / out)]
    if ini:
        args += ["--config", write_ini(tmp_path, ini, f"{out}.ini")]
    if seed is not None:
        args += ["--seed", str(seed)]
    return cli.main(args), tmp_path / out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


# -- configuration -----------------------------------------------------------

def test_unknown_key_is_a_config_error(tmp_path):
    code, _ = run(tmp_path, "solve", "[problem]\ngama = 3\n")
    assert code == cli.EXIT_CONFIG


@pytest.mark.parametrize("ini", ["[problem]\ngamma = 1.0\n", "[problem]\ngamma = abc\n",
                                 "[nonsense]\nx = 1\n", "[problem]\nnorm = schatten\n",
                                 "[problem]\nf = gauss\n"])
def test_invalid_configs(tmp_path, ini):
    assert run(tmp_path, "solve", ini)[0] == cli.EXIT_CONFIG


def test_bad_arguments_exit_config():
    assert cli.main(["frobnicate"]) == cli.EXIT_CONFIG
    assert cli.main([]) == cli.EXIT_CONFIG


def test_exact_key_matching(tmp_path):
    cfg = cli.load_config(write_ini(tmp_path, "[problem]\nn = 2   ; dimension\nN = 17\n"))
    assert cfg.problem.n == 2 and cfg.problem.N == 17


def test_parse_family():
    f = cli.parse_family("lp:4:sigma=2", 3)
    assert f.p == 4.0 and f.sigma == 2.0 and f.dim == 3
    with pytest.raises(cli.ConfigError):
        cli.parse_family("lq:2", 2)


# -- check-geometry ----------------------------------------------------------

def test_check_geometry_default_passes(tmp_path):
    code, out = run(tmp_path, "check-geometry")
    assert code == cli.EXIT_OK
    ratios = read_csv(out / "geometry_ratios.csv")
    ids = read_csv(out / "geometry_identities.csv")
    assert ratios and ids
    assert all(float(r[k]) < 1e-10 for r in ids for k in ("pairing", "dual_norm", "round_trip"))
    m = manifest(out)
    assert m["exit_code"] == 0 and m["stages"]["check-geometry"] == "pass"


def test_check_geometry_negative_control_fails(tmp_path, capsys):
    ini = "[geometry]\nfamilies = lp:4:sigma=2\nsamples = 20000\n"
    code, _ = run(tmp_path, "check-geometry", ini)
    assert code == cli.EXIT_FAIL
    assert "FAIL" in capsys.readouterr().err


def test_check_geometry_without_samples_fails(tmp_path):
    code, _ = run(tmp_path, "check-geometry", "[geometry]\nsamples = 0\nidentity_samples = 0\n")
    assert code == cli.EXIT_FAIL


# -- solve -------------------------------------------------------------------

@pytest.mark.parametrize("gamma", [2.0, 4.0])
def test_solve_matches_closed_form(tmp_path, gamma):
    code, out = run(tmp_path, "solve", f"[problem]\ngamma = {gamma}\n")
    assert code == cli.EXIT_OK
    rows = read_csv(out / "solution.csv")
    x = np.array([float(r["x1"]) for r in rows])
    u = np.array([float(r["u1"]) for r in rows])
    assert np.abs(u - pb.closed_form_1d(gamma, x)).max() < 5e-3
    summary = read_csv(out / "summary.csv")[0]
    assert summary["status"] == "ok" and summary["converged"] == "1"


def test_solve_iteration_cap_exits_nonconverged(tmp_path):
    code, out = run(tmp_path, "solve", "[problem]\ngamma = 3\n[solver]\nmax_iters = 1\n")
    assert code == cli.EXIT_NONCONVERGED
    assert read_csv(out / "summary.csv")[0]["status"] == "not converged"
    assert manifest(out)["exit_code"] == cli.EXIT_NONCONVERGED


def test_manifest_lists_every_output(tmp_path):
    _, out = run(tmp_path, "solve", "[problem]\ngamma = 3\nN = 33\n", seed=7)
    m = manifest(out)
    written = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()
                     and p.name != "manifest.json")
    assert m["outputs"] == written
    assert m["config"]["seed"] == 7 and m["config"]["problem"]["gamma"] == 3.0
    assert set(m["versions"]) >= {"python", "numpy", "scipy"}
    assert m["started"] and m["finished"]


def test_resume_from_checkpoint(tmp_path):
    ini = "[problem]\ngamma = 3\nN = 65\n"
    _, first = run(tmp_path, "solve", ini, out="a")
    resumed = ini + f"[run]\nresume = {first / 'checkpoint.txt'}\n"
    code, second = run(tmp_path, "solve", resumed, out="b")
    assert code == cli.EXIT_OK
    it_a = int(read_csv(first / "summary.csv")[0]["iterations"])
    it_b = int(read_csv(second / "summary.csv")[0]["iterations"])
    assert it_b < it_a
    ua = np.array([float(r["u1"]) for r in read_csv(first / "solution.csv")])
    ub = np.array([float(r["u1"]) for r in read_csv(second / "solution.csv")])
    assert np.abs(ua - ub).max() < 1e-6


def test_resume_with_mismatched_grid(tmp_path):
    _, first = run(tmp_path, "solve", "[problem]\nN = 33\n", out="a")
    code, _ = run(tmp_path, "solve", f"[problem]\nN = 65\n[run]\nresume = {first / 'checkpoint.txt'}\n",
                  out="b")
    assert code == cli.EXIT_CONFIG


# -- probe -------------------------------------------------------------------

def test_probe_gamma4_passes(tmp_path):
    code, out = run(tmp_path, "probe", "[problem]\ngamma = 4\nN = 257\n")
    assert code == cli.EXIT_OK
    rows = {r["quantity"]: r for r in read_csv(out / "regularity.csv")}
    assert set(rows) == set(bv.QUANTITIES)
    assert float(rows["Du"]["predicted_alpha"]) == 0.5
    assert rows["W"]["note"].startswith("outside stated hypothesis")


def test_probe_random_field_fails(tmp_path, capsys):
    code, _ = run(tmp_path, "probe", "[problem]\ngamma = 4\nN = 257\n[probe]\nfield = random\n")
    assert code == cli.EXIT_FAIL
    assert "FAIL" in capsys.readouterr().err


def test_probe_saved_field(tmp_path):
    _, first = run(tmp_path, "solve", "[problem]\ngamma = 4\nN = 257\n", out="a")
    code, out = run(tmp_path, "probe",
                    f"[problem]\ngamma = 4\nN = 257\n[probe]\nfield = {first / 'solution.csv'}\n", out="b")
    assert code == cli.EXIT_OK
    assert "solution.csv" not in manifest(out)["outputs"]


# -- sweep -------------------------------------------------------------------

SWEEP = "[sweep]\ngammas = 2, 4\nps = 2, 3\nN = 65\n"


def test_sweep_rows_and_predictions(tmp_path):
    code, out = run(tmp_path, "sweep", SWEEP)
    assert code == cli.EXIT_OK
    rows = read_csv(out / "sweep.csv")
    assert len(rows) == 2 * 2 * len(bv.QUANTITIES)
    for r in rows:
        g, p = float(r["gamma"]), float(r["norm_p"])
        tau, sigma = min(p, 2.0), max(p, 2.0)
        pred = bv.predicted_exponents(g, tau, sigma)[r["quantity"]]
        assert float(r["predicted_alpha"]) == pytest.approx(pred.alpha)
        assert float(r["p"]) == pytest.approx(pred.p)
    assert (out / "cells" / "g4_p3" / "solution.csv").exists()


def test_outputs_are_deterministic_across_runs_and_threads(tmp_path, monkeypatch):
    monkeypatch.setenv("FGL_THREADS", "1")
    _, a = run(tmp_path, "sweep", SWEEP, out="a")
    _, g1 = run(tmp_path, "check-geometry", out="g1")
    monkeypatch.setenv("FGL_THREADS", "4")
    _, b = run(tmp_path, "sweep", SWEEP, out="b")
    _, g4 = run(tmp_path, "check-geometry", out="g4")
    files = [p.relative_to(a) for p in a.rglob("*.csv")]
    assert files
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    for name in ("geometry_ratios.csv", "geometry_identities.csv"):
        assert (g1 / name).read_bytes() == (g4 / name).read_bytes()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fgl", "solve", "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert (tmp_path / "o" / "manifest.json").exists()
