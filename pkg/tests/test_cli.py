import csv
import json

import numpy as np
import pytest

from rigaqep import cli
from rigaqep.config import ConfigError, ExperimentConfig, load_config


def run(args, capsys=None):
    code = cli.main(args)
    out = capsys.readouterr() if capsys else None
    return code, out


# -- config ----------------------------------------------------------------------

def test_default_macroelements_are_16():
    assert ExperimentConfig(ne=64, discretization="riga").riga_levels == 2
    assert ExperimentConfig(ne=256, discretization="riga").riga_levels == 4
    assert ExperimentConfig(ne=64).riga_levels == 0


def test_config_file_and_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[problem]\nproblem = acoustic\np = 3\nne = 16\n\n[solver]\nshift = -300\nnev = 5\n"
                   "[material]\nabsorbing_edges = top\n")
    cfg = load_config(ini, ["solver.nev=7", "problem.discretization=riga"])
    assert cfg.problem == "acoustic" and cfg.nev == 7 and cfg.resolved_shift == -300
    assert cfg.discretization == "riga" and cfg.riga_levels == 1


@pytest.mark.parametrize("override,field", [
    ("problem.ne=18", "problem.levels"),
    ("problem.p=1", "problem.p"),
    ("solver.nev=abc", "solver.nev"),
    ("solver.m=3", "solver.m"),
    ("problem.problem=heat", "problem.problem"),
    ("solver.method=hermitian", "solver.method"),
    ("bogus=1", "bogus"),
])
def test_config_errors_name_the_field(override, field):
    with pytest.raises(ConfigError) as info:
        load_config(None, ["problem.discretization=riga", "problem.levels=2", override])
    assert field in str(info.value)


def test_complex_shift_parsing():
    assert load_config(None, ["solver.shift=20+0.3i"]).resolved_shift == 20 + 0.3j


# -- commands --------------------------------------------------------------------

@pytest.mark.parametrize("disc,full_N,full_nnz", [("iga", 9112, 1_090_240), ("riga", 10804, 1_217_968)])
def test_assemble_reports_dimensions(tmp_path, capsys, disc, full_N, full_nnz):
    code, out = run(["assemble", "--set", "problem.p=4", "--set", "problem.ne=64", "--set",
                     f"problem.discretization={disc}", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert str(full_N) in out.out
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["full_N"] == full_N and rep["full_nnz"] == full_nnz
    assert (tmp_path / "pencil_K.mtx").exists() and (tmp_path / "pencil_open_M.mtx").exists()


def test_invalid_levels_exit_code(tmp_path, capsys):
    code, out = run(["assemble", "--set", "problem.ne=20", "--set", "problem.discretization=riga",
                     "--set", "problem.levels=3", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_CONFIG
    assert "problem.levels" in out.err


ACOUSTIC = ["--set", "problem.problem=acoustic", "--set", "problem.p=3", "--set", "problem.ne=32",
            "--set", "solver.nev=30", "--set", "solver.shift=-300"]


def test_solve_acoustic_report(tmp_path, capsys):
    code, _ = run(["solve", *ACOUSTIC, "--out", str(tmp_path)], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["counters"]["calls"]["fa"] == 1
    assert rep["counters"]["calls"]["fb"] == rep["m"] * rep["nit"]
    assert rep["totals"]["total"] == sum(rep["totals"][c] for c in ("fa", "fb", "mv", "vv"))
    lam = np.array([p["re"] + 1j * p["im"] for p in rep["eigenpairs"]])
    assert len(lam) == 30
    real = lam[np.abs(lam.imag) <= 1e-8 * np.abs(lam)].real
    # near -300 the branch accumulating at -alpha/beta dominates; every real value sits in a branch
    assert len(real) == 30
    assert np.all((real < -500) | ((real > -500) & (real < -250)))
    assert np.any((real > -500) & (real < -250))
    rows = list(csv.DictReader(open(tmp_path / "eigenpairs.csv")))
    assert len(rows) == 30


def test_solve_is_deterministic(tmp_path):
    args = ["solve", "--set", "problem.p=3", "--set", "problem.ne=16", "--set", "solver.nev=6",
            "--seed", "4"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/eigenpairs.csv").read_bytes() == (tmp_path / "b/eigenpairs.csv").read_bytes()


def test_nonconductive_routes_to_hermitian(tmp_path, monkeypatch):
    called = {}
    real = cli.solve_generalized_hermitian

    def spy(*a, **k):
        called["yes"] = True
        return real(*a, **k)

    monkeypatch.setattr(cli, "solve_generalized_hermitian", spy)
    cfg = load_config(None, ["problem.problem=em-nonconductive", "problem.p=3", "problem.ne=16",
                             "solver.nev=4", "solver.shift=20"])
    rep, _, res = cli.solve_config(cfg)
    assert called and rep.counters["calls"]["fa"] == 1
    # omega^2 of the unit-square cavity: 2 pi^2 is the closest to 20
    assert min(abs(p.lam - 2 * np.pi ** 2) for p in res) < 1e-3


def test_solver_failure_exit_code(tmp_path, capsys):
    code, out = run(["solve", "--set", "problem.p=3", "--set", "problem.ne=16", "--set", "solver.nev=10",
                     "--set", "solver.m=12", "--set", "solver.tol=1e-16", "--set", "solver.max_restarts=1",
                     "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_SOLVER
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["status"] == "not converged"


def test_single_cell_sweep_equals_solve(tmp_path):
    args = ["--set", "problem.p=3", "--set", "problem.ne=16", "--set", "solver.nev=6"]
    assert cli.main(["solve", *args, "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["sweep", *args, "--disc", "iga", "--out", str(tmp_path / "w")]) == 0
    rep = json.loads((tmp_path / "s/report.json").read_text())
    row = next(csv.DictReader(open(tmp_path / "w/sweep.csv")))
    for c in ("fa", "fb", "mv", "vv", "total"):
        assert float(row[c]) == rep["totals"][c]
    assert int(row["n_converged"]) == len(rep["eigenpairs"])


def test_sweep_ratios_and_failed_cells(tmp_path):
    cfg = load_config(None, ["problem.problem=em", "solver.nev=6", "solver.method=quadratic"])
    rows, ratios = cli.cmd_sweep(cfg, tmp_path, [32], [3], ["iga", "riga"])
    assert len(rows) == 2 and all(r["status"] == "ok" for r in rows)
    (r,) = ratios
    assert r["fa_ratio"] > 1
    bad = load_config(None, ["solver.nev=6", "solver.max_restarts=1", "solver.tol=1e-17", "solver.m=8"])
    rows, ratios = cli.cmd_sweep(bad, tmp_path / "bad", [16], [3], ["iga"])
    assert rows[0]["status"] == "failed" and ratios == []


def test_isolated_sweep_matches_in_process(tmp_path):
    cfg = load_config(None, ["problem.problem=em-nonconductive", "solver.nev=4", "solver.method=quadratic"])
    serial, _ = cli.cmd_sweep(cfg, tmp_path / "a", [16], [3], ["iga", "riga"])
    isolated, _ = cli.cmd_sweep(cfg, tmp_path / "b", [16], [3], ["iga", "riga"], jobs=2, isolate=True)
    for r, q in zip(serial, isolated):
        assert q["status"] == "ok"
        assert (r["N"], r["fa"], r["fb"], r["mv"], r["vv"]) == (q["N"], q["fa"], q["fb"], q["mv"], q["vv"])


def test_verify_acoustic(tmp_path, capsys):
    code, _ = run(["verify", "--set", "problem.problem=acoustic", "--set", "problem.p=3",
                   "--set", "verify.mode=10", "--set", "verify.branch=2", "--set", "solver.nev=4",
                   "--ne", "32", "--out", str(tmp_path)], capsys)
    assert code == 0
    row = next(csv.DictReader(open(tmp_path / "verify.csv")))
    assert float(row["lambda"]) == pytest.approx(-7377.39, abs=0.01)
    assert float(row["eigenvalue_rel_error"]) < 1e-2
    assert float(row["l2_rel_error"]) < 0.2
    assert float(row["overlap"]) > 0.98


def test_verify_mode_miss(tmp_path, capsys):
    code, out = run(["verify", "--set", "problem.problem=em-nonconductive", "--set", "problem.p=3",
                     "--set", "problem.ne=16", "--set", "verify.mode=23,23", "--set", "solver.nev=2",
                     "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_VERIFY
    assert "mode miss" in out.err


def test_cost_model(capsys, tmp_path):
    code, out = run(["cost-model", "--N", "1e6", "--p", "4", "--nev", "500", "--nit", "1"], capsys)
    assert code == 0
    rows = list(csv.DictReader(out.out.splitlines()))
    assert [int(r["count"]) for r in rows] == [1, 500, 2500, 500000]


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("RIGA_QEP_THREADS", "1")
    assert cli.main(["cost-model", "--N", "100", "--p", "3", "--nev", "0", "--nit", "1"]) == 0
    monkeypatch.setenv("RIGA_QEP_THREADS", "0")
    assert cli.main(["cost-model", "--N", "100", "--p", "3", "--nev", "0", "--nit", "1"]) == cli.EXIT_CONFIG
