import csv
import json

import numpy as np
import pytest
from scipy.stats import unitary_group

from ctxsim import cli, tensorio, umps


def _run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_solve_commuting_product(tmp_path, capsys):
    code, out = _run(capsys, "solve", "--witness", 1, "--bond-dim", 1, "--commuting", "--out", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "trajectory.csv")))
    assert float(rows[0]["energy_density"]) == pytest.approx(-6.0, abs=1e-9)
    assert umps.load_umps(tmp_path / "umps_000.json").D == 1


def test_solve_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, _ = _run(capsys, "solve", "--witness", 2, "--bond-dim", 2, "--seed", 3, "--w", "0.1,0.2,0.3,0.4,0.5,0.6",
                       "--solver-tol", 1e-6, "--out", tmp_path / name)
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_solve_rejects_bad_bond_dim(tmp_path, capsys):
    code, out = _run(capsys, "solve", "--witness", 1, "--bond-dim", 10, "--out", tmp_path)
    assert code != 0
    assert "bond dimension" in out.err


def test_solve_reports_non_convergence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"solver_tol": 1e-30}))
    code, out = _run(capsys, "solve", "--witness", 3, "--bond-dim", 2, "--config", cfg, "--w", "0.1,0.2,0.3,0.4,0.5,0.6",
                     "--out", tmp_path / "o")
    assert code == 2
    assert "did not converge" in out.err


def test_config_overridden_by_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 4, "points": 7}))
    args = cli.build_parser().parse_args(["solve", "--witness", "1", "--config", str(cfg), "--seed", "9"])
    settings = cli._settings(args)
    assert settings["seed"] == 9
    assert settings["points"] == 7


def test_descend_writes_trajectory(tmp_path, capsys):
    code, out = _run(capsys, "solve", "--witness", 3, "--bond-dim", 2, "--descend", "--points", 3, "--seed", 1,
                     "--lambda-x", "1,1,-1", "--lambda-y", "1,-1,-1", "--solver-tol", 1e-6, "--out", tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "trajectory.csv")))
    assert 1 <= len(rows) <= 3
    energies = [float(r["energy_density"]) for r in rows]
    assert all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))
    assert code in (0, 2)


def test_purify_product_gives_zero_state(tmp_path, capsys):
    A = np.zeros((1, 3, 1), dtype=complex)
    A[0, 0, 0] = 1
    umps.save_umps(tmp_path / "u.json", umps.UmpsState(A))
    code, out = _run(capsys, "purify", "--umps", tmp_path / "u.json", "--out", tmp_path)
    assert code == 0
    assert "trace_distance < 1e-10: PASS" in out.out
    psi = tensorio.read_tensors(tmp_path / "target.json")[0]["psi"]
    assert psi.size == 2**14
    assert abs(psi[0]) == pytest.approx(1.0)


def test_purify_random_d7(tmp_path, capsys, rng):
    umps.save_umps(tmp_path / "u.json", umps.UmpsState(umps.random_tensor(7, 3, rng)))
    code, out = _run(capsys, "purify", "--umps", tmp_path / "u.json", "--out", tmp_path)
    assert code == 0
    assert "trace_distance < 1e-10: PASS" in out.out


def test_purify_rejects_d10(tmp_path, capsys, rng):
    umps.save_umps(tmp_path / "u.json", umps.UmpsState(umps.random_tensor(10, 3, rng)))
    code, out = _run(capsys, "purify", "--umps", tmp_path / "u.json", "--out", tmp_path)
    assert code != 0
    assert "exceeds" in out.err


def test_vqa_csv(tmp_path, capsys, rng):
    v = rng.normal(size=2**14) + 0j
    tensorio.write_tensors(tmp_path / "t.json", {"psi": v / np.linalg.norm(v)}, {"witness_id": 2, "D": 5})
    code, _ = _run(capsys, "vqa", "--target", tmp_path / "t.json", "--layers", 1, "--iters", 3, "--repeats", 2,
                   "--seed", 1, "--out", tmp_path / "v.csv")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "v.csv")))
    assert list(rows[0]) == cli.VQA_COLUMNS
    assert sum(r["iteration"] not in ("final",) for r in rows) == 2 * 3
    summary = rows[-1]
    assert summary["repeat"] == "mean"
    finals = [float(r["nlf"]) for r in rows if r["iteration"] == "final" and r["repeat"] != "mean"]
    assert float(summary["nlf"]) == pytest.approx(np.mean(finals))
    first = (tmp_path / "v.csv").read_bytes()
    _run(capsys, "vqa", "--target", tmp_path / "t.json", "--layers", 1, "--iters", 3, "--repeats", 2, "--seed", 1,
         "--out", tmp_path / "v.csv")
    assert (tmp_path / "v.csv").read_bytes() == first


def test_vqa_rejects_unnormalised_target(tmp_path, capsys):
    tensorio.write_tensors(tmp_path / "t.json", {"psi": np.ones(2**14)})
    code, out = _run(capsys, "vqa", "--target", tmp_path / "t.json", "--out", tmp_path / "v.csv")
    assert code != 0


def test_compile_identity_and_random(tmp_path, capsys, rng):
    tensorio.write_tensors(tmp_path / "i.json", {"U": np.eye(9)})
    code, out = _run(capsys, "compile", "--unitary", tmp_path / "i.json", "--out", tmp_path / "i.txt")
    assert code == 0
    assert (tmp_path / "i.txt").read_text() == ""
    assert "residual = 0.000e+00" in out.out
    tensorio.write_tensors(tmp_path / "u.json", {"U": unitary_group.rvs(9, random_state=rng)})
    code, out = _run(capsys, "compile", "--unitary", tmp_path / "u.json", "--out", tmp_path / "u.txt")
    assert code == 0
    assert "residual < 1e-8: PASS" in out.out
    assert "primitives = " in out.out


def test_compile_rejects_non_unitary(tmp_path, capsys):
    tensorio.write_tensors(tmp_path / "b.json", {"U": 2 * np.eye(9)})
    code, out = _run(capsys, "compile", "--unitary", tmp_path / "b.json", "--out", tmp_path / "b.txt")
    assert code != 0
    assert "not unitary" in out.err


def test_reproduce_smoke_and_resume(tmp_path, capsys):
    argv = ["reproduce", "--witness", 4, "--bond-dims", 2, "--points", 2, "--layers", 1, 2, "--iters", 3,
            "--repeats", 2, "--lambda-x", "1,1,-1", "--lambda-y", "1,-1,-1", "--solver-tol", 1e-6, "--out", tmp_path]
    code, _ = _run(capsys, *argv)
    assert code == 0
    first = (tmp_path / "reproduce.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "reproduce.csv")))
    assert {r["layers"] for r in rows} == {"1", "2"}
    # A second run resumes from the checkpoints and reproduces the CSV.
    code, _ = _run(capsys, *argv)
    assert code == 0
    assert (tmp_path / "reproduce.csv").read_bytes() == first


def test_workers_env(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli.workers() == 3
    monkeypatch.setenv(cli.WORKERS_ENV, "x")
    with pytest.raises(cli.CliError):
        cli.workers()
