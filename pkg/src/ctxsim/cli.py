"""Command-line driver: ground states, purification, VQA, compilation and
the end-to-end reproduction pipeline.

Every command is deterministic given its inputs and ``--seed``.  Numeric
defaults can be overridden by a JSON config file (``--config``); explicit
flags override the config.  The worker count for parallel VQA repeats is
read from ``CTXSIM_WORKERS`` (default 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import circuit, encode, oracle, purify, tensorio, umps
from .hamiltonian import ObservableParams, get_witness, hamiltonian_term, load_witness, to_mpo

log = logging.getLogger("ctxsim")

WORKERS_ENV = "CTXSIM_WORKERS"

DEFAULTS = {
    "bond_dim": 5,
    "seed": 0,
    "points": 60,
    "starts": 1,
    "step": 0.05,
    "fd_step": 1e-4,
    "solver_tol": 1e-8,
    "layers": [1, 2],
    "iters": 500,
    "repeats": 10,
    "lr": 0.01,
    "stride": 1,
}

TRAJECTORY_COLUMNS = ["point_index", "w1", "w2", "w3", "w4", "w5", "w6", "energy_density"]
VQA_COLUMNS = ["witness_id", "point_index", "D", "layers", "repeat", "iteration", "nlf", "energy_density", "seed"]
REPRODUCE_COLUMNS = ["witness_id", "point_index", "D", "layers", "energy_density", "mean_nlf", "std_nlf", "repeats"]


class CliError(RuntimeError):
    """Failure that maps to a non-zero exit status."""


def workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise CliError(f"{WORKERS_ENV} must be an integer") from None


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _settings(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _witness(args):
    if getattr(args, "witness_file", None):
        return load_witness(args.witness_file, witness_id=args.witness or 0)
    if args.witness is None:
        raise CliError("one of --witness or --witness-file is required")
    return get_witness(args.witness)


def _signature(text: str | None):
    if text is None:
        return None
    parts = tuple(int(v) for v in text.split(","))
    if len(parts) != 3:
        raise CliError(f"signature {text!r} needs three comma-separated entries")
    return parts


def _schedule(cfg) -> umps.DescentSchedule:
    return umps.DescentSchedule(step=cfg["step"], points=cfg["points"], fd_step=cfg["fd_step"],
                                solver_tol=cfg["solver_tol"])


# --------------------------------------------------------------------------
# solve


def _descend(witness, cfg, args, out: Path, tag: str = ""):
    """Best-of-starts descent with per-point checkpoints; returns the trajectory
    as a list of (W, state, energy) loaded from disk so resumes are exact."""
    schedule = _schedule(cfg)
    ckpt = out / f"trajectory{tag}.json"
    if ckpt.exists():
        log.info("resuming from %s", ckpt)
        return _load_trajectory(out, tag)
    lx, ly = _signature(args.lambda_x), _signature(args.lambda_y)
    signatures = None if lx is None and ly is None else [(lx or (1, 1, -1), ly or (1, 1, -1))]
    runs = umps.descent_search(witness, cfg["bond_dim"], starts=cfg["starts"], seed=cfg["seed"],
                               signatures=signatures, schedule=schedule)
    best = min(runs, key=lambda r: r.final_energy)
    points = []
    for k, pt in enumerate(best.trajectory):
        path = out / f"umps{tag}_{k:03d}.json"
        umps.save_umps(path, pt.state, {"witness_id": witness.id, "W": pt.W, "energy_density": pt.energy,
                                        "lambda_x": best.params.lambda_x, "lambda_y": best.params.lambda_y,
                                        "point_index": k})
        points.append({"index": k, "W": [float(x) for x in pt.W], "energy_density": float(pt.energy),
                       "file": path.name, "converged": bool(pt.converged)})
    ckpt.write_text(json.dumps({"witness_id": witness.id, "start": best.start, "seed": best.seed,
                                "lambda_x": list(best.params.lambda_x), "lambda_y": list(best.params.lambda_y),
                                "points": points}, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return _load_trajectory(out, tag)


def _load_trajectory(out: Path, tag: str = ""):
    data = json.loads((out / f"trajectory{tag}.json").read_text(encoding="utf-8"))
    return data, [(np.array(p["W"]), umps.load_umps(out / p["file"]), p["energy_density"]) for p in data["points"]]


def cmd_solve(args) -> int:
    cfg = _settings(args)
    witness = _witness(args)
    D = cfg["bond_dim"]
    if not 1 <= D <= 9:
        raise CliError("bond dimension must be in 1..9")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.descend:
        data, traj = _descend(witness, cfg, args, out)
        rows = [[k] + [float(x) for x in W] + [float(e)] for k, (W, _, e) in enumerate(traj)]
        _write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, rows)
        last = data["points"][-1]
        print(f"witness {witness.id} D={D}: {len(traj)} points, final energy density {last['energy_density']:.10f}")
        if not last["converged"]:
            print("solver did not reach its stationarity tolerance at the final point", file=sys.stderr)
            return 2
        return 0

    if args.commuting:
        setup = oracle.noncontextual_setup(witness)
        params = setup.params
        init = setup.A if setup.A.shape[0] == D else None
    else:
        w = np.zeros(6) if args.w is None else np.array([float(v) for v in args.w.split(",")])
        if w.size != 6:
            raise CliError("--w needs six comma-separated numbers")
        params = ObservableParams(w[:3], w[3:], _signature(args.lambda_x) or (1, 1, -1),
                                  _signature(args.lambda_y) or (1, 1, -1))
        init = None
    term = hamiltonian_term(witness, params)
    mpo = to_mpo(term)
    rng = np.random.default_rng(cfg["seed"])
    best = None
    for k in range(max(1, cfg["starts"])):
        res = umps.ground_state(mpo, D, init=init if k == 0 else None, tol=cfg["solver_tol"], rng=rng, h3=term.h3)
        if best is None or res.energy < best.energy:
            best = res
    meta = {"witness_id": witness.id, "W": params.W, "energy_density": best.energy,
            "lambda_x": params.lambda_x, "lambda_y": params.lambda_y, "point_index": 0}
    umps.save_umps(out / "umps_000.json", best.state, meta)
    _write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, [[0] + [float(x) for x in params.W] + [float(best.energy)]])
    print(f"witness {witness.id} D={D}: energy density {best.energy:.12f} (residual {best.residual:.2e})")
    if not best.converged:
        print(f"solver did not converge: residual {best.residual:.3e} > tol {cfg['solver_tol']:.1e}", file=sys.stderr)
        return 2
    return 0


# --------------------------------------------------------------------------
# purify


def purify_state(state: umps.UmpsState):
    """Purified MPS, encoded 14-qubit target and the trace-distance check."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", umps.DegenerateTransferWarning)
        A = umps.normalize(state.A).A
    fp = umps.fixed_points(A)
    mps = purify.purify(A, fp)
    psi = mps.to_dense()
    rho = purify.reduced_middle(psi)
    dist = 0.5 * float(np.abs(np.linalg.eigvalsh(rho - umps.rho3(A, fp))).sum())
    target = encode.encode_state(psi / np.linalg.norm(psi))
    return mps, target, dist


def cmd_purify(args) -> int:
    state = umps.load_umps(args.umps)
    if state.D > purify.MAX_BOND:
        raise CliError(f"bond dimension {state.D} exceeds the purification bound {purify.MAX_BOND}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mps, target, dist = purify_state(state)
    meta = {k: state.meta[k] for k in ("witness_id", "point_index", "energy_density") if k in state.meta}
    meta["D"] = state.D
    tensorio.write_tensors(out / "purified.json", {f"T{k}": t for k, t in enumerate(mps.tensors)}, dict(meta, kind="purified_mps"))
    tensorio.write_tensors(out / "target.json", {"psi": target}, dict(meta, kind="state"))
    ok = dist < 1e-10
    print(f"trace_distance = {dist:.3e}")
    print(f"trace_distance < 1e-10: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 3


# --------------------------------------------------------------------------
# vqa


def _read_state(path) -> tuple[np.ndarray, dict]:
    tensors, meta = tensorio.read_tensors(path)
    if "psi" not in tensors:
        raise CliError(f"{path} does not hold a state vector")
    psi = tensors["psi"].reshape(-1)
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > 1e-8:
        raise CliError(f"target state has norm {nrm:.6f}")
    return psi, meta


def run_vqa(target, layers: int, iters: int, repeats: int, seed: int, lr: float):
    cfg = circuit.AdamConfig(lr=lr)
    return circuit.optimize(target, layers=layers, iterations=iters, seed=seed, repeats=repeats, config=cfg,
                            workers=workers())


def cmd_vqa(args) -> int:
    cfg = _settings(args)
    target, meta = _read_state(args.target)
    layers = cfg["layers"] if isinstance(cfg["layers"], list) else [cfg["layers"]]
    rows = []
    failed = 0
    for K in layers:
        res = run_vqa(target, K, cfg["iters"], cfg["repeats"], cfg["seed"], cfg["lr"])
        for r, rep in enumerate(res.repeats):
            for it, F in enumerate(rep.trace, start=1):
                rows.append([meta.get("witness_id", ""), meta.get("point_index", ""), meta.get("D", ""), K, r, it,
                             float(F), meta.get("energy_density", ""), rep.seed])
            rows.append([meta.get("witness_id", ""), meta.get("point_index", ""), meta.get("D", ""), K, r, "final",
                         float(rep.final), meta.get("energy_density", ""), rep.seed])
            failed += rep.failed
        rows.append([meta.get("witness_id", ""), meta.get("point_index", ""), meta.get("D", ""), K, "mean", "final",
                     res.mean_final, meta.get("energy_density", ""), cfg["seed"]])
        print(f"layers={K}: mean final NLF {res.mean_final:.6e} over {len(res.repeats)} repeats")
    _write_csv(Path(args.out), VQA_COLUMNS, rows)
    if failed:
        print(f"{failed} repeat(s) hit a non-finite loss", file=sys.stderr)
    return 0


# --------------------------------------------------------------------------
# compile


def cmd_compile(args) -> int:
    tensors, _ = tensorio.read_tensors(args.unitary)
    U = tensors.get("U", next(iter(tensors.values())))
    try:
        res = encode.compile_two_qutrit(U, strict_complement=not args.local)
    except encode.NotUnitaryError as exc:
        raise CliError(f"rejected input: {exc}") from None
    except encode.CompileError as exc:
        print(f"residual < 1e-8: FAIL ({exc})")
        return 3
    Path(args.out).write_text(res.program.to_text(), encoding="utf-8")
    print(f"residual = {res.residual:.3e}")
    print(f"residual < 1e-8: {'PASS' if res.residual < 1e-8 else 'FAIL'}")
    for k, v in res.counts.items():
        print(f"{k} = {v}")
    return 0


# --------------------------------------------------------------------------
# reproduce


def cmd_reproduce(args) -> int:
    cfg = _settings(args)
    witness = _witness(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dims = args.bond_dims or [cfg["bond_dim"]]
    layers = cfg["layers"] if isinstance(cfg["layers"], list) else [cfg["layers"]]
    rows = []
    for D in dims:
        cfg_d = dict(cfg, bond_dim=D)
        data, traj = _descend(witness, cfg_d, args, out, tag=f"_D{D}")
        picked = list(range(0, len(traj), max(1, cfg["stride"])))
        if picked[-1] != len(traj) - 1:
            picked.append(len(traj) - 1)
        for k in picked:
            _W, state, energy = traj[k]
            for K in layers:
                ckpt = out / f"vqa_D{D}_p{k:03d}_L{K}.json"
                if ckpt.exists():
                    rec = json.loads(ckpt.read_text(encoding="utf-8"))
                else:
                    _, target, _ = purify_state(state)
                    res = run_vqa(target, K, cfg["iters"], cfg["repeats"], cfg["seed"], cfg["lr"])
                    finals = [float(f) for f in res.finals]
                    rec = {"finals": finals, "mean": res.mean_final,
                           "std": float(np.std([f for f in finals if np.isfinite(f)])) if finals else float("nan")}
                    ckpt.write_text(json.dumps(rec, sort_keys=True) + "\n", encoding="utf-8")
                rows.append([witness.id, k, D, K, float(energy), float(rec["mean"]), float(rec["std"]), len(rec["finals"])])
                print(f"D={D} point {k} layers={K}: energy {energy:.6f}, mean NLF {rec['mean']:.4e}")
    _write_csv(out / "reproduce.csv", REPRODUCE_COLUMNS, rows)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, witness=True):
        sp.add_argument("--config", help="JSON file overriding numeric defaults")
        sp.add_argument("--seed", type=int)
        if witness:
            sp.add_argument("--witness", type=int, help="built-in witness id 1..5")
            sp.add_argument("--witness-file", help="JSON witness definition")
            sp.add_argument("--lambda-x", help="signature of sigma_x, e.g. 1,1,-1")
            sp.add_argument("--lambda-y", help="signature of sigma_y")
            sp.add_argument("--points", type=int, help="maximum trajectory length")
            sp.add_argument("--starts", type=int, help="random starts (best endpoint kept)")
            sp.add_argument("--step", type=float)
            sp.add_argument("--fd-step", dest="fd_step", type=float)
            sp.add_argument("--solver-tol", dest="solver_tol", type=float)

    sp = sub.add_parser("solve", help="ground state (optionally with observable descent)")
    common(sp)
    sp.add_argument("--bond-dim", dest="bond_dim", type=int)
    sp.add_argument("--descend", action="store_true")
    sp.add_argument("--commuting", action="store_true", help="diagonal observables attaining the classical bound")
    sp.add_argument("--w", help="six comma-separated observable parameters")
    sp.add_argument("--out", default="solve_out")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("purify", help="purify a stored uMPS and encode the target state")
    sp.add_argument("--umps", required=True)
    sp.add_argument("--out", default="purify_out")
    sp.set_defaults(func=cmd_purify)

    sp = sub.add_parser("vqa", help="optimise the layered ansatz towards a target state")
    common(sp, witness=False)
    sp.add_argument("--target", required=True)
    sp.add_argument("--layers", type=int, nargs="+")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--out", default="vqa.csv")
    sp.set_defaults(func=cmd_vqa)

    sp = sub.add_parser("compile", help="compile a two-qutrit unitary to a qubit gate program")
    sp.add_argument("--unitary", required=True)
    sp.add_argument("--out", default="program.txt")
    sp.add_argument("--local", action="store_true",
                    help="emit uncontrolled single-qutrit gates (exact on the encoded subspace only)")
    sp.set_defaults(func=cmd_compile)

    sp = sub.add_parser("reproduce", help="trajectory, purification and VQA end to end")
    common(sp)
    sp.add_argument("--bond-dim", dest="bond_dim", type=int)
    sp.add_argument("--bond-dims", type=int, nargs="+")
    sp.add_argument("--layers", type=int, nargs="+")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--stride", type=int, help="run VQA on every stride-th trajectory point")
    sp.add_argument("--out", default="reproduce_out")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
