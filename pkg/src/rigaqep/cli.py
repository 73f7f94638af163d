"""Command-line experiment runner: assemble | solve | sweep | verify | cost-model."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import multiprocessing
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .assembly import AssemblyError, QuadraticPencil, assemble_acoustic, assemble_em, export_pencil
from .config import ConfigError, ExperimentConfig, load_config
from .eig import (ConvergenceError, EigenResult, NumericalFailure, ShiftCollisionError,
                  default_ordering, krylov_invariants, solve_generalized_hermitian, solve_quadratic, write_eigenpairs)
from .oracles import (OracleError, acoustic_dispersion_roots, eigenfunction_l2_error, em_analytic,
                      eigenvalue_error, mode_overlap)
from .spaces import SpaceError, VectorSpace, build_iga_space, build_riga_space
from .sparsela import CATEGORIES, FlopCounter, SingularMatrixError, theoretical_costs

log = logging.getLogger("rigaqep")

EXIT_OK, EXIT_CONFIG, EXIT_ASSEMBLY, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4, 5


class CliFailure(Exception):
    def __init__(self, code: int, msg: str, report: "RunReport | None" = None):
        super().__init__(msg)
        self.code = code
        self.report = report


@dataclass
class RunReport:
    command: str
    config: dict
    N: int = 0
    full_N: int = 0
    nnz: int = 0
    full_nnz: int = 0
    factor_nnz_L: int = 0
    factor_nnz_U: int = 0
    counters: dict = field(default_factory=dict)
    nit: int = 0
    m: int = 0
    wall_time: float = 0.0
    eigenpairs: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    invariants: dict = field(default_factory=dict)
    status: str = "ok"

    @property
    def totals(self) -> dict:
        fl = self.counters.get("flops", {})
        return {c: fl.get(c, 0.0) for c in CATEGORIES} | {"total": sum(fl.get(c, 0.0) for c in CATEGORIES)}

    def check_totals(self):
        fl = self.counters.get("flops")
        if fl and abs(fl["total"] - sum(fl[c] for c in CATEGORIES)) > 0:
            raise AssertionError("flop total does not reconcile with per-category counts")

    def to_dict(self) -> dict:
        self.check_totals()
        return asdict(self) | {"totals": self.totals}

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, default=_json_default))
        return path


def _json_default(o):
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


# ---------------------------------------------------------------- building blocks

def build_space(cfg: ExperimentConfig) -> VectorSpace:
    kind = "div" if cfg.problem == "acoustic" else "curl"
    try:
        if cfg.discretization == "iga":
            return build_iga_space(kind, cfg.p, cfg.ne)
        return build_riga_space(kind, cfg.p, cfg.ne, cfg.riga_levels)
    except SpaceError as exc:
        raise CliFailure(EXIT_CONFIG, f"problem.levels: {exc}") from exc


def build_pencil(cfg: ExperimentConfig, keep_full: bool = False) -> QuadraticPencil:
    space = build_space(cfg)
    try:
        if cfg.problem == "acoustic":
            return assemble_acoustic(space, cfg.acoustic_material(), keep_full=keep_full)
        return assemble_em(space, cfg.em_material(), keep_full=keep_full)
    except (AssemblyError, SpaceError) as exc:
        raise CliFailure(EXIT_ASSEMBLY, f"assembly failed: {exc}") from exc


def _base_report(command, cfg, pencil: QuadraticPencil) -> RunReport:
    return RunReport(command, cfg.to_dict(), N=pencil.N, full_N=pencil.full_N, nnz=pencil.nnz,
                     full_nnz=pencil.full_nnz)


def run_solver(cfg: ExperimentConfig, pencil: QuadraticPencil, counter: FlopCounter) -> EigenResult:
    """em-nonconductive takes the generalized Hermitian path unless ``method`` forces the quadratic one."""
    s = cfg.resolved_shift
    ordering = default_ordering(pencil)
    if cfg.uses_hermitian:
        # K + lam^2 M with lam = i omega: solve -K u = omega^2 M u
        return solve_generalized_hermitian(-pencil.K, pencil.M, s.real, cfg.nev, m=cfg.m, tol=cfg.tol,
                                           counter=counter, ordering=ordering,
                                           max_restarts=cfg.max_restarts, seed=cfg.seed)
    return solve_quadratic(pencil, s, cfg.nev, m=cfg.m, tol=cfg.tol, counter=counter,
                           ordering=ordering, max_restarts=cfg.max_restarts, seed=cfg.seed,
                           scale=cfg.scale)


# Arnoldi-identity columns re-checked after every CLI solve
INVARIANT_SAMPLE = 8


def _fill_from_result(rep: RunReport, res: EigenResult, counter: FlopCounter):
    rep.counters = counter.snapshot()
    rep.nit, rep.m = res.nit, res.m
    fact = res.op.factorization
    rep.factor_nnz_L, rep.factor_nnz_U = fact.nnz_L, fact.nnz_U
    rep.eigenpairs = [p.to_dict() for p in res]
    inv = krylov_invariants(res, sample=INVARIANT_SAMPLE)
    rep.invariants = {k: float(v) for k, v in inv.items()} | {
        "fa_calls": counter.calls["fa"], "fb_calls": counter.calls["fb"], "m_times_nit": res.m * res.nit}


def solve_config(cfg: ExperimentConfig, command: str = "solve"):
    """Assemble and solve; returns ``(report, pencil, result)``. Solver failures raise CliFailure."""
    t0 = time.perf_counter()
    pencil = build_pencil(cfg)
    rep = _base_report(command, cfg, pencil)
    counter = FlopCounter()
    try:
        res = run_solver(cfg, pencil, counter)
    except ConvergenceError as exc:
        rep.counters = counter.snapshot()
        rep.eigenpairs = [p.to_dict() for p in getattr(exc, "pairs", []) or []]
        rep.status = "not converged"
        rep.wall_time = time.perf_counter() - t0
        raise CliFailure(EXIT_SOLVER, str(exc), rep) from exc
    except (ShiftCollisionError, SingularMatrixError, NumericalFailure, ValueError) as exc:
        rep.counters = counter.snapshot()
        rep.status = "solver error"
        rep.wall_time = time.perf_counter() - t0
        raise CliFailure(EXIT_SOLVER, f"solver failed: {exc}", rep) from exc
    _fill_from_result(rep, res, counter)
    rep.wall_time = time.perf_counter() - t0
    return rep, pencil, res


def _write_pairs_csv(pairs: list[dict], path: Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "re", "im", "residual"])
        for i, p in enumerate(pairs):
            w.writerow([i, repr(p["re"]), repr(p["im"]), repr(p["residual"])])


# ---------------------------------------------------------------- commands

def cmd_assemble(cfg: ExperimentConfig, out: Path) -> RunReport:
    t0 = time.perf_counter()
    pencil = build_pencil(cfg, keep_full=True)
    rep = _base_report("assemble", cfg, pencil)
    export_pencil(pencil, out, "pencil")
    export_pencil(pencil, out, "pencil_open", full=True)
    rep.wall_time = time.perf_counter() - t0
    rep.write(out / "report.json")
    return rep


def cmd_solve(cfg: ExperimentConfig, out: Path, vectors: bool = False) -> RunReport:
    try:
        rep, pencil, res = solve_config(cfg)
    except CliFailure as exc:
        if exc.report is not None:
            exc.report.write(out / "report.json")
            _write_pairs_csv(exc.report.eigenpairs, out / "eigenpairs.csv")
        raise
    write_eigenpairs(res, out / "eigenpairs.json", out / "vectors" if vectors else None)
    _write_pairs_csv(rep.eigenpairs, out / "eigenpairs.csv")
    rep.write(out / "report.json")
    return rep


SWEEP_FIELDS = ["problem", "ne", "p", "discretization", "levels", "N", "nnz", "factor_nnz_L", "nit", "m",
                "n_converged", "fa", "fb", "mv", "vv", "total", "fa_calls", "fb_calls", "identity_residual",
                "b_orthogonality", "wall_time", "status", "error"]
RATIO_FIELDS = ["ne", "p", "fa_ratio", "fb_ratio", "mv_ratio", "vv_ratio", "total_ratio"]


def _sweep_cell(cfg: ExperimentConfig) -> dict:
    row = {"problem": cfg.problem, "ne": cfg.ne, "p": cfg.p, "discretization": cfg.discretization,
           "levels": cfg.riga_levels, "status": "ok", "error": ""}
    try:
        rep, _, _ = solve_config(cfg, "sweep")
    except CliFailure as exc:
        row.update(status="failed", error=str(exc))
        rep = exc.report
    if rep is not None:
        row.update(N=rep.N, nnz=rep.nnz, factor_nnz_L=rep.factor_nnz_L, nit=rep.nit, m=rep.m,
                   n_converged=len(rep.eigenpairs), wall_time=round(rep.wall_time, 3), **rep.totals)
        row.update({k: rep.invariants[k] for k in ("fa_calls", "fb_calls", "identity_residual",
                                                    "b_orthogonality") if k in rep.invariants})
    return row


def _isolated_cell(cfg: ExperimentConfig) -> dict:
    """Run one cell in its own spawned process; a killed worker (e.g. out of memory) becomes a failed row."""
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(1, mp_context=ctx) as ex:
        try:
            return ex.submit(_sweep_cell, cfg).result()
        except BrokenProcessPool as exc:
            return {"problem": cfg.problem, "ne": cfg.ne, "p": cfg.p, "discretization": cfg.discretization,
                    "levels": cfg.riga_levels, "status": "failed", "error": f"worker died: {exc}"}


def sweep_ratios(rows: list[dict]) -> list[dict]:
    """IGA / rIGA cost ratios for every (ne, p) where both cells succeeded (>1 means rIGA is cheaper)."""
    cells = {(r["ne"], r["p"], r["discretization"]): r for r in rows if r["status"] == "ok"}
    out = []
    for (ne, p, disc), r in sorted(cells.items()):
        if disc != "iga" or (ne, p, "riga") not in cells:
            continue
        q = cells[(ne, p, "riga")]
        out.append({"ne": ne, "p": p} | {f"{c}_ratio": (r[c] / q[c] if q[c] else float("nan"))
                                          for c in ("fa", "fb", "mv", "vv", "total")})
    return out


def cmd_sweep(cfg: ExperimentConfig, out: Path, ne_list, p_list, disc_list, jobs: int = 1,
              isolate: bool = False):
    """One solve per (ne, p, discretization) cell; failed cells are recorded and skipped.

    With ``jobs > 1`` or ``isolate`` every cell runs in a fresh worker process,
    which bounds peak memory to that of a single cell.
    """
    cells = []
    for ne in ne_list:
        for p in p_list:
            for disc in disc_list:
                try:
                    cells.append(replace(cfg, ne=ne, p=p, discretization=disc))
                except ConfigError as exc:
                    raise CliFailure(EXIT_CONFIG, f"sweep cell ne={ne} p={p} {disc}: {exc}") from exc
    if jobs > 1 or isolate:
        with ThreadPoolExecutor(max(jobs, 1)) as pool:
            rows = list(pool.map(_isolated_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    ratios = sweep_ratios(rows)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv", SWEEP_FIELDS, rows)
    _write_csv(out / "sweep_ratios.csv", RATIO_FIELDS, ratios)
    return rows, ratios


def _write_csv(path: Path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def reference_mode(cfg: ExperimentConfig):
    if cfg.problem == "em-nonconductive":
        if len(cfg.mode) != 2:
            raise CliFailure(EXIT_CONFIG, "verify.mode: Maxwell modes need two indices i,j")
        return em_analytic(*cfg.mode)
    if cfg.problem == "acoustic":
        try:
            return acoustic_dispersion_roots(cfg.mode[0], cfg.branch, cfg.acoustic_material())
        except OracleError as exc:
            raise CliFailure(EXIT_VERIFY, f"verify.mode: {exc}") from exc
    raise CliFailure(EXIT_CONFIG, f"problem.problem: no oracle for {cfg.problem!r}")


VERIFY_FIELDS = ["ne", "p", "discretization", "N", "lambda_h", "lambda", "eigenvalue_rel_error",
                 "l2_error", "l2_rel_error", "overlap", "total_flops"]

# a computed pair is accepted as the requested mode only if it is this close
MODE_REL_TOL = 0.05
MODE_MIN_OVERLAP = 0.9


def verify_config(cfg: ExperimentConfig) -> dict:
    mode = reference_mode(cfg)
    if cfg.shift is None:
        # just above the target so the solver centres on it
        cfg = replace(cfg, shift=complex(mode.lam * (1 + 1e-3)))
    rep, pencil, res = solve_config(cfg, "verify")
    best = None
    for pair in res:
        lam_h = pair.lam.real if cfg.problem == "em-nonconductive" else pair.lam
        if abs(np.imag(lam_h)) > 1e-6 * abs(lam_h):
            continue
        err = eigenvalue_error(np.real(lam_h), mode.lam)
        if abs(err) > MODE_REL_TOL:
            continue
        ov = mode_overlap(pencil.space, pair.u, mode)
        if best is None or ov > best[0]:
            best = (ov, pair, err)
    if best is None or best[0] < MODE_MIN_OVERLAP:
        raise CliFailure(EXIT_VERIFY, f"mode miss: no converged eigenpair matches the reference "
                                      f"mode {cfg.mode} (lambda = {mode.lam:.6g}) near the shift", rep)
    ov, pair, err = best
    return {"ne": cfg.ne, "p": cfg.p, "discretization": cfg.discretization, "N": rep.N,
            "lambda_h": float(np.real(pair.lam)), "lambda": mode.lam, "eigenvalue_rel_error": abs(err),
            "l2_error": eigenfunction_l2_error(pencil.space, pair.u, mode),
            "l2_rel_error": eigenfunction_l2_error(pencil.space, pair.u, mode, relative=True), "overlap": ov,
            "total_flops": rep.totals["total"], "invariants": rep.invariants}


def cmd_verify(cfg: ExperimentConfig, out: Path, ne_list=None, disc_list=None) -> list[dict]:
    rows = []
    for disc in disc_list or [cfg.discretization]:
        for ne in ne_list or [cfg.ne]:
            rows.append(verify_config(replace(cfg, ne=ne, discretization=disc)))
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "verify.csv", VERIFY_FIELDS, rows)
    return rows


COST_FIELDS = ["operation", "discretization", "count", "cost_per_call", "total", "measured_calls",
               "measured_flops"]


def cmd_cost_model(N, p, nev, nit, disc, out: Path | None = None, report: dict | None = None,
                   N_riga=None) -> list[dict]:
    rows = theoretical_costs(N, p, nev, nit, disc, N_riga=N_riga)
    if report is not None:
        c = report["counters"]
        for row, cat in zip(rows, CATEGORIES):
            row["measured_calls"] = c["calls"][cat]
            row["measured_flops"] = c["flops"][cat]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "cost_model.csv", COST_FIELDS, rows)
    return rows


# ---------------------------------------------------------------- argument handling

def _int_list(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with [problem] [solver] [material] ... sections")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable), e.g. --set problem.ne=64")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="start-vector seed")
    common.add_argument("--threads", type=int, help="BLAS threads (fallback: RIGA_QEP_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="riga-qep", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("assemble", parents=[common], help="assemble and export K, C, M (Matrix Market)")
    s = sub.add_parser("solve", parents=[common], help="eigenpairs nearest the shift")
    s.add_argument("--vectors", action="store_true", help="also write eigenvectors")
    s = sub.add_parser("sweep", parents=[common], help="cost sweep over meshes / degrees / discretizations")
    s.add_argument("--ne", type=_int_list, default=None)
    s.add_argument("--p", type=_int_list, default=None)
    s.add_argument("--disc", default="iga,riga")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--isolate", action="store_true", help="run every cell in a fresh process")
    s = sub.add_parser("verify", parents=[common], help="errors against the analytic reference")
    s.add_argument("--ne", type=_int_list, default=None)
    s.add_argument("--disc", default=None)
    s = sub.add_parser("cost-model", parents=[common], help="theoretical cost table")
    s.add_argument("--N", type=float, required=True)
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--nev", type=int, required=True)
    s.add_argument("--nit", type=int, required=True)
    s.add_argument("--disc", default="iga", choices=("iga", "riga"))
    s.add_argument("--N-riga", type=float, default=None)
    s.add_argument("--report", type=Path, help="RunReport JSON with measured counters")
    return ap


def _thread_limit(n):
    if n is None:
        env = os.environ.get("RIGA_QEP_THREADS")
        n = int(env) if env else None
    if n is None:
        return None
    if n < 1:
        raise ConfigError("--threads", "must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _run(args) -> int:
    out = args.out or Path("out")
    if args.command == "cost-model":
        report = json.loads(args.report.read_text()) if args.report else None
        try:
            rows = cmd_cost_model(args.N, args.p, args.nev, args.nit, args.disc, out if args.out else None,
                                  report, args.N_riga)
        except ValueError as exc:
            raise CliFailure(EXIT_CONFIG, str(exc)) from exc
        w = csv.DictWriter(sys.stdout, fieldnames=COST_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
        return EXIT_OK
    cfg = load_config(args.config, args.set, seed=args.seed, out=str(out))
    out = Path(cfg.out)
    if args.command == "assemble":
        rep = cmd_assemble(cfg, out)
        print(f"N = {rep.N} (open space {rep.full_N}), nnz = {rep.nnz} (open space {rep.full_nnz})")
    elif args.command == "solve":
        rep = cmd_solve(cfg, out, args.vectors)
        print(f"{len(rep.eigenpairs)} eigenpairs, Nit = {rep.nit}, flops = {rep.totals['total']:.4g}")
    elif args.command == "sweep":
        disc = [d.strip() for d in args.disc.split(",")]
        rows, ratios = cmd_sweep(cfg, out, args.ne or [cfg.ne], args.p or [cfg.p], disc, args.jobs,
                                 args.isolate)
        failed = [r for r in rows if r["status"] != "ok"]
        print(f"{len(rows)} cells ({len(failed)} failed), {len(ratios)} ratio rows -> {out / 'sweep.csv'}")
    elif args.command == "verify":
        disc = [d.strip() for d in args.disc.split(",")] if args.disc else None
        rows = cmd_verify(cfg, out, args.ne, disc)
        for r in rows:
            print(f"ne={r['ne']} p={r['p']} {r['discretization']}: rel. error {r['eigenvalue_rel_error']:.3e}, "
                  f"relative L2 error {r['l2_rel_error']:.3e}")
    return EXIT_OK


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        limiter = _thread_limit(args.threads)
        try:
            return _run(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
