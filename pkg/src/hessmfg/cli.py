"""Command-line interface: ``hessmfg {solve,verify,envelope,explicit,probe}``.

Exit codes: 0 success, 1 a check failed, 2 the solver did not converge,
64 usage or configuration error, 65 malformed input data.  Diagnostics go to
stderr; stdout receives a single summary line.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import COMMANDS, ConfigError, RunConfig, parse_config
from .energy import EnergySpec
from .envelope import (
    ConvexRegionError,
    DEFAULT_N,
    build_minimizing_sequence,
    convex_envelope_1d,
    envelope_coercivity_check,
    noncontact_windows,
    relaxed_operator,
)
from .explicit1d import (
    AdmissibilityError,
    ExplicitParams,
    energy_quadrature,
    explicit_energy,
    explicit_m,
    explicit_pair,
    explicit_u,
    explicit_uxx,
)
from .grid import Grid, grid_function_from_dict, grid_function_to_dict, hessian
from .mfg import MFGPair, assemble_density, verify_weak_solution
from .minimize import solve
from .operators import get_operator
from .probe import StudyError, StudyPipeline, refinement_study

logger = logging.getLogger("hessmfg")

EXIT_OK, EXIT_FAIL, EXIT_NOCONV, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 64, 65
RECORD_FORMAT = "hessmfg-solution"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="extra config line (repeatable, applied after --config)")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--trace", action="store_true", help="write trace.csv with solver progress")
    common.add_argument("--seed", type=int, default=None, help="seed for sampled test families")
    common.add_argument("--threads", type=int, default=None,
                        help="native thread limit (fallback: HESSMFG_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="hessmfg", description="Hessian-energy minimization and MFG verification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[common], help="minimize, assemble the density, verify")
    p = sub.add_parser("verify", parents=[common], help="verify a stored (u, m) pair")
    p.add_argument("solution", nargs="?", help="solution.json written by solve or explicit")
    sub.add_parser("envelope", parents=[common], help="convex envelope, relaxed solve, laminates")
    sub.add_parser("explicit", parents=[common], help="tabulate the closed-form family")
    sub.add_parser("probe", parents=[common], help="refinement study of interior norms")
    return parser


# --- output helpers --------------------------------------------------------


def _num(x) -> str:
    return "%.17g" % x


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _pair_rows(pair: MFGPair):
    grid = pair.grid
    coords = grid.interior_mesh()
    u = pair.u.values[grid.interior]
    cols = [c.ravel() for c in coords] + [u.ravel(), pair.m.ravel()]
    return zip(*cols)


def _pair_header(d: int):
    return (["x"] if d == 1 else ["x", "y"]) + ["u", "m"]


def solution_record(pair: MFGPair, cfg_op: dict, kind: str, p: int, extra: dict) -> dict:
    return {
        "format": RECORD_FORMAT,
        "version": 1,
        "operator": cfg_op,
        "kind": kind,
        "p": p,
        "u": grid_function_to_dict(pair.u),
        "m": [float(v) for v in pair.m.ravel()],
        "coupling": pair.coupling,
        **extra,
    }


def load_record(path) -> tuple:
    """Return ``(pair, record)`` from a solution file; malformed input raises ``DataError``."""
    try:
        rec = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read solution {path}: {exc}") from None
    try:
        if rec.get("format") != RECORD_FORMAT:
            raise ValueError("not a solution record")
        u = grid_function_from_dict(rec["u"])
        m = np.array(rec["m"], dtype=float)
        if m.size != int(np.prod(u.grid.interior_shape)):
            raise ValueError("density size does not match the grid interior")
        pair = MFGPair(u, m.reshape(u.grid.interior_shape), rec.get("coupling", "power"), int(rec["p"]))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise DataError(f"malformed solution {path}: {exc}") from None
    return pair, rec


def _op_record(cfg: RunConfig) -> dict:
    return {"name": cfg.get("operator"), "args": cfg.operator_args()}


def _summary(line: str) -> None:
    print(line, file=sys.stdout)


# --- commands ----------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out: Path, trace: bool) -> int:
    spec = cfg.energy_spec()
    grid = cfg.grid()
    g = cfg.boundary(grid.d)
    opts = cfg.solve_options()
    rows = []
    cb = (lambda it, E, gs, t: rows.append((it, E, gs, t))) if trace else None
    res = solve(spec, g, grid, opts, trace=cb)
    if trace:
        write_csv(out / "trace.csv", ["iter", "energy", "grad_sup", "step"], rows)
    solver = {"converged": res.converged, "iterations": res.iterations, "energy": res.energy,
              "grad_sup": res.grad_sup, "raw_grad_sup": res.raw_grad_sup,
              "message": res.message, "n_evals": res.n_evals, "measure": opts.measure,
              "grad_tol": opts.grad_tol}
    if not res.converged:
        logger.error("solver did not converge: %s (grad_sup=%.3e after %d iterations)",
                     res.message, res.grad_sup, res.iterations)
        write_json(out / "solver.json", solver)
        _summary(f"solve: NOT converged after {res.iterations} iterations "
                 f"(grad_sup={res.grad_sup:.3e}); see {out}")
        return EXIT_NOCONV
    try:
        pair = assemble_density(res.u, spec)
    except ValueError as exc:
        logger.error("density assembly failed: %s", exc)
        return EXIT_FAIL
    tol_hj, tol_fp = cfg.get("tol_hj", 1e-6), cfg.get("tol_fp", 1e-4)
    report = verify_weak_solution(pair, spec, tol_hj, tol_fp, seed=cfg.seed)
    rec = solution_record(pair, _op_record(cfg), spec.kind, spec.p, {
        "boundary": cfg.get("boundary"), "solver": solver, "seed": cfg.seed,
        "tol_hj": tol_hj, "tol_fp": tol_fp,
    })
    write_json(out / "solution.json", rec)
    write_csv(out / "pair.csv", _pair_header(grid.d), _pair_rows(pair))
    write_json(out / "verification.json", report.to_dict())
    status = "pass" if report.passed else "FAIL"
    _summary(f"solve: converged in {res.iterations} iterations, energy={res.energy:.12g}, "
             f"grad_sup={res.grad_sup:.3e}, verification={status}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_verify(cfg: RunConfig, out: Path, solution: Optional[str], seed: Optional[int] = None) -> int:
    path = solution or cfg.get("solution")
    if not path:
        raise UsageError("verify needs a solution file (positional argument or solution = ...)")
    pair, rec = load_record(path)
    op_rec = rec.get("operator") or {}
    name = cfg.get("operator") or op_rec.get("name")
    args = cfg.operator_args() if cfg.get("operator") else dict(op_rec.get("args") or {})
    try:
        op = get_operator(name, **args)
        spec = EnergySpec(op, cfg.get("p", rec.get("p", 2)), cfg.get("kind", rec.get("kind", "power")))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"solution {path} names an unusable operator: {exc}") from None
    tol_hj = cfg.get("tol_hj", rec.get("tol_hj", 1e-6))
    tol_fp = cfg.get("tol_fp", rec.get("tol_fp", 1e-4))
    # reuse the stored test-family seed unless one is given explicitly
    seed = seed if seed is not None else int(rec.get("seed", cfg.seed))
    report = verify_weak_solution(pair, spec, tol_hj, tol_fp, seed=seed)
    write_json(out / "verification.json", report.to_dict())
    flags = ",".join(f"{k}={'pass' if v else 'FAIL'}" for k, v in
                     zip(("m>=0", "hj", "fp"), report.flags))
    _summary(f"verify: {'pass' if report.passed else 'FAIL'} ({flags}; "
             f"hj={report.hj_residual_sup:.3e}, fp={report.fp_residual_max:.3e})")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_envelope(cfg: RunConfig, out: Path, trace: bool) -> int:
    op = cfg.operator()
    p = cfg.get("p", 2)
    table = convex_envelope_1d(op, cfg.get("z_min"), cfg.get("z_max"), cfg.get("N", DEFAULT_N))
    table.to_csv(out / "envelope.csv")
    windows = noncontact_windows(table)
    coercive = envelope_coercivity_check(table, op.lam)
    report = {"operator": _op_record(cfg), "p": p, "z_min": table.z_min, "z_max": table.z_max,
              "N": table.N, "windows": windows, "n_vertices": int(table.vertices.size),
              "coercivity": vars(coercive)}
    identity = not windows
    if identity:
        logger.warning("identity envelope: %s is convex on [%g, %g]", op.name, table.z_min, table.z_max)
    report["identity"] = identity
    code = EXIT_OK
    if "grid.n" in cfg:
        spec = EnergySpec(relaxed_operator(table, op.lam, op.satisfies_A3), p, cfg.get("kind", "power"))
        grid = Grid(1, cfg.get("grid.n"))
        z_bar = cfg.get("z_bar", 0.0)
        g = cfg.boundary(1) if "boundary" in cfg else (lambda x: 0.5 * z_bar * x ** 2)
        rows = []
        cb = (lambda it, E, gs, t: rows.append((it, E, gs, t))) if trace else None
        res = solve(spec, g, grid, cfg.solve_options(), trace=cb)
        if trace:
            write_csv(out / "trace.csv", ["iter", "energy", "grad_sup", "step"], rows)
        z = hessian(res.u).xx
        report["relaxed_solve"] = {"n": grid.n, "converged": res.converged, "energy": res.energy,
                                   "iterations": res.iterations, "grad_sup": res.grad_sup,
                                   "out_of_range": table.out_of_range(z)}
        if not res.converged:
            logger.error("relaxed solve did not converge: %s", res.message)
            code = EXIT_NOCONV
    if "z_bar" in cfg and not identity:
        ns = cfg.get("laminate_n", [4, 8, 16, 32, 64])
        try:
            seqs = [build_minimizing_sequence(op, p, cfg.get("z_bar"), n, table) for n in ns]
        except ConvexRegionError as exc:
            logger.error("%s", exc)
            write_json(out / "relaxation.json", report)
            _summary(f"envelope: {exc}")
            return EXIT_FAIL
        write_csv(out / "gaps.csv", ["n", "energy", "relaxed_energy", "gap", "sup_error"],
                  [(s.n, s.energy, s.relaxed_energy, s.gap, s.sup_error) for s in seqs])
        seqs[-1].to_csv(out / "laminate.csv")
        report["laminate"] = [s.summary() for s in seqs]
    write_json(out / "relaxation.json", report)
    note = "identity envelope" if identity else f"{len(windows)} non-contact window(s)"
    _summary(f"envelope: {op.name} on [{table.z_min:g}, {table.z_max:g}], {note}, "
             f"coercivity={'pass' if coercive.passed else 'FAIL'}")
    return code


def cmd_explicit(cfg: RunConfig, out: Path) -> int:
    prm = ExplicitParams(cfg.get("A"), cfg.get("B"), cfg.get("C", 0.0), cfg.get("D", 0.0), cfg.get("p"))
    if not prm.is_admissible():
        raise UsageError(f"inadmissible parameters {prm.to_dict()}")
    convention = cfg.get("convention", "consistent")
    grid = Grid(1, cfg.get("grid.n", 401))
    x = grid.axis(0)
    write_csv(out / "explicit.csv", ["x", "u", "m", "u_xx"],
              zip(x, explicit_u(prm, x), explicit_m(prm, x, convention), explicit_uxx(prm, x)))
    E = explicit_energy(prm)
    E_q = energy_quadrature(prm, cfg.get("panels", 10_000))
    pair = explicit_pair(prm, grid, convention)
    spec = EnergySpec(get_operator("power_1d", p=prm.p), prm.p)
    tol_hj, tol_fp = cfg.get("tol_hj", 1e-3), cfg.get("tol_fp", 1e-3)
    report = verify_weak_solution(pair, spec, tol_hj, tol_fp, seed=cfg.seed)
    rec = solution_record(pair, {"name": "power_1d", "args": {"p": prm.p}}, "power", prm.p,
                          {"params": prm.to_dict(), "seed": cfg.seed, "tol_hj": tol_hj, "tol_fp": tol_fp})
    write_json(out / "solution.json", rec)
    agree = abs(E - E_q) <= 1e-8
    diverge = prm.p != 2
    if diverge and convention == "inverse_p":
        logger.warning("density exponent 1/p differs from (p-1)/p for p=%d; "
                       "the pair will not satisfy the coupling identity", prm.p)
    write_json(out / "explicit.json", {
        "params": prm.to_dict(), "convention": convention, "conventions_diverge": diverge,
        "energy": E, "energy_quadrature": E_q, "energy_agree": agree,
        "verification": report.to_dict(),
    })
    _summary(f"explicit: p={prm.p} energy={E:.12g} (quadrature {E_q:.12g}), "
             f"verification={'pass' if report.passed else 'FAIL'}")
    return EXIT_OK if (agree and report.passed) else EXIT_FAIL


def cmd_probe(cfg: RunConfig, out: Path) -> int:
    spec = cfg.energy_spec()
    d = cfg.get("grid.d") or spec.operator.dim
    grids = [cfg.grid(n=n, d=d) for n in cfg.get("levels")]
    pipe = StudyPipeline(spec, cfg.boundary(d), cfg.solve_options(), cfg.get("fraction", 0.5), cfg.get("q"))
    try:
        rep = refinement_study(pipe, grids)
    except StudyError as exc:
        logger.error("%s", exc)
        _summary(f"probe: {exc}")
        return EXIT_NOCONV
    rep.to_csv(out / "study.csv")
    summary = rep.to_dict()
    summary["stable"] = {k: v.stable() for k, v in rep.studies.items()}
    write_json(out / "study.json", summary)
    h = rep["hessian_lq"]
    _summary(f"probe: {len(grids)} levels, hessian L^{rep.q:g} ratios "
             + ", ".join(f"{r:.4f}" for r in h.ratios)
             + f", m L^{rep.q_density:g} ratios " + ", ".join(f"{r:.4f}" for r in rep["m_lq"].ratios))
    return EXIT_OK


# --- entry point -------------------------------------------------------------


def _thread_count(arg: Optional[int]) -> Optional[int]:
    if arg is not None:
        return arg
    env = os.environ.get("HESSMFG_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"HESSMFG_THREADS must be an integer, got {env!r}") from None
    return None


def _config_text(args) -> str:
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    extra = []
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        extra.append(item)
    return text + ("\n" if text and not text.endswith("\n") else "") + "\n".join(extra)


def run(args) -> int:
    threads = _thread_count(args.threads)
    if threads is not None and threads < 1:
        raise UsageError("--threads must be positive")
    cfg = parse_config(_config_text(args), args.command, args.seed or 0, args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(limits=threads):
        if args.command == "solve":
            return cmd_solve(cfg, out, args.trace)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.solution, args.seed)
        if args.command == "envelope":
            return cmd_envelope(cfg, out, args.trace)
        if args.command == "explicit":
            return cmd_explicit(cfg, out)
        return cmd_probe(cfg, out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # own handler: basicConfig is a no-op when the host already configured logging
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.propagate = False
    logger.setLevel(logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return run(args)
    except (ConfigError, UsageError) as exc:
        print(f"hessmfg: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"hessmfg: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, AdmissibilityError) as exc:
        print(f"hessmfg: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
