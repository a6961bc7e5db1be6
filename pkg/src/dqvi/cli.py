"""Command-line entry point ``dqvi``.

Verbs
-----
run          integrate a configured problem and write trajectory.csv,
             diagnostics.csv and summary.json
convergence  repeat the run at N, 2N, ... and write convergence.csv
validate     audit the declared constants and margins

Exit codes: 0 success, 1 step failure or failed validation, 2 unusable
configuration, 3 contraction margin violated (refused before stepping).
"""

import argparse
import os
import sys
import time
import warnings

from .builtin import exact_linear_solution
from .config import ConfigError, load_config
from .core import contraction_constants, validate_hypotheses
from .errors import InfeasibleProblem, OracleInvalid, RejectedInput, StepFailure
from .history import TimeGrid
from .io import (ensure_dir, write_convergence, write_diagnostics, write_summary,
                 write_trajectory)
from .stepper import run
from .verify import OracleTrajectory, convergence_study

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_MARGIN = 3


def _margins(p):
    c = p.constants
    out = {"discrete": c.margin}
    if "theorem_margin" in (p.extras or {}):
        out["viscosity"] = p.extras["theorem_margin"]
    return out


def _summary_base(cfg, p):
    s = {"problem": p.name, "source": cfg.source, "T": cfg.T, "N": cfg.N, "seed": cfg.seed,
         "override_margin": cfg.override_margin, "constants": p.constants.as_dict(),
         "margins": _margins(p)}
    try:
        cp, cq, cr = contraction_constants(p)
        s["contraction"] = {"c_p": cp, "c_q": cq, "c_r": cr}
    except InfeasibleProblem:
        s["contraction"] = None
    return s


def _failure_dict(exc):
    return {"step": exc.step, "reason": exc.reason, "message": str(exc),
            "diagnostics": exc.diagnostics}


def _refusal(out_dir, cfg, exc, verb):
    ensure_dir(out_dir)
    write_summary(os.path.join(out_dir, "summary.json"),
                  {"status": "refused", "verb": verb, "reason": str(exc), "T": cfg.T,
                   "N": cfg.N, "seed": cfg.seed})
    print(f"refused: {exc}", file=sys.stderr)
    return EXIT_MARGIN


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "override_margin", False):
        cfg.override_margin = True
    return cfg


def cmd_run(args):
    cfg = _load(args)
    out = ensure_dir(cfg.out_dir)
    try:
        p = cfg.build_problem()
    except InfeasibleProblem as exc:
        return _refusal(out, cfg, exc, "run")
    summary = _summary_base(cfg, p)
    summary["verb"] = "run"
    grid = TimeGrid(cfg.T, cfg.N)
    try:
        traj = run(p, grid, cfg.stepper_config())
        summary["status"] = "ok"
        code = EXIT_OK
    except InfeasibleProblem as exc:
        return _refusal(out, cfg, exc, "run")
    except StepFailure as exc:
        traj = exc.trajectory
        summary["status"] = "step_failure"
        summary["failure"] = _failure_dict(exc)
        code = EXIT_FAILURE
        print(f"step failure at step {exc.step}: {exc.reason}: {exc}", file=sys.stderr)
    write_trajectory(os.path.join(out, "trajectory.csv"), p, traj)
    write_diagnostics(os.path.join(out, "diagnostics.csv"), traj)
    summary["steps_completed"] = len(traj.records)
    summary["wall_time"] = traj.wall_time
    write_summary(os.path.join(out, "summary.json"), summary)
    if cfg.verbosity >= 2:
        for r in traj.records:
            rt = max(r.ratios) if r.ratios else float("nan")
            print(f"step {r.step:5d} t={r.t:.6g} sweeps={r.sweeps} max_ratio={rt:.3g}")
    if cfg.verbosity >= 1:
        print(f"{summary['status']}: {len(traj.records)}/{cfg.N} steps in "
              f"{traj.wall_time:.3f} s -> {out}")
    return code


def _reference_for(cfg, p):
    """Closed-form reference of the linear built-in, when it applies."""
    if cfg.source != "builtin":
        return None
    params = p.extras["params"]
    try:
        exact_linear_solution(params, [0.0, cfg.T])
    except OracleInvalid:
        return None

    def reference(times):
        u, ud, w, z = exact_linear_solution(params, times)
        return OracleTrajectory(times, u[:, None], ud[:, None], w[:, None], z[:, None])

    return reference


def cmd_convergence(args):
    cfg = _load(args)
    if args.levels < 3:
        raise ConfigError("--levels must be >= 3")
    out = ensure_dir(cfg.out_dir)
    try:
        p = cfg.build_problem()
    except InfeasibleProblem as exc:
        return _refusal(out, cfg, exc, "convergence")
    reference = None
    if cfg.source == "builtin" and cfg.builtin == "linear":
        reference = _reference_for(cfg, p)
    summary = _summary_base(cfg, p)
    summary.update(verb="convergence", levels=args.levels,
                   comparison="exact" if reference is not None else "successive")
    start = time.perf_counter()
    try:
        table = convergence_study(p, cfg.N, args.levels, cfg.stepper_config(), reference)
        summary["status"] = "ok"
        code = EXIT_OK
    except StepFailure as exc:
        table = exc.table
        summary["status"] = "step_failure"
        summary["failure"] = _failure_dict(exc)
        summary["failed_level"] = exc.level
        code = EXIT_FAILURE
        print(f"level {exc.level} failed at step {exc.step}: {exc.reason}", file=sys.stderr)
    summary["wall_time"] = time.perf_counter() - start
    summary["table"] = {"N": table.N, "differences": table.differences,
                        "orders": table.orders, "exact": table.exact}
    write_convergence(os.path.join(out, "convergence.csv"), table, cfg.T)
    write_summary(os.path.join(out, "summary.json"), summary)
    if cfg.verbosity >= 1:
        for k, (N, d) in enumerate(zip(table.N, table.differences)):
            order = "" if k == 0 else ("exact" if table.exact else f"{table.orders[k - 1]:.4f}")
            print(f"N={N:6d} difference={d:.6e} {order}")
    return code


def cmd_validate(args):
    cfg = _load(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = cfg.build_problem(override_margin=True)
    rep = validate_hypotheses(p, samples=cfg.validate_samples, rng_seed=cfg.seed)
    lines = rep.lines()
    ok = rep.passed
    if "theorem_margin" in (p.extras or {}):
        m = p.extras["model"]
        tm = p.extras["theorem_margin"]
        good = tm > 0
        ok = ok and good
        lines.append(f"{'pass' if good else 'FAIL'}  {'m_C > |mu|_inf Lp + Lp':<30} "
                     f"m_C={m.m_visc:.6g} |mu|_inf={m.mu_max():.6g} Lp={m.Lp:.6g} "
                     f"margin={tm:.6g}")
    for line in lines:
        print(line)
    failed = [c.name for c in rep.failed()]
    if rep.margin <= 0:
        failed.append("margin m_C - alpha_1")
    if "theorem_margin" in (p.extras or {}) and p.extras["theorem_margin"] <= 0:
        failed.append("m_C > |mu|_inf Lp + Lp")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAILURE


def build_parser():
    ap = argparse.ArgumentParser(prog="dqvi", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--seed", type=int, default=None, help="override [run] seed")
    common.add_argument("--override-margin", action="store_true",
                        help="step even when the contraction margin is violated")
    r = sub.add_parser("run", parents=[common], help="integrate one configuration")
    r.add_argument("--out", default=None, help="output directory")
    c = sub.add_parser("convergence", parents=[common], help="time-step refinement study")
    c.add_argument("--out", default=None, help="output directory")
    c.add_argument("--levels", type=int, default=3, help="number of grids (>= 3)")
    sub.add_parser("validate", parents=[common], help="audit constants and margins")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "convergence": cmd_convergence, "validate": cmd_validate}
    try:
        return handlers[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleProblem as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_MARGIN
    except (RejectedInput, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
