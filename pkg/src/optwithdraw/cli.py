"""Command line entry point: solve, sweep, simulate, check, special.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 a diagnostic
threshold was missed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import specfun as sf
from .config import ConfigError, RunConfig, ensure_output, load
from .model import ModelError, prepare
from .optimizer import BARRIER_POSITIVE, Solution, performance_jb, solve
from .simulate import ConfigInvalid, simulate_refraction

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_DIAGNOSTICS = 0, 1, 2, 3

THRESHOLDS = {
    "smooth_fit_gap": 1e-8,
    "c2_gap": 1e-6,
    "hjb_residual_max": 1e-6,
    "hjb_residual_interp": 1e-6,
    "concavity_defect": 1e-7,
    "region_mismatch": 1.0,
}
DOMINANCE_TOL = 1e-9

log = logging.getLogger("optwithdraw")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows) -> Path:
    """Header row, '.' decimals (independent of locale), '\\n' line ends."""
    path = Path(path)
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def diagnostics_failures(sol: Solution) -> list[str]:
    d = sol.diagnostics.as_dict()
    bad = []
    for k, thr in THRESHOLDS.items():
        if sol.regime != BARRIER_POSITIVE and k in ("smooth_fit_gap", "c2_gap", "concavity_defect"):
            continue
        if not d[k] <= thr:
            bad.append(f"{k}={d[k]:.3e} > {thr:g}")
    if not d["dominance_margin"] >= -DOMINANCE_TOL:
        bad.append(f"dominance_margin={d['dominance_margin']:.3e} < -{DOMINANCE_TOL:g}")
    return bad


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _model(cfg: RunConfig):
    return prepare(cfg.model, x_hi=cfg.numerics.x_hi)


def _solve(cfg: RunConfig) -> Solution:
    m = _model(cfg)
    return solve(m, cfg.numerics.x_hi, cfg.numerics.tol, cfg.numerics.grid_dx)


def run_solve(cfg: RunConfig, out: Path, quiet: bool = False) -> int:
    sol = _solve(cfg)
    out = ensure_output(out)
    fails = diagnostics_failures(sol)
    summary = sol.summary()
    summary["diagnostics_pass"] = not fails
    summary["failures"] = fails
    if "json" in cfg.output.formats:
        write_json(out / "solution.json", summary)
    if "csv" in cfg.output.formats:
        V = sol.value
        g = V.grid
        write_csv(out / "value.csv", ["x", "V", "dV", "d2V"], zip(g, V(g), V.deriv(g), V.second_deriv(g)))
        pv, pd = sol.psi.value_and_deriv(g)
        lphi = sol.phi.log_value(g)
        vphi = sol.phi.log_deriv(g)
        write_csv(out / "fundamentals.csv", ["x", "psi", "dpsi", "log_phi", "dphi_over_phi"],
                  zip(g, pv, pd, lphi, vphi))
        ifc, j0 = sol.if_curve, sol.j0
        gi = ifc.grid
        jv = np.where(gi >= 0, j0(np.maximum(gi, 0.0)), np.nan)
        jd = np.where(gi >= 0, j0.deriv(np.maximum(gi, 0.0)), np.nan)
        write_csv(out / "resolvent.csv", ["x", "I_F", "dI_F", "J0", "dJ0"],
                  zip(gi, ifc.values, ifc.derivs, jv, jd))
    if not quiet:
        print(f"regime={sol.regime} b*={sol.b_star:.10g} b_hat={sol.b_hat:.10g}")
        for f in fails:
            print(f"diagnostic failed: {f}")
    return EXIT_DIAGNOSTICS if fails else EXIT_OK


def run_sweep(cfg: RunConfig, out: Path, quiet: bool = False) -> int:
    from . import sweep as sw
    s = cfg.sweep
    cells = sw.run_sweep(cfg.model, s.f0_range, s.f1_range, s.resolution, s.workers,
                         cfg.numerics.tol, cfg.numerics.grid_dx)
    out = ensure_output(out)
    write_csv(out / "heatmap.csv", ["F0", "F1", "b_star", "regime", "b_hat", "n_roots", "error"],
              [(c.f0, c.f1, c.b_star, c.regime, c.b_hat, c.n_roots, c.error) for c in cells])
    grid = sw.as_grid(cells, s.resolution)
    errors = sum(bool(c.error) for c in cells)
    ok = np.isfinite(grid)
    summary = {
        "cells": len(cells),
        "errors": errors,
        "zero_region_connected": sw.zero_region_connected(np.where(ok, grid, -1.0)),
        "monotonicity_defect": sw.monotonicity_defect(grid),
        "max_bstar_minus_bhat": max((c.b_star - c.b_hat for c in cells if not c.error), default=0.0),
        "multiple_roots": [[c.f0, c.f1] for c in cells if c.n_roots > 1],
    }
    if "json" in cfg.output.formats:
        write_json(out / "sweep.json", summary)
    if not quiet:
        print(f"{len(cells)} cells, {errors} errors, zero region connected: {summary['zero_region_connected']}")
    return EXIT_NUMERICAL if errors else EXIT_OK


def run_simulate(cfg: RunConfig, out: Path, quiet: bool = False) -> int:
    m = _model(cfg)
    sol = solve(m, cfg.numerics.x_hi, cfg.numerics.tol, cfg.numerics.grid_dx, diagnostics=False)
    b = sol.b_star if cfg.barrier is None else float(cfg.barrier)
    est = simulate_refraction(m, b, cfg.sim)
    x0 = cfg.sim.x0
    if x0 <= 0:
        analytic = 0.0
    else:
        analytic = float(performance_jb(b, sol.psi, sol.phi, sol.if_curve, m)(x0))
    report = {
        "mean": est.mean,
        "std_error": est.std_error,
        "absorbed_fraction": est.absorbed_fraction,
        "mean_absorption_time": est.mean_absorption_time,
        "n_paths": est.n_paths,
        "tail_bound": est.tail_bound,
        "barrier": b,
        "x0": x0,
        "dt": cfg.sim.dt,
        "seed": cfg.sim.seed,
        "analytic": analytic,
        "z_score": est.z_score(analytic),
    }
    out = ensure_output(out)
    write_json(out / "report.json", report)
    if not quiet:
        print(f"mean={est.mean:.8g} se={est.std_error:.3g} analytic={analytic:.8g} z={report['z_score']:.3f}")
    return EXIT_OK


def run_check(cfg: RunConfig, out: Path, quiet: bool = False) -> int:
    from .checks import CheckContext, run_checks
    m = _model(cfg)
    ctx = CheckContext(m, cfg.sim, cfg.numerics.tol, cfg.numerics.grid_dx, cfg.numerics.x_hi)
    results = run_checks(ctx)
    out = ensure_output(out)
    write_json(out / "check_report.json", {"all_pass": all(r.passed for r in results),
                                           "checks": [r.as_dict() for r in results]})
    if not quiet:
        for r in results:
            print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_DIAGNOSTICS


def run_special(args) -> int:
    params = [float(p) for p in args.params]
    which = args.function
    need = {"M": 2, "U": 2, "D": 1}[which]
    if len(params) != need:
        raise ConfigError(f"{which} takes {need} parameter(s) before z")
    z = float(args.z)
    if args.deriv:
        val = sf.specfun_derivative(which, params, z)
        out = {"function": which, "params": params, "z": z, "derivative": val}
    else:
        fn = {"M": sf.kummer_m, "U": sf.tricomi_u, "D": sf.parabolic_cylinder_d}[which]
        r = fn(*params, z)
        out = {"function": which, "params": params, "z": z, "value": r.value,
               "abs_error_estimate": r.abs_error_estimate, "terms_or_nodes_used": r.terms_or_nodes_used}
    print(json.dumps(_jsonable(out)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides [output].directory)")
    common.add_argument("--seed", type=int, help="Monte Carlo seed (overrides [sim].seed)")
    common.add_argument("--quiet", action="store_true", help="no progress output")

    p = argparse.ArgumentParser(prog="optwithdraw", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="value function and optimal barrier")
    sub.add_parser("sweep", parents=[common], help="b* over a grid of (F0, F1)")
    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo refraction payoff")
    sim.add_argument("--model", type=Path, help="alias of --config")
    sim.add_argument("--barrier", type=float)
    sim.add_argument("--paths", type=int)
    sim.add_argument("--dt", type=float)
    sim.add_argument("--x0", type=float)
    sub.add_parser("check", parents=[common], help="run every invariant check")
    sp = sub.add_parser("special", help="evaluate M(a,b;z), U(a,b;z) or D_{-lam}(z)")
    sp.add_argument("function", choices=["M", "U", "D"])
    sp.add_argument("params", nargs="+", help="a b z for M and U, lam z for D")
    sp.add_argument("--deriv", action="store_true", help="derivative in z")
    return p


def _config(args) -> RunConfig:
    path = getattr(args, "model", None) or args.config
    if path is None:
        raise ConfigError("--config is required")
    cfg = load(path)
    sim_kw = {}
    if args.seed is not None:
        sim_kw["seed"] = args.seed
    for name, key in (("paths", "n_paths"), ("dt", "dt"), ("x0", "x0")):
        v = getattr(args, name, None)
        if v is not None:
            sim_kw[key] = v
    if sim_kw:
        cfg = cfg.replace(sim=cfg.sim.replace(**sim_kw))
    if getattr(args, "barrier", None) is not None:
        if not args.barrier >= 0:
            raise ConfigError("--barrier must be nonnegative")
        cfg = cfg.replace(barrier=args.barrier)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if getattr(args, "quiet", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "special":
            args.params, args.z = args.params[:-1], args.params[-1]
            return run_special(args)
        cfg = _config(args)
        out = args.out or Path(cfg.output.directory)
        fn = {"solve": run_solve, "sweep": run_sweep, "simulate": run_simulate, "check": run_check}[args.command]
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            return fn(cfg, out, args.quiet)
    except (ConfigError, ModelError, ConfigInvalid) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
