"""Configuration-driven command line front end.

One JSON configuration file drives one experiment; command-line flags only
override the output directory and the seed, so every run is reproducible
from a single artifact.  Unknown configuration keys abort before any
computation (fail-closed).

Commands and exit codes::

    irrev check CONFIG       validate the problem data
    irrev run CONFIG         evolve, write trajectory + diagnostics
    irrev refine CONFIG      step/mesh refinement study
    irrev longtime CONFIG    long-horizon relaxation vs the stationary limit
    irrev stationary CONFIG  stationary obstacle problem
    irrev fracture CONFIG    coupled phase-field fracture run

    0  success / all checks passed
    1  validation or assertion failure
    2  solver failure (partial outputs kept with a .partial marker)
    3  configuration error

The environment variable ``IRREV_VERBOSE=1`` turns on per-step prints; no
other environment coupling exists.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import presets
from .diagnostics import (CheckVerdict, balance_residual, check_dissipation_sign,
                          check_irreversibility, check_lewy_stampacchia,
                          check_unilateral_minimality, refinement_study,
                          verdicts_to_json, write_refinement_csv)
from .evolution import EvolutionError, run_evolution, save_trajectory
from .fracture import ATParams, FractureSetupError, run_fracture
from .grid import BC, Field, Grid
from .model import ProblemData, validate
from .obstacle import ObstacleError, SolverOptions
from .stationary import StationaryProblem, run_longtime, solve_stationary

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_SOLVER_FAILED = 2
EXIT_CONFIG_ERROR = 3


class ConfigError(ValueError):
    pass


def _verbose() -> bool:
    return os.environ.get("IRREV_VERBOSE", "0") not in ("", "0")


# --------------------------------------------------------------------------
# config parsing (fail-closed)
# --------------------------------------------------------------------------

def _check_keys(block: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def load_config(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    _check_keys(cfg, {"problem", "solver", "output", "seed", "tolerances",
                      "refine", "longtime", "stationary", "fracture"}, "config")
    return cfg


def _build_grid(spec: dict) -> Grid:
    _check_keys(spec, {"a", "b", "n", "bc_left", "bc_right"}, "problem.grid")
    try:
        return Grid(a=float(spec.get("a", 0.0)), b=float(spec.get("b", 1.0)),
                    n=int(spec["n"]),
                    bc_left=BC(spec.get("bc_left", "dirichlet")),
                    bc_right=BC(spec.get("bc_right", "dirichlet")))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"problem.grid: {exc}") from exc


def build_problem(cfg: dict):
    """Problem block -> (ProblemData, Nonlinearity, m, quad_pts)."""
    try:
        prob = cfg["problem"]
    except KeyError:
        raise ConfigError("config needs a 'problem' block") from None
    _check_keys(prob, {"grid", "lambda", "gamma", "sigma", "f", "z0", "T", "m",
                       "quad_pts"}, "problem")
    try:
        grid = _build_grid(prob.get("grid", {"n": 101}))
        lam = float(prob.get("lambda", 1.0))
        nl = presets.nonlinearity(prob.get("gamma", {"preset": "zero"}))
        weight = presets.time_profile(grid, prob.get("sigma", {"preset": "constant", "value": 0.0}),
                                      "problem.sigma")
        source = presets.time_profile(grid, prob.get("f", {"preset": "constant", "value": 0.0}),
                                      "problem.f")
        z0 = presets.initial_state(grid, prob.get("z0", {"preset": "zero"}),
                                   lam, nl, source, weight)
        data = ProblemData(grid=grid, lam=lam, weight=weight, source=source,
                           initial=z0, horizon=float(prob.get("T", 1.0)))
    except presets.PresetError as exc:
        raise ConfigError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem block: {exc}") from exc
    m = int(prob.get("m", 100))
    quad_pts = int(prob.get("quad_pts", 8))
    if m < 1 or quad_pts < 1:
        raise ConfigError("problem.m and problem.quad_pts must be >= 1")
    return data, nl, m, quad_pts


def build_solver_options(cfg: dict) -> SolverOptions:
    block = cfg.get("solver", {})
    _check_keys(block, {"method", "tol_kkt", "max_outer", "pdas_c",
                        "newton_damping", "pg_max_iters"}, "solver")
    method = block.get("method", "pdas")
    if method not in ("pdas", "projected_gradient"):
        raise ConfigError(f"solver.method must be 'pdas' or 'projected_gradient', got {method!r}")
    try:
        return SolverOptions(
            method=method,
            tol_kkt=float(block.get("tol_kkt", 1e-10)),
            max_outer=int(block.get("max_outer", 100)),
            pdas_c=float(block.get("pdas_c", 1.0)),
            newton_damping=float(block.get("newton_damping", 0.5)),
            pg_max_iters=int(block.get("pg_max_iters", 200_000)))
    except ValueError as exc:
        raise ConfigError(f"solver block: {exc}") from exc


def _output_dir(cfg: dict, override: str | None) -> Path:
    block = cfg.get("output", {})
    _check_keys(block, {"directory", "stride"}, "output")
    directory = Path(override or block.get("directory", "irrev_out"))
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _stride(cfg: dict) -> int:
    return int(cfg.get("output", {}).get("stride", 1))


def _seed(cfg: dict, override: int | None) -> int:
    return int(override if override is not None else cfg.get("seed", 0))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_check(cfg: dict, out_dir: Path, seed: int) -> int:
    data, nl, _, _ = build_problem(cfg)
    report = validate(data, nl, seed=seed)
    for line in report.lines():
        print(line)
    print(f"coercivity margin: {report.lambda0:.17g}")
    print(f"admissibility residual: {report.admissibility_residual:.17g}")
    return EXIT_OK if report.ok else EXIT_CHECK_FAILED


def _print_verdicts(verdicts: list[CheckVerdict]) -> bool:
    ok = True
    for v in verdicts:
        if not v.applicable:
            print(f"SKIP  {v.name}: {v.note}")
            continue
        status = "PASS" if v.passed else "FAIL"
        ok &= v.passed
        print(f"{status}  {v.name}: violation={v.max_violation:.3g} tol={v.tolerance:.3g}")
    return ok


def cmd_run(cfg: dict, out_dir: Path, seed: int, force: bool = False) -> int:
    data, nl, m, quad_pts = build_problem(cfg)
    opts = build_solver_options(cfg)

    report = validate(data, nl, seed=seed)
    if not report.ok:
        for line in report.lines():
            print(line)
        if not force or report.lambda0 <= 0:
            # a nonconvex step problem is never attempted, --force or not
            print("validation failed; not running" +
                  (" (convexity margin not positive)" if report.lambda0 <= 0 else ""))
            return EXIT_CHECK_FAILED
        print("validation failed; continuing under --force")

    try:
        traj = run_evolution(data, nl, m, opts=opts, quad_pts=quad_pts,
                             validate_first=False)
    except EvolutionError as exc:
        save_trajectory(exc.partial, out_dir, stride=_stride(cfg))
        (out_dir / "trajectory.partial").write_text(f"{exc}\n")
        print(f"solver failure: {exc}")
        return EXIT_SOLVER_FAILED

    save_trajectory(traj, out_dir, stride=_stride(cfg))
    energy_report = balance_residual(traj, data, nl, quad_pts=quad_pts)
    with open(out_dir / "energy_report.json", "w") as fh:
        json.dump({"energies": list(map(float, energy_report.energies)),
                   "residuals": list(map(float, energy_report.residuals)),
                   "max_abs": energy_report.max_abs,
                   "total_abs": energy_report.total_abs,
                   "used_fd_derivatives": energy_report.used_fd_derivatives},
                  fh, sort_keys=True, indent=1)

    tol = cfg.get("tolerances", {})
    _check_keys(tol, {"irreversibility", "lewy_stampacchia", "minimality",
                      "dissipation"}, "tolerances")
    verdicts = [
        check_irreversibility(traj, tol=float(tol.get("irreversibility", 1e-12))),
        check_lewy_stampacchia(traj, traj.disc, data.lam, nl,
                               tol=float(tol.get("lewy_stampacchia", 1e-8))),
        check_dissipation_sign(traj, nl, data.lam,
                               tol=float(tol.get("dissipation", 1e-12))),
    ]
    stamp_ids = np.unique(np.linspace(0, traj.m, 5).round().astype(int))
    for k in stamp_ids:
        verdicts.append(check_unilateral_minimality(
            traj, data, nl, traj.times[k], n_samples=200, seed=seed + int(k),
            tol=float(tol.get("minimality", 1e-10))))
    (out_dir / "verdicts.json").write_text(verdicts_to_json(verdicts) + "\n")

    movement = traj.max_movement()
    tag = "  [no evolution]" if movement <= 1e-10 else ""
    print(f"max movement: {movement:.17g}{tag}")
    print(f"balance: max|residual|={energy_report.max_abs:.3g} "
          f"total={energy_report.total_abs:.3g}")
    ok = _print_verdicts(verdicts)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_refine(cfg: dict, out_dir: Path, seed: int) -> int:
    data, nl, _, quad_pts = build_problem(cfg)
    opts = build_solver_options(cfg)
    block = cfg.get("refine", {})
    _check_keys(block, {"m_list", "n_list"}, "refine")
    m_list = [int(v) for v in block.get("m_list", [50, 100, 200])]
    n_list = [int(v) for v in block.get("n_list", [])]
    rows = refinement_study(data, nl, m_list, n_list, opts=opts, quad_pts=quad_pts)
    write_refinement_csv(rows, out_dir / "refinement.csv")

    ok = True
    tau_gaps = [r.gap_v for r in rows if r.kind == "tau" and r.gap_v is not None]
    for a, b in zip(tau_gaps, tau_gaps[1:]):
        ok &= b < a
    for r in rows:
        gap = "" if r.gap_v is None else f" gap_V={r.gap_v:.6g}"
        order = "" if r.order_estimate is None else f" order={r.order_estimate:.3f}"
        print(f"{r.kind}: m={r.m} n={r.n}{gap} balance_sum={r.balance_sum:.6g}{order}")
    print("refinement gaps decrease" if ok else "refinement gaps do NOT decrease")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_longtime(cfg: dict, out_dir: Path, seed: int) -> int:
    data, nl, _, quad_pts = build_problem(cfg)
    opts = build_solver_options(cfg)
    block = cfg.get("longtime", {})
    _check_keys(block, {"horizon", "m_per_unit", "final_gap_tol"}, "longtime")
    horizon = float(block.get("horizon", 40.0))
    m_per_unit = int(block.get("m_per_unit", 16))
    final_tol = float(block.get("final_gap_tol", 1e-6))

    try:
        result = run_longtime(data, nl, horizon, m_per_unit, opts=opts,
                              quad_pts=quad_pts)
    except (EvolutionError, ObstacleError) as exc:
        print(f"solver failure: {exc}")
        return EXIT_SOLVER_FAILED

    save_trajectory(result.traj, out_dir, stride=_stride(cfg))
    with open(out_dir / "gap.csv", "w") as fh:
        fh.write("t,gap_V\n")
        for t, gv in zip(result.traj.times, result.gaps):
            fh.write(f"{t:.17g},{gv:.17g}\n")

    print(f"final gap: {result.final_gap:.17g}")
    print(f"gap monotone: {result.gap_monotone} "
          f"(max increase {result.max_gap_increase:.3g})")
    print(f"limit below trajectory: {result.sandwich_ok} "
          f"(violation {result.sandwich_violation:.3g})")
    if not (result.weight_time_independent and result.source_above_limit):
        print("warning: limit characterization preconditions not met "
              f"(weight constant in t: {result.weight_time_independent}, "
              f"source above limit: {result.source_above_limit})")
    ok = (result.gap_monotone and result.sandwich_ok
          and result.final_gap <= final_tol)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_stationary(cfg: dict, out_dir: Path, seed: int) -> int:
    data, nl, _, _ = build_problem(cfg)
    opts = build_solver_options(cfg)
    block = cfg.get("stationary", {})
    _check_keys(block, {"f_inf", "sigma"}, "stationary")
    g = data.grid
    x = g.nodes
    f_inf = Field(g, presets.space_values(g, block["f_inf"], "stationary.f_inf")) \
        if "f_inf" in block else Field(g, data.source(x, data.horizon))
    weight = Field(g, presets.space_values(g, block["sigma"], "stationary.sigma")) \
        if "sigma" in block else Field(g, data.weight(x, 0.0))

    try:
        res = solve_stationary(StationaryProblem(
            grid=g, obstacle=data.initial, source=f_inf, weight=weight,
            lam=data.lam, nl=nl), opts=opts)
    except ObstacleError as exc:
        print(f"solver failure: {exc}")
        return EXIT_SOLVER_FAILED
    except ValueError as exc:
        print(f"FAIL  {exc}")
        return EXIT_CHECK_FAILED

    with open(out_dir / "z_inf.csv", "w") as fh:
        fh.write("x,z,eta\n")
        for i in range(g.n):
            fh.write(f"{x[i]:.17g},{res.z.values[i]:.17g},{res.eta.values[i]:.17g}\n")
    with open(out_dir / "stationary.json", "w") as fh:
        json.dump({"kkt_residual": res.kkt_residual, "iters": res.iters,
                   "active": [int(i) for i in res.active]}, fh, sort_keys=True, indent=1)
    print(f"stationary state written; kkt_residual={res.kkt_residual:.3g} "
          f"active nodes={res.active.size}")
    return EXIT_OK


def cmd_fracture(cfg: dict, out_dir: Path, seed: int) -> int:
    block = cfg.get("fracture", {})
    _check_keys(block, {"eps", "delta_eps", "load", "z0", "n", "T", "m",
                        "quad_pts", "scan_range"}, "fracture")
    try:
        eps = float(block["eps"])
        delta = float(block["delta_eps"])
        load = presets.fracture_load(block.get("load", {"preset": "zero"}))
        n = int(block.get("n", 101))
        horizon = float(block.get("T", 1.0))
        m = int(block.get("m", 100))
        quad_pts = int(block.get("quad_pts", 8))
        scan_range = float(block.get("scan_range", 10.0))
    except KeyError as exc:
        raise ConfigError(f"fracture block: missing {exc}") from exc
    except presets.PresetError as exc:
        raise ConfigError(str(exc)) from exc
    grid = Grid(a=-1.0, b=1.0, n=n, bc_left=BC.DIRICHLET, bc_right=BC.DIRICHLET)
    params = ATParams(eps=eps, delta=delta, load=load)

    z0 = None
    if "z0" in block:
        z0 = Field(grid, presets.space_values(grid, block["z0"], "fracture.z0"))
    opts = build_solver_options(cfg)
    try:
        result = run_fracture(params, grid, horizon, m, z0=z0, opts=opts,
                              quad_pts=quad_pts, scan_range=scan_range)
    except FractureSetupError as exc:
        print(f"FAIL  {exc}")
        return EXIT_CHECK_FAILED
    except EvolutionError as exc:
        save_trajectory(exc.partial, out_dir, stride=_stride(cfg))
        (out_dir / "trajectory.partial").write_text(f"{exc}\n")
        print(f"solver failure: {exc}")
        return EXIT_SOLVER_FAILED

    traj = result.traj
    save_trajectory(traj, out_dir, stride=_stride(cfg))
    with open(out_dir / "displacement.csv", "w") as fh:
        fh.write("t,x,u,u_x\n")
        for st in result.coupled:
            for i, xx in enumerate(st.x_full):
                fh.write(f"{st.t:.17g},{xx:.17g},{st.u_full[i]:.17g},"
                         f"{st.ux_full[i]:.17g}\n")
    with open(out_dir / "at_energy.csv", "w") as fh:
        fh.write("t,at_energy\n")
        for t, e in zip(traj.times, result.at_energies):
            fh.write(f"{t:.17g},{e:.17g}\n")

    verdicts = [
        check_irreversibility(traj),
        check_lewy_stampacchia(traj, traj.disc, result.data.lam, result.nl),
    ]
    # consistency of the reduction: weight*fn(z) must equal z*u_x^2/eps
    worst = 0.0
    for st in result.coupled:
        zv = st.z.values
        lhs = st.sigma * np.asarray(result.nl.fn(zv), float)
        rhs = zv * st.ux_full[1:-1] ** 2 / params.eps
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    verdicts.append(CheckVerdict(name="reduction_consistency", max_violation=worst,
                                 tolerance=1e-10, passed=worst <= 1e-10))
    (out_dir / "verdicts.json").write_text(verdicts_to_json(verdicts) + "\n")

    movement = traj.max_movement()
    tag = "  [no evolution]" if movement <= 1e-10 else ""
    print(f"max movement: {movement:.17g}{tag}")
    print(f"min phase field: {traj.states.min():.6g}")
    ok = _print_verdicts(verdicts)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="irrev",
        description="irreversible obstacle-type evolutions on an interval")
    parser.add_argument("command",
                        choices=["check", "run", "refine", "longtime",
                                 "stationary", "fracture"])
    parser.add_argument("config", help="path to a JSON configuration file")
    parser.add_argument("--output-dir", default=None,
                        help="override the configured output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured seed")
    parser.add_argument("--force", action="store_true",
                        help="run even if validation fails (a nonpositive "
                             "convexity margin still refuses)")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        out_dir = _output_dir(cfg, args.output_dir)
        seed = _seed(cfg, args.seed)
        if args.command == "check":
            return cmd_check(cfg, out_dir, seed)
        if args.command == "run":
            return cmd_run(cfg, out_dir, seed, force=args.force)
        if args.command == "refine":
            return cmd_refine(cfg, out_dir, seed)
        if args.command == "longtime":
            return cmd_longtime(cfg, out_dir, seed)
        if args.command == "stationary":
            return cmd_stationary(cfg, out_dir, seed)
        return cmd_fracture(cfg, out_dir, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except ObstacleError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILED


if __name__ == "__main__":
    sys.exit(main())
