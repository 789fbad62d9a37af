"""Post-hoc verdicts on trajectories: energy accounting and structural checks.

Everything here is pure post-processing over an immutable trajectory.  All
randomized checks take an explicit seed and are deterministic given
(trajectory, seed).  Tolerances follow two regimes: algebraic identities are
asserted at 1e-10..1e-12, discretization-limited statements are reported as
refinement trends rather than absolute numbers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import Field, Grid, neg_laplacian, norm_h1
from .model import DiscretizedData, Nonlinearity, ProblemData, discretize_time
from .obstacle import SolverOptions, step_energy


def energy(data: ProblemData, nl: Nonlinearity, u: Field, t: float) -> float:
    """Energy of a state at time ``t``: quadratic part plus the weighted
    primitive of the nonlinearity minus the work of the source.

    Evaluates ``0.5*|D+ u|^2 + 0.5*lam*|u|^2 + sum(weight(t)*primitive(u))
    - (source(t), u)`` with the grid inner products.  This is the same
    expression as the per-step energy with the instantaneous data in place
    of the interval averages, and it is the single evaluation path used for
    every stored trajectory energy.
    """
    x = data.grid.nodes
    return step_energy(data.grid, u, data.source(x, t), data.weight(x, t),
                       data.lam, nl)


@dataclass(frozen=True)
class EnergyReport:
    """Per-interval balance residuals of one run.

    ``residuals[k-1]`` compares the stored energy increment over
    ``(t_{k-1}, t_k]`` with the work of the explicit time dependence of the
    data along the piecewise constant interpolant, integrated by the
    midpoint rule.  The identity is exact in the time-continuous limit, so
    the meaningful statement is the decay of ``total_abs`` under step
    refinement; ``order_vs`` fills the measured order when a halving study
    produced this report.
    """

    energies: np.ndarray
    residuals: np.ndarray
    max_abs: float
    total_abs: float
    used_fd_derivatives: bool
    order_vs: Optional[float] = None


@dataclass(frozen=True)
class CheckVerdict:
    name: str
    max_violation: float
    tolerance: float
    passed: bool
    worst: tuple = ()
    applicable: bool = True
    note: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _verdict(name: str, violation: float, tol: float, worst=(), note="") -> CheckVerdict:
    return CheckVerdict(name=name, max_violation=float(violation), tolerance=tol,
                        passed=bool(violation <= tol), worst=tuple(worst), note=note)


# --------------------------------------------------------------------------
# energy balance
# --------------------------------------------------------------------------

def balance_residual(traj, data: ProblemData, nl: Nonlinearity,
                     quad_pts: int = 8) -> EnergyReport:
    """Residual of the energy balance over each step interval.

    For each interval the left side is the stored energy increment; the
    right side integrates ``sum(d/dt weight * primitive(z)) - (d/dt source,
    z)`` in time by the composite midpoint rule, holding the state at its
    end-of-interval value (the constant interpolant, matching the scheme's
    own accuracy).  Falls back to finite-difference time derivatives when a
    profile has no analytic one, and flags the report.
    """
    g = traj.grid
    x = g.nodes
    h = g.h
    m = traj.m
    residuals = np.empty(m)
    used_fd = not (data.source.has_exact_dt and data.weight.has_exact_dt)
    for k in range(1, m + 1):
        t0, t1 = traj.times[k - 1], traj.times[k]
        z = traj.states[k]
        gz = np.asarray(nl.primitive(z), float)
        pts = t0 + (np.arange(quad_pts) + 0.5) * ((t1 - t0) / quad_pts)
        rhs = 0.0
        for t in pts:
            rhs += h * float(np.dot(data.weight.dt(x, t), gz))
            rhs -= h * float(np.dot(data.source.dt(x, t), z))
        rhs *= (t1 - t0) / quad_pts
        residuals[k - 1] = (traj.energies[k] - traj.energies[k - 1]) - rhs
    abs_res = np.abs(residuals)
    return EnergyReport(energies=traj.energies.copy(), residuals=residuals,
                        max_abs=float(abs_res.max()), total_abs=float(abs_res.sum()),
                        used_fd_derivatives=used_fd)


def balance_order(data: ProblemData, nl: Nonlinearity, m_list,
                  opts: Optional[SolverOptions] = None, quad_pts: int = 8):
    """Total balance residual under step refinement plus measured orders.

    Runs the evolution for each step count, sums the per-interval residual
    magnitudes, and returns ``(totals, orders)`` where ``orders[j-1] =
    log2(totals[j-1]/totals[j])`` for consecutive halvings.
    """
    from .evolution import run_evolution

    totals = []
    for m in m_list:
        traj = run_evolution(data, nl, m, opts=opts, quad_pts=quad_pts)
        totals.append(balance_residual(traj, data, nl, quad_pts=quad_pts).total_abs)
    totals = np.asarray(totals)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log2(totals[:-1] / totals[1:])
    return totals, orders


# --------------------------------------------------------------------------
# unilateral minimality
# --------------------------------------------------------------------------

def admissible_perturbations(grid: Grid, n_samples: int, seed: int) -> np.ndarray:
    """Nonnegative perturbation magnitudes used by the minimality check.

    Cycles through three structured families (uniform noise rarely probes
    the contact set):

    * single-node spikes,
    * smooth bumps of random center and width,
    * global constant shifts,

    each with Gaussian amplitudes and one of three amplitude scales
    (1e-3, 3e-2, 1).  Returns an ``(n_samples, n)`` array of values ``>= 0``
    meant to be subtracted from the state.
    """
    rng = np.random.default_rng(seed)
    x = grid.nodes
    span = grid.b - grid.a
    scales = (1e-3, 3e-2, 1.0)
    out = np.zeros((n_samples, grid.n))
    for j in range(n_samples):
        amp = abs(rng.normal()) * scales[j % 3]
        family = (j // 3) % 3
        if family == 0:
            out[j, rng.integers(grid.n)] = amp
        elif family == 1:
            center = rng.uniform(grid.a, grid.b)
            width = span * rng.choice((0.05, 0.15, 0.3))
            out[j] = amp * np.exp(-((x - center) / width) ** 2)
        else:
            out[j] = amp
    return out


def check_unilateral_minimality(traj, data: ProblemData, nl: Nonlinearity,
                                t: float, n_samples: int = 1000, seed: int = 0,
                                tol: float = 1e-10) -> CheckVerdict:
    """Energy of the state at a stored stamp vs. random states below it.

    Draws admissible competitors ``v = z(t) - perturbation`` (see
    :func:`admissible_perturbations`; the families are the documented scope
    of the check -- it samples, it cannot quantify over all of V) and
    asserts the stored energy is no larger than any competitor's, within
    ``tol``.  Violation is ``energy(z) - energy(v)`` at the worst sample.
    """
    k_matches = np.flatnonzero(np.abs(traj.times - t) <= 1e-12 * max(1.0, traj.times[-1]))
    if k_matches.size == 0:
        raise ValueError(f"t={t} is not a stored time stamp")
    k = int(k_matches[0])
    z = traj.states[k]
    e_z = traj.energies[k]
    perts = admissible_perturbations(traj.grid, n_samples, seed)
    worst = -np.inf
    worst_j = -1
    for j in range(n_samples):
        v = Field(traj.grid, z - perts[j])
        viol = e_z - energy(data, nl, v, traj.times[k])
        if viol > worst:
            worst, worst_j = viol, j
    return _verdict("unilateral_minimality", max(worst, 0.0), tol,
                    worst=(k, worst_j), note=f"{n_samples} samples, seed {seed}")


# --------------------------------------------------------------------------
# two-sided operator bound per step
# --------------------------------------------------------------------------

def check_lewy_stampacchia(traj, disc: DiscretizedData, lam: float,
                           nl: Nonlinearity, tol: float = 1e-8) -> CheckVerdict:
    """Nodewise two-sided bound pinning the step operator output.

    At every step the elliptic output of the new state must lie between the
    averaged source from above and, from below, the minimum of that source
    and the previous state's elliptic output (with the nonlinear term frozen
    at the new state):

        min(f_k, -Lap z_{k-1} + lam z_{k-1} + w_k fn(z_k))
            <= -Lap z_k + lam z_k + w_k fn(z_k) <= f_k.
    """
    g = traj.grid
    worst = -np.inf
    worst_loc = (0, 0)
    for k in range(1, traj.m + 1):
        zk = traj.states[k]
        zp = traj.states[k - 1]
        fk = disc.source_avg[k - 1]
        wk = disc.weight_avg[k - 1]
        react = wk * np.asarray(nl.fn(zk), float)
        mid = neg_laplacian(g, zk).values + lam * zk + react
        low = np.minimum(fk, neg_laplacian(g, zp).values + lam * zp + react)
        viol = np.maximum(low - mid, mid - fk)
        i = int(np.argmax(viol))
        if viol[i] > worst:
            worst, worst_loc = float(viol[i]), (k, i)
    return _verdict("lewy_stampacchia", max(worst, 0.0), tol, worst=worst_loc)


def check_irreversibility(traj, tol: float = 1e-12) -> CheckVerdict:
    """Largest nodewise increase between consecutive states (must be ~0)."""
    inc = np.diff(traj.states, axis=0)
    worst = float(inc.max(initial=-np.inf))
    k, i = np.unravel_index(int(np.argmax(inc)), inc.shape) if inc.size else (0, 0)
    return _verdict("irreversibility", max(worst, 0.0), tol, worst=(int(k) + 1, int(i)))


def check_dissipation_sign(traj, nl: Nonlinearity, lam: float,
                           tol: float = 1e-12) -> CheckVerdict:
    """Each step must not increase its own frozen-data step energy."""
    g = traj.grid
    disc = traj.disc
    if disc is None:
        raise ValueError("trajectory carries no interval-averaged data")
    worst = -np.inf
    worst_k = 0
    for k in range(1, traj.m + 1):
        fk, wk = disc.source_avg[k - 1], disc.weight_avg[k - 1]
        jk_new = step_energy(g, traj.states[k], fk, wk, lam, nl)
        jk_old = step_energy(g, traj.states[k - 1], fk, wk, lam, nl)
        if jk_new - jk_old > worst:
            worst, worst_k = jk_new - jk_old, k
    return _verdict("dissipation_sign", max(worst, 0.0), tol, worst=(worst_k,))


# --------------------------------------------------------------------------
# comparison principle
# --------------------------------------------------------------------------

def check_comparison(data_a: ProblemData, data_b: ProblemData, nl: Nonlinearity,
                     m: int, opts: Optional[SolverOptions] = None,
                     quad_pts: int = 8, tol: float = 1e-10) -> CheckVerdict:
    """Ordered data must produce ordered trajectories.

    Requires ``initial_a <= initial_b`` nodewise and ``source_a <= source_b``
    on the interval averages actually used by the scheme (same weight,
    coefficient and nonlinearity are the caller's responsibility).  When the
    ordering precondition fails the verdict is marked inapplicable instead
    of failing.  Ordering is the only hypothesis used, so the runs skip the
    initial-admissibility gate (the per-step convexity guard still applies).
    """
    from .evolution import run_evolution

    if data_a.grid != data_b.grid:
        raise ValueError("comparison requires a common grid")
    disc_a = discretize_time(data_a, m, quad_pts)
    disc_b = discretize_time(data_b, m, quad_pts)
    pre_gap = max(float((data_a.initial.values - data_b.initial.values).max()),
                  float((disc_a.source_avg - disc_b.source_avg).max()))
    if pre_gap > 1e-12:
        return CheckVerdict(name="comparison", max_violation=np.inf, tolerance=tol,
                            passed=False, applicable=False,
                            note="data pair is not ordered; check not applicable")

    traj_a = run_evolution(data_a, nl, m, opts=opts, quad_pts=quad_pts,
                           validate_first=False)
    traj_b = run_evolution(data_b, nl, m, opts=opts, quad_pts=quad_pts,
                           validate_first=False)
    gap = traj_a.states - traj_b.states
    worst = float(gap.max())
    k, i = np.unravel_index(int(np.argmax(gap)), gap.shape)
    return _verdict("comparison", max(worst, 0.0), tol, worst=(int(k), int(i)))


# --------------------------------------------------------------------------
# refinement studies
# --------------------------------------------------------------------------

def regrid_problem(data: ProblemData, n: int) -> ProblemData:
    """Rebuild the problem on a grid with ``n`` interior nodes.

    The time profiles transfer unchanged; the initial state is linearly
    interpolated with endpoint values following the boundary tags (0 at a
    pinned end, flat extension at a zero-flux end).  A user-supplied source
    floor is interpolated the same way; a default floor stays default.
    """
    g = data.grid
    new_grid = Grid(a=g.a, b=g.b, n=n, bc_left=g.bc_left, bc_right=g.bc_right)

    def regrid_field(f: Field) -> Field:
        left = 0.0 if g.bc_left.value == "dirichlet" else f.values[0]
        right = 0.0 if g.bc_right.value == "dirichlet" else f.values[-1]
        xs = np.concatenate(([g.a], g.nodes, [g.b]))
        ys = np.concatenate(([left], f.values, [right]))
        return Field(new_grid, np.interp(new_grid.nodes, xs, ys))

    return ProblemData(
        grid=new_grid, lam=data.lam, weight=data.weight, source=data.source,
        initial=regrid_field(data.initial), horizon=data.horizon,
        source_floor=None if data.source_floor is None else regrid_field(data.source_floor))


@dataclass(frozen=True)
class RefinementRow:
    kind: str                    # "tau" or "h"
    m: int
    n: int
    gap_v: Optional[float]       # sup-in-t H1 gap to the previous refinement
    balance_sum: float
    order_estimate: Optional[float]
    step_rate: float             # max_k |z_k - z_{k-1}|_H1 / sqrt(tau)


def refinement_study(data: ProblemData, nl: Nonlinearity, m_list, n_list,
                     opts: Optional[SolverOptions] = None,
                     quad_pts: int = 8) -> list[RefinementRow]:
    """Gap-between-refinements table in the step count and in the mesh size.

    For consecutive step refinements the gap is the sup over the coarser
    run's stamps of the H1 norm of the difference of states; for mesh
    refinements the finer state is interpolated onto the coarser nodes
    first.  Also reports the per-run total balance residual (with measured
    order between consecutive rows of the same kind) and the trend quantity
    ``max_k |z_k - z_{k-1}|_H1 / sqrt(tau)``, whose boundedness under
    refinement is the practical form of the scheme's rate estimate.

    Regridding the initial state perturbs its admissibility at the
    interpolation-error level, so the runs skip that gate; the per-step
    convexity guard still applies.
    """
    from .evolution import run_evolution

    rows: list[RefinementRow] = []

    def step_rate(traj) -> float:
        diffs = [norm_h1(traj.grid, traj.states[k] - traj.states[k - 1])
                 for k in range(1, traj.m + 1)]
        return float(max(diffs) / np.sqrt(traj.tau))

    prev_traj = None
    prev_sum = None
    for m in sorted(m_list):
        traj = run_evolution(data, nl, int(m), opts=opts, quad_pts=quad_pts,
                             validate_first=False)
        bal = balance_residual(traj, data, nl, quad_pts=quad_pts).total_abs
        gap = None
        if prev_traj is not None:
            from .evolution import interp_constant
            gap = max(norm_h1(traj.grid,
                              interp_constant(traj, t).values - prev_traj.states[k])
                      for k, t in enumerate(prev_traj.times))
        order = None
        if prev_sum is not None and bal > 0:
            order = float(np.log2(prev_sum / bal))
        rows.append(RefinementRow("tau", int(m), data.grid.n, gap, bal, order,
                                  step_rate(traj)))
        prev_traj, prev_sum = traj, bal

    m_h = int(max(m_list)) if len(m_list) else 100
    prev = None
    prev_sum = None
    for n in sorted(n_list):
        pdata = regrid_problem(data, int(n))
        traj = run_evolution(pdata, nl, m_h, opts=opts, quad_pts=quad_pts,
                             validate_first=False)
        bal = balance_residual(traj, pdata, nl, quad_pts=quad_pts).total_abs
        gap = None
        if prev is not None:
            prev_traj, prev_data = prev
            cg = prev_data.grid
            fine_full_x = np.concatenate(([pdata.grid.a], pdata.grid.nodes, [pdata.grid.b]))
            gap = 0.0
            for k in range(prev_traj.m + 1):
                fine = traj.states[k]
                left = 0.0 if pdata.grid.bc_left.value == "dirichlet" else fine[0]
                right = 0.0 if pdata.grid.bc_right.value == "dirichlet" else fine[-1]
                fine_full = np.concatenate(([left], fine, [right]))
                restricted = np.interp(cg.nodes, fine_full_x, fine_full)
                gap = max(gap, norm_h1(cg, restricted - prev_traj.states[k]))
        order = None
        if prev_sum is not None and bal > 0:
            order = float(np.log2(prev_sum / bal))
        rows.append(RefinementRow("h", m_h, int(n), gap, bal, order, step_rate(traj)))
        prev, prev_sum = (traj, pdata), bal
    return rows


def write_refinement_csv(rows: list[RefinementRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "m", "n", "gap_V", "balance_sum",
                         "order_estimate", "step_rate"])
        for r in rows:
            writer.writerow([
                r.kind, r.m, r.n,
                "" if r.gap_v is None else f"{r.gap_v:.17g}",
                f"{r.balance_sum:.17g}",
                "" if r.order_estimate is None else f"{r.order_estimate:.17g}",
                f"{r.step_rate:.17g}",
            ])
    return path


def verdicts_to_json(verdicts: list[CheckVerdict]) -> str:
    return json.dumps([asdict(v) for v in verdicts], sort_keys=True, indent=1)
