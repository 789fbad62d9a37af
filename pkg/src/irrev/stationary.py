"""Stationary obstacle problem and long-horizon relaxation toward it.

The long-time limit of a run whose source settles (and whose weight never
depended on time) solves the stationary problem with the *initial* state as
obstacle:

    z_inf <= z0,   -z_inf'' + lam*z_inf + w*fn(z_inf) <= f_inf,
    (z_inf - z0) * ( -z_inf'' + lam*z_inf + w*fn(z_inf) - f_inf ) = 0.

That is structurally the same KKT system as one implicit step, so the solve
delegates to the step solver.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .grid import Field, Grid, norm_h1
from .model import Nonlinearity, ProblemData
from .obstacle import ObstacleResult, SolverOptions, solve_step


@dataclass(frozen=True)
class StationaryProblem:
    grid: Grid
    obstacle: Field      # the initial state of the evolution it limits
    source: Field        # settled source
    weight: Field        # time-independent weight
    lam: float
    nl: Nonlinearity

    def __post_init__(self) -> None:
        margin = self.lam - self.nl.slope_bound * float(self.weight.values.max(initial=0.0))
        if margin <= 0:
            raise ValueError(f"convexity margin {margin:.6g} is not positive")


def solve_stationary(p: StationaryProblem, opts: Optional[SolverOptions] = None,
                     initial_active: Optional[np.ndarray] = None) -> ObstacleResult:
    """Solve the stationary problem; same contract as one implicit step."""
    return solve_step(p.grid, p.obstacle, p.source, p.weight, p.lam, p.nl,
                      opts=opts, initial_active=initial_active)


@dataclass(frozen=True)
class LongtimeResult:
    traj: object                     # Trajectory of the long run
    stationary: ObstacleResult       # the limit problem's solution
    gaps: np.ndarray                 # H1 gap to the limit at every stamp
    final_gap: float
    max_gap_increase: float          # worst upward jitter of the gap series
    gap_monotone: bool
    sandwich_violation: float        # worst nodewise amount the limit exceeds a state
    sandwich_ok: bool
    weight_time_independent: bool
    source_above_limit: bool


def run_longtime(data: ProblemData, nl: Nonlinearity, horizon: float,
                 m_per_unit: int = 16, f_inf: Optional[Field] = None,
                 opts: Optional[SolverOptions] = None, quad_pts: int = 8,
                 jitter_tol: float = 1e-10,
                 sandwich_tol: float = 1e-10) -> LongtimeResult:
    """Run to a long horizon and compare against the stationary solution.

    Preconditions for the limit characterization, flagged in the result
    rather than enforced: the weight must not depend on time and the source
    must stay above its limit.  ``f_inf`` defaults to the source sampled at
    the horizon (adequate whenever the decay has died out by then; pass the
    exact limit if it is known, e.g. from a relaxation preset).

    The gap series ``|z_k - z_inf|_H1`` is checked for monotone decay up to
    ``jitter_tol`` and the limit is checked to stay below every state up to
    ``sandwich_tol``.
    """
    from .evolution import run_evolution

    g = data.grid
    x = g.nodes
    m = int(round(horizon * m_per_unit))
    if m < 1:
        raise ValueError("horizon * m_per_unit must be at least one step")

    if f_inf is None:
        if data.source.limit is not None:
            f_inf = Field(g, data.source.limit)
        else:
            f_inf = Field(g, data.source(x, horizon))

    # precondition flags
    t_samples = np.linspace(0.0, horizon, 33)
    w0 = data.weight(x, 0.0)
    w_dev = max(float(np.abs(data.weight(x, t) - w0).max()) for t in t_samples)
    f_above = min(float((data.source(x, t) - f_inf.values).min()) for t in t_samples)

    run_data = replace(data, horizon=float(horizon))
    traj = run_evolution(run_data, nl, m, opts=opts, quad_pts=quad_pts)

    limit = solve_stationary(
        StationaryProblem(grid=g, obstacle=data.initial, source=f_inf,
                          weight=Field(g, w0), lam=data.lam, nl=nl), opts=opts)

    zinf = limit.z.values
    gaps = np.array([norm_h1(g, traj.states[k] - zinf) for k in range(traj.m + 1)])
    increases = np.diff(gaps)
    max_inc = float(increases.max(initial=0.0))
    sandwich = float((zinf[None, :] - traj.states).max())

    return LongtimeResult(
        traj=traj, stationary=limit, gaps=gaps, final_gap=float(gaps[-1]),
        max_gap_increase=max(max_inc, 0.0), gap_monotone=max_inc <= jitter_tol,
        sandwich_violation=max(sandwich, 0.0), sandwich_ok=sandwich <= sandwich_tol,
        weight_time_independent=w_dev <= 1e-12,
        source_above_limit=f_above >= -1e-12)
