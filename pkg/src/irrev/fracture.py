"""1-D phase-field fracture reduction (Ambrosio-Tortorelli type).

On the interval (-1, 1) with the phase field pinned to 0 at both ends and a
zero-flux displacement, the coupled first-order system

    -( (z^2 + delta) u_x )_x = load,
    rate-constrained balance for z with stiffness eps

reduces to a single scalar evolution for z after integrating the first
equation from the left end: with H(x,t) the cumulative load, the
displacement gradient is u_x = -H/(z^2 + delta) and the z-equation becomes
the generic model with

    lam = 1/eps^2,  source = 1/eps^2,  weight = H^2,
    fn(s) = s / (eps * (s^2 + delta)^2).

This module builds those ingredients, recovers the displacement from a
phase field, and drives coupled quasistatic runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import Field, Grid, as_values, forward_jumps
from .model import (Nonlinearity, ProblemData, TimeProfile, ValidationError,
                    constant_profile, validate)
from .obstacle import SolverOptions, solve_unconstrained


class FractureSetupError(RuntimeError):
    """The derived problem violates a solvability hypothesis."""


_trapz = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class ATParams:
    """Regularization length, residual stiffness and the driving load.

    ``load`` must have zero spatial average at every time (the displacement
    problem is pure zero-flux; a nonzero mean load is incompatible).  The
    average is checked by trapezoid quadrature on the grid actually used.
    """

    eps: float
    delta: float
    load: TimeProfile

    def __post_init__(self) -> None:
        if not (self.eps > 0 and self.delta > 0):
            raise ValueError("eps and delta must be positive")

    @property
    def lam(self) -> float:
        return 1.0 / self.eps ** 2

    @property
    def source_value(self) -> float:
        return 1.0 / self.eps ** 2


@dataclass(frozen=True)
class CoupledState:
    """Phase field plus recovered displacement at one instant.

    The displacement solves a pure zero-flux problem, hence is determined
    only up to a constant; the gauge here pins ``u`` to 0 at the left end.
    ``u_full``/``ux_full`` live on all nodes including the endpoints.
    """

    z: Field
    x_full: np.ndarray
    u_full: np.ndarray
    ux_full: np.ndarray
    sigma: np.ndarray       # weight H^2 on the interior nodes
    t: float


def at_nonlinearity(params: ATParams, scan_range: float = 10.0,
                    scan_pts: int = 200_001) -> Nonlinearity:
    """Degradation nonlinearity ``fn(s) = s / (eps*(s^2+delta)^2)``.

    The primitive is analytic (normalized to vanish at 0) and the one-sided
    slope bound is ``max(0, -min fn')`` over ``[-scan_range, scan_range]``,
    found on a dense sample augmented with the interior critical points of
    ``fn'`` at ``s = +-sqrt(delta)`` (where the global minimum
    ``-1/(4*eps*delta^2)`` sits).  The bound is certified only over the
    scanned range; phase fields in practice live in [0, 1].
    """
    eps, delta = params.eps, params.delta

    def fn(s):
        s = np.asarray(s, dtype=float)
        return s / (eps * (s * s + delta) ** 2)

    def primitive(s):
        s = np.asarray(s, dtype=float)
        return 1.0 / (2.0 * eps * delta) - 1.0 / (2.0 * eps * (s * s + delta))

    def deriv(s):
        s = np.asarray(s, dtype=float)
        return (delta - 3.0 * s * s) / (eps * (s * s + delta) ** 3)

    samples = np.linspace(-scan_range, scan_range, scan_pts)
    crit = np.sqrt(delta)
    if crit <= scan_range:
        samples = np.concatenate((samples, [-crit, crit]))
    slope_bound = float(max(0.0, -deriv(samples).min()))

    # |fn| attains its maximum at s = +-sqrt(delta/3)
    s_peak = np.sqrt(delta / 3.0)
    growth = float(abs(fn(s_peak)))

    return Nonlinearity(fn=fn, primitive=primitive, deriv=deriv,
                        slope_bound=slope_bound, growth=growth)


def _cumtrapz(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * np.diff(x) * (y[:-1] + y[1:]))
    return out


def cumulative_load(grid: Grid, params: ATParams, t: float) -> np.ndarray:
    """H on all nodes: trapezoid integral of the load from the left end.

    Checks the zero-average requirement (``|H(right end)|`` must vanish
    within quadrature tolerance) and raises on violation.
    """
    x_full = grid.nodes_full
    h_vals = params.load(x_full, t)
    H = _cumtrapz(x_full, h_vals)
    scale = float(np.abs(H).max())
    if abs(H[-1]) > 1e-8 * scale + 1e-14:
        raise ValueError(
            f"load has nonzero spatial average at t={t:.6g}: "
            f"H(end)={H[-1]:.3g} vs scale {scale:.3g}")
    return H


def load_to_sigma(grid: Grid, params: ATParams) -> TimeProfile:
    """Weight profile ``H(x,t)^2`` induced by the load.

    Grid-bound: H is integrated on the construction grid and linearly
    interpolated at requested coordinates (exact at the grid's own nodes).
    The time derivative is analytic whenever the load's is.
    """
    x_full = grid.nodes_full

    def evaluator(x, t):
        H = cumulative_load(grid, params, t)
        return np.interp(np.asarray(x, float), x_full, H) ** 2

    def dt_evaluator(x, t):
        H = cumulative_load(grid, params, t)
        dH = _cumtrapz(x_full, params.load.dt(x_full, t))
        xq = np.asarray(x, float)
        return 2.0 * np.interp(xq, x_full, H) * np.interp(xq, x_full, dH)

    return TimeProfile(evaluator, dt_evaluator if params.load.has_exact_dt else None)


def recover_displacement(grid: Grid, z: Field | np.ndarray, params: ATParams,
                         t: float) -> CoupledState:
    """Displacement from a phase field: ``u_x = -H/(z^2+delta)``, ``u(-1)=0``.

    The sign follows from integrating the displacement equation from the
    left end; ``u`` itself is the cumulative trapezoid of ``u_x``.  The
    residual stiffness keeps the division regular even at ``z = 0``.
    """
    zv = as_values(grid, z)
    x_full = grid.nodes_full
    H = cumulative_load(grid, params, t)
    z_full = np.concatenate(([0.0], zv, [0.0]))
    ux = -H / (z_full * z_full + params.delta)
    u = _cumtrapz(x_full, ux)
    return CoupledState(z=Field(grid, zv), x_full=x_full, u_full=u, ux_full=ux,
                        sigma=H[1:-1] ** 2, t=t)


def relaxed_profile(grid: Grid, params: ATParams,
                    opts: Optional[SolverOptions] = None) -> Field:
    """Load-free equilibrium phase field: solves -z'' + lam*(z - 1) = 0.

    Close to 1 in the interior with boundary layers of width eps at the
    pinned ends.  With a load that starts from zero this state satisfies
    the initial admissibility condition exactly.
    """
    lam = params.lam
    ones = np.full(grid.n, lam)
    zeros = np.zeros(grid.n)
    linear = Nonlinearity(fn=lambda s: np.zeros_like(np.asarray(s, float)),
                          primitive=lambda s: np.zeros_like(np.asarray(s, float)),
                          slope_bound=0.0, growth=1.0,
                          deriv=lambda s: np.zeros_like(np.asarray(s, float)))
    return solve_unconstrained(grid, ones, zeros, lam, linear, opts=opts)


def build_problem(grid: Grid, params: ATParams, z0: Optional[Field], horizon: float,
                  scan_range: float = 10.0) -> tuple[ProblemData, Nonlinearity]:
    """Assemble the scalar evolution equivalent to the coupled system."""
    if grid.bc_left.value != "dirichlet" or grid.bc_right.value != "dirichlet":
        raise ValueError("the fracture reduction pins the phase field at both ends")
    nl = at_nonlinearity(params, scan_range=scan_range)
    if z0 is None:
        z0 = relaxed_profile(grid, params)
    data = ProblemData(grid=grid, lam=params.lam, weight=load_to_sigma(grid, params),
                       source=constant_profile(params.source_value), initial=z0,
                       horizon=horizon)
    return data, nl


@dataclass(frozen=True)
class FractureResult:
    traj: object
    data: ProblemData
    nl: Nonlinearity
    params: ATParams
    coupled: tuple            # CoupledState at every stored stamp
    at_energies: np.ndarray   # surrogate fracture energy trace


def at_energy(grid: Grid, state: CoupledState, params: ATParams) -> float:
    """Surrogate fracture energy: degraded elastic part + gradient part +
    deviation-from-intact part.  Logged along runs; finiteness is the only
    contract."""
    x_full = state.x_full
    z_full = np.concatenate(([0.0], state.z.values, [0.0]))
    elastic = 0.5 * _trapz((z_full ** 2 + params.delta) * state.ux_full ** 2, x_full)
    dz = forward_jumps(grid, state.z)
    gradient = 0.5 * params.eps * grid.h * float(np.dot(dz, dz))
    tightness = _trapz((1.0 - z_full) ** 2, x_full) / (2.0 * params.eps)
    return float(elastic + gradient + tightness)


def run_fracture(params: ATParams, grid: Grid, horizon: float, m: int,
                 z0: Optional[Field] = None,
                 opts: Optional[SolverOptions] = None, quad_pts: int = 8,
                 scan_range: float = 10.0) -> FractureResult:
    """Coupled quasistatic run: evolve the phase field, recover displacements.

    Builds the derived scalar problem, validates it (reporting the load
    magnitude that would restore the convexity margin when it fails), runs
    the evolution and attaches a recovered displacement and the surrogate
    energy at every stored stamp.
    """
    from .evolution import run_evolution

    data, nl = build_problem(grid, params, z0, horizon, scan_range=scan_range)
    report = validate(data, nl)
    if not report.ok:
        msg = "; ".join(ln for ln in report.lines() if ln.startswith("FAIL"))
        if report.lambda0 <= 0:
            # weight scales with the square of the load amplitude
            sup_w = (data.lam - report.lambda0) / nl.slope_bound
            if sup_w > 0:
                admissible = float(np.sqrt(data.lam / (nl.slope_bound * sup_w)))
                msg += (f"; convexity would hold for load amplitudes scaled "
                        f"below {0.99 * admissible:.4g} of the current one")
        raise FractureSetupError(msg)

    traj = run_evolution(data, nl, m, opts=opts, quad_pts=quad_pts,
                         validate_first=False)
    coupled = tuple(recover_displacement(grid, traj.states[k], params, traj.times[k])
                    for k in range(traj.m + 1))
    energies = np.array([at_energy(grid, st, params) for st in coupled])
    if not np.all(np.isfinite(energies)):
        raise FractureSetupError("surrogate fracture energy is not finite")
    return FractureResult(traj=traj, data=data, nl=nl, params=params,
                          coupled=coupled, at_energies=energies)
