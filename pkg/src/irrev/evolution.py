"""Implicit stepping driver: iterate the obstacle step and keep the history.

Each step's obstacle is the previous state, so the discrete trajectory is
nonincreasing in time by construction.  The full history (states,
multipliers, energies, per-step solver metadata) is kept in memory -- these
are desk-scale runs -- and can be thinned only at serialization time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import BC, Field, Grid
from .model import (DiscretizedData, Nonlinearity, ProblemData, ValidationError,
                    discretize_time, validate)
from .obstacle import ObstacleError, ObstacleResult, SolverOptions, solve_step, solve_step_pg


class EvolutionError(RuntimeError):
    """A step solve failed; carries the step index and the partial history."""

    def __init__(self, step: int, partial: "Trajectory", cause: ObstacleError):
        self.step = step
        self.partial = partial
        super().__init__(f"step {step} failed: {cause}")


@dataclass(frozen=True)
class StepMeta:
    k: int
    iters: int
    kkt_residual: float
    n_active: int


@dataclass(frozen=True)
class Trajectory:
    """Discrete history of one run.

    ``states[k]`` is the state at ``times[k]`` (``k = 0..m``),
    ``multipliers[k-1]`` the step multiplier produced on ``(t_{k-1}, t_k]``,
    ``energies[k]`` the energy at ``(states[k], times[k])`` evaluated through
    the single evaluation path in :mod:`irrev.diagnostics`.
    """

    grid: Grid
    times: np.ndarray          # (m+1,)
    states: np.ndarray         # (m+1, n)
    multipliers: np.ndarray    # (m, n)
    energies: np.ndarray       # (m+1,)
    tau: float
    step_meta: tuple
    disc: Optional[DiscretizedData] = None

    @property
    def m(self) -> int:
        return self.times.size - 1

    def state(self, k: int) -> Field:
        return Field(self.grid, self.states[k])

    def multiplier(self, k: int) -> Field:
        if not 1 <= k <= self.m:
            raise IndexError(f"multiplier index {k} outside 1..{self.m}")
        return Field(self.grid, self.multipliers[k - 1])

    def max_movement(self) -> float:
        """Largest nodewise total movement over the run."""
        return float(np.abs(self.states - self.states[0]).max())


def run_evolution(data: ProblemData, nl: Nonlinearity, m: int,
                  opts: Optional[SolverOptions] = None, quad_pts: int = 8,
                  validate_first: bool = True) -> Trajectory:
    """Run the implicit scheme for ``m`` uniform steps up to the horizon.

    Validates the problem data first (raise :class:`ValidationError` on any
    failed hypothesis), averages the data over the step intervals, then
    solves one obstacle step per interval with the previous state as the
    obstacle.  On a per-step solver failure the partial trajectory built so
    far is attached to the raised :class:`EvolutionError`.
    """
    from .diagnostics import energy  # single evaluation path for stored energies

    if validate_first:
        report = validate(data, nl)
        if not report.ok:
            raise ValidationError(report)

    opts = opts or SolverOptions()
    disc = discretize_time(data, m, quad_pts)
    g = data.grid
    n = g.n

    states = np.empty((m + 1, n))
    multipliers = np.zeros((m, n))
    energies = np.empty(m + 1)
    meta: list[StepMeta] = []

    states[0] = data.initial.values
    energies[0] = energy(data, nl, data.initial, 0.0)

    stepper = solve_step_pg if opts.method == "projected_gradient" else solve_step
    for k in range(1, m + 1):
        try:
            res: ObstacleResult = stepper(
                g, states[k - 1], disc.source_avg[k - 1], disc.weight_avg[k - 1],
                data.lam, nl, opts)
        except ObstacleError as exc:
            partial = Trajectory(
                grid=g, times=disc.times[:k], states=states[:k].copy(),
                multipliers=multipliers[:k - 1].copy(), energies=energies[:k].copy(),
                tau=disc.tau, step_meta=tuple(meta), disc=disc)
            raise EvolutionError(k, partial, exc) from exc
        states[k] = res.z.values
        multipliers[k - 1] = res.eta.values
        energies[k] = energy(data, nl, res.z, disc.times[k])
        meta.append(StepMeta(k=k, iters=res.iters, kkt_residual=res.kkt_residual,
                             n_active=int(res.active.size)))

    return Trajectory(grid=g, times=disc.times, states=states,
                      multipliers=multipliers, energies=energies,
                      tau=disc.tau, step_meta=tuple(meta), disc=disc)


# --------------------------------------------------------------------------
# interpolants
# --------------------------------------------------------------------------

def _locate(traj: Trajectory, t: float) -> int:
    """Index k with t in (t_{k-1}, t_k]; 0 for t == 0."""
    T = traj.times[-1]
    if t < -1e-12 * max(1.0, T) or t > T * (1.0 + 1e-12) + 1e-300:
        raise ValueError(f"time {t} outside [0, {T}]")
    t = min(max(t, 0.0), T)
    if t == 0.0:
        return 0
    k = int(np.searchsorted(traj.times, t, side="left"))
    return min(max(k, 1), traj.m)


def interp_linear(traj: Trajectory, t: float) -> Field:
    """Piecewise linear-in-time interpolant of the stored states."""
    k = _locate(traj, t)
    if k == 0:
        return traj.state(0)
    t0, t1 = traj.times[k - 1], traj.times[k]
    theta = (min(max(t, t0), t1) - t0) / (t1 - t0)
    vals = traj.states[k - 1] + theta * (traj.states[k] - traj.states[k - 1])
    return Field(traj.grid, vals)


def interp_constant(traj: Trajectory, t: float) -> Field:
    """Piecewise constant interpolant: the value on ``(t_{k-1}, t_k]`` is
    ``states[k]``.  At ``t == 0`` the initial state is returned (the natural
    left-end extension; the stepping scheme leaves that instant undefined).
    """
    return traj.state(_locate(traj, t))


# --------------------------------------------------------------------------
# serialization: long CSV + JSON manifest
# --------------------------------------------------------------------------

def save_trajectory(traj: Trajectory, directory: str | Path,
                    stem: str = "trajectory", stride: int = 1) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (long format: t, x, z, eta) and ``<stem>.json``.

    Values are printed with 17 significant digits so a round trip through
    :func:`load_trajectory` reproduces them to the last bit.  ``stride``
    thins the stored time stamps (the initial and final stamps are always
    kept).  Multiplier entries at ``t == 0`` are written as ``nan`` (no step
    produced them).
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    json_path = directory / f"{stem}.json"

    keep = sorted(set(range(0, traj.m + 1, stride)) | {0, traj.m})
    x = traj.grid.nodes
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "z", "eta"])
        for k in keep:
            eta_row = traj.multipliers[k - 1] if k >= 1 else np.full(traj.grid.n, np.nan)
            for i in range(traj.grid.n):
                writer.writerow([f"{traj.times[k]:.17g}", f"{x[i]:.17g}",
                                 f"{traj.states[k, i]:.17g}", f"{eta_row[i]:.17g}"])

    manifest = {
        "grid": {"a": traj.grid.a, "b": traj.grid.b, "n": traj.grid.n,
                 "bc_left": traj.grid.bc_left.value, "bc_right": traj.grid.bc_right.value},
        "tau": traj.tau,
        "m": traj.m,
        "stride": stride,
        "kept_stamps": keep,
        "times": [float(t) for t in traj.times[keep]],
        "energies": [float(e) for e in traj.energies[keep]],
        "step_meta": [{"k": s.k, "iters": s.iters, "kkt_residual": s.kkt_residual,
                       "n_active": s.n_active} for s in traj.step_meta],
    }
    with open(json_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def load_trajectory(directory: str | Path, stem: str = "trajectory") -> Trajectory:
    """Rebuild a trajectory from :func:`save_trajectory` output.

    Only the serialized content is restored (no problem data, no interval
    averages); a thinned save loads as a trajectory over the kept stamps.
    """
    directory = Path(directory)
    with open(directory / f"{stem}.json") as fh:
        manifest = json.load(fh)
    gspec = manifest["grid"]
    grid = Grid(a=gspec["a"], b=gspec["b"], n=gspec["n"],
                bc_left=BC(gspec["bc_left"]), bc_right=BC(gspec["bc_right"]))

    times = np.asarray(manifest["times"], dtype=float)
    n, m1 = grid.n, times.size
    states = np.empty((m1, n))
    multipliers = np.full((m1 - 1, n), np.nan)
    with open(directory / f"{stem}.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = list(reader)
    if len(rows) != m1 * n:
        raise ValueError("trajectory CSV does not match the manifest")
    for j, row in enumerate(rows):
        k, i = divmod(j, n)
        states[k, i] = float(row[2])
        if k >= 1:
            multipliers[k - 1, i] = float(row[3])

    meta = tuple(StepMeta(k=s["k"], iters=s["iters"], kkt_residual=s["kkt_residual"],
                          n_active=s["n_active"]) for s in manifest["step_meta"])
    return Trajectory(grid=grid, times=times, states=states, multipliers=multipliers,
                      energies=np.asarray(manifest["energies"], dtype=float),
                      tau=manifest["tau"], step_meta=meta, disc=None)
