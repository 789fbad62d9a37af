"""Continuum problem description, hypothesis validation and time discretization.

The evolution being simulated is

    (rate constraint)  dz/dt <= 0,
    (force balance)    -z'' + lam*z + weight(x,t)*fn(z) <= source(x,t),
    (complementarity)  dz/dt * ( -z'' + lam*z + weight*fn(z) - source ) = 0,

with homogeneous endpoint conditions carried by the grid tags.  This module
houses the data of that problem (coefficients, source, initial state), checks
the solvability hypotheses before any solver runs, and produces the
interval-averaged data used by the implicit stepping scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .grid import Field, Grid, neg_laplacian

#: default absolute tolerance for the nodewise admissibility check of the
#: initial state
TOL_ADMISS = 1e-9


class ValidationError(RuntimeError):
    """Raised by drivers when a problem fails its hypothesis checks."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        failed = ", ".join(item.name for item in report.items if not item.passed)
        super().__init__(f"problem data failed validation: {failed}")


@dataclass(frozen=True)
class Nonlinearity:
    """Scalar reaction term with the structure the step problems rely on.

    Attributes
    ----------
    fn : callable
        Vectorized evaluator ``s -> fn(s)``.
    primitive : callable
        Antiderivative of ``fn`` with ``primitive(0) == 0``.
    slope_bound : float
        Constant ``L >= 0`` such that ``s -> fn(s) + L*s`` is nondecreasing
        (one-sided slope bound from below).  Enters the convexity margin
        ``lam - L*sup(weight)`` that every solve requires to be positive.
    growth : float
        Constant ``C > 0`` with ``|fn(s)| <= C*(|s|+1)`` for all ``s``.
    deriv : callable, optional
        Vectorized derivative, used by the Newton inner solver.  When absent
        a centered difference with step ``1e-6*(1+|s|)`` is substituted.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    primitive: Callable[[np.ndarray], np.ndarray]
    slope_bound: float
    growth: float
    deriv: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self) -> None:
        if self.slope_bound < 0:
            raise ValueError("slope_bound must be >= 0")
        if self.growth <= 0:
            raise ValueError("growth must be > 0")

    def deriv_or_fd(self, s: np.ndarray) -> np.ndarray:
        if self.deriv is not None:
            return np.asarray(self.deriv(s), dtype=float)
        e = 1e-6 * (1.0 + np.abs(s))
        return (np.asarray(self.fn(s + e), float) - np.asarray(self.fn(s - e), float)) / (2.0 * e)

    # sampled surrogates for the structural hypotheses ------------------

    def max_one_sided_violation(self, lo: float, hi: float, n: int = 400,
                                seed: int = 0) -> float:
        """Worst violation of ``(fn(t)-fn(s))*(t-s) + L*(t-s)^2 >= 0`` on random pairs."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(lo, hi, n)
        s = rng.uniform(lo, hi, n)
        ft = np.asarray(self.fn(t), float)
        fs = np.asarray(self.fn(s), float)
        expr = (ft - fs) * (t - s) + self.slope_bound * (t - s) ** 2
        return float(max(0.0, -expr.min(initial=0.0)))

    def max_growth_violation(self, lo: float, hi: float, n: int = 400,
                             seed: int = 0) -> float:
        """Worst violation of ``|fn(s)| <= growth*(|s|+1)`` on a wide sample."""
        rng = np.random.default_rng(seed)
        s = rng.uniform(lo, hi, n)
        expr = self.growth * (np.abs(s) + 1.0) - np.abs(np.asarray(self.fn(s), float))
        return float(max(0.0, -expr.min(initial=0.0)))


def estimate_slope_bound(fn: Callable[[np.ndarray], np.ndarray], lo: float,
                         hi: float, n: int = 20001) -> float:
    """Sampled estimate of the one-sided slope bound ``L`` of ``fn`` on ``[lo, hi]``.

    Not certified: it scans difference quotients of ``fn`` on a fine grid and
    returns ``max(0, -min slope)``.  Useful for black-box nonlinearities; the
    validation report labels any use of it accordingly.
    """
    s = np.linspace(lo, hi, n)
    v = np.asarray(fn(s), dtype=float)
    slopes = np.diff(v) / np.diff(s)
    return float(max(0.0, -slopes.min()))


class TimeProfile:
    """Space-time coefficient ``(x, t) -> value`` with a time derivative.

    ``evaluator(x, t)`` must accept a 1-D coordinate array and a scalar time
    and return an array of the same shape (scalar broadcasting is handled).
    If no analytic time derivative is supplied a centered difference with
    step ``1e-6 * max(1, |t|)`` is used and ``has_exact_dt`` is False; the
    energy-balance diagnostics flag their reports in that case.

    Evaluators must be pure functions: no hidden state, same output for the
    same input.  That contract is what makes problem data shareable across
    threads and runs reproducible.
    """

    def __init__(self,
                 evaluator: Callable[[np.ndarray, float], np.ndarray],
                 dt_evaluator: Optional[Callable[[np.ndarray, float], np.ndarray]] = None,
                 limit: Optional[np.ndarray] = None):
        self._eval = evaluator
        self._dt = dt_evaluator
        #: known t -> infinity limit on the grid nodes, when the profile has one
        self.limit = None if limit is None else np.asarray(limit, dtype=float)

    @property
    def has_exact_dt(self) -> bool:
        return self._dt is not None

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        out = np.asarray(self._eval(np.asarray(x, dtype=float), float(t)), dtype=float)
        return np.broadcast_to(out, np.shape(x)).astype(float, copy=False)

    def dt(self, x: np.ndarray, t: float) -> np.ndarray:
        if self._dt is not None:
            out = np.asarray(self._dt(np.asarray(x, dtype=float), float(t)), dtype=float)
            return np.broadcast_to(out, np.shape(x)).astype(float, copy=False)
        e = 1e-6 * max(1.0, abs(float(t)))
        return (self(x, t + e) - self(x, t - e)) / (2.0 * e)


def constant_profile(value: float) -> TimeProfile:
    v = float(value)
    return TimeProfile(lambda x, t: np.full(np.shape(x), v),
                       lambda x, t: np.zeros(np.shape(x)),
                       limit=None)


@dataclass(frozen=True)
class ProblemData:
    """Everything that defines one evolution run.

    Attributes
    ----------
    grid : Grid
    lam : float
        Zeroth-order coefficient, ``>= 0``.
    weight : TimeProfile
        Nonnegative coefficient multiplying the nonlinearity.
    source : TimeProfile
        Right-hand side.
    initial : Field
        Starting state; must be admissible (checked by :func:`validate`).
    horizon : float
        Final time ``T > 0``.
    source_floor : Field, optional
        Lower envelope of the source in time.  ``None`` means "use the
        default envelope" computed by :func:`default_lower_envelope`.
    """

    grid: Grid
    lam: float
    weight: TimeProfile
    source: TimeProfile
    initial: Field
    horizon: float
    source_floor: Optional[Field] = None

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        if self.initial.grid != self.grid:
            raise ValueError("initial state lives on a different grid")


@dataclass(frozen=True)
class DiscretizedData:
    """Interval averages of the time-dependent data on a uniform step grid.

    ``source_avg[k-1]`` and ``weight_avg[k-1]`` hold the averages over
    ``(t_{k-1}, t_k]`` for ``k = 1..m``; ``source_init``/``weight_init`` are
    the exact values at ``t = 0``.
    """

    m: int
    tau: float
    times: np.ndarray            # (m+1,), t_k = k*tau
    source_avg: np.ndarray       # (m, n)
    weight_avg: np.ndarray       # (m, n)
    source_init: np.ndarray      # (n,)
    weight_init: np.ndarray      # (n,)


@dataclass(frozen=True)
class CheckItem:
    name: str
    value: float
    tolerance: float
    passed: bool
    note: str = ""


@dataclass(frozen=True)
class ValidationReport:
    items: tuple
    lambda0: float
    admissibility_residual: float

    @property
    def ok(self) -> bool:
        return all(item.passed for item in self.items)

    def lines(self) -> list[str]:
        out = []
        for it in self.items:
            status = "PASS" if it.passed else "FAIL"
            note = f"  ({it.note})" if it.note else ""
            out.append(f"{status}  {it.name}: value={it.value:.6g} tol={it.tolerance:.3g}{note}")
        return out


def validate(data: ProblemData, nl: Nonlinearity, tol_admiss: float = TOL_ADMISS,
             n_time_samples: int = 65, sample_range: float = 10.0,
             seed: int = 0) -> ValidationReport:
    """Check the solvability hypotheses; report, never abort.

    Items checked:

    * ``coercivity_margin``: ``lam - L * sup(weight)`` over sampled (x, t)
      must be strictly positive, otherwise the per-step minimization is not
      convex and every solver refuses to run.
    * ``initial_admissibility``: nodewise residual of the force balance at
      the initial state, ``max(-z0'' + lam*z0 + weight(.,0)*fn(z0) -
      source(.,0)) <= tol_admiss``.
    * ``weight_nonnegative`` and ``source_above_floor``: sampled sign and
      envelope conditions on the data.
    * ``nonlinearity_one_sided`` / ``nonlinearity_growth``: sampled
      surrogates for the structural bounds on ``fn``.

    Callers decide whether to abort on failure; drivers raise
    :class:`ValidationError` when the report is not clean.
    """
    g = data.grid
    x = g.nodes
    ts = np.linspace(0.0, data.horizon, n_time_samples)

    w_samples = np.array([data.weight(x, t) for t in ts])
    f_samples = np.array([data.source(x, t) for t in ts])
    if not np.all(np.isfinite(w_samples)) or not np.all(np.isfinite(f_samples)):
        raise ValueError("weight/source evaluator returned non-finite values")

    sup_w = float(w_samples.max())
    lambda0 = data.lam - nl.slope_bound * sup_w

    z0 = data.initial.values
    resid = (neg_laplacian(g, z0).values + data.lam * z0
             + data.weight(x, 0.0) * np.asarray(nl.fn(z0), float)
             - data.source(x, 0.0))
    r = float(resid.max())

    if data.source_floor is not None:
        floor = data.source_floor.values
        floor_tol = 1e-12
        floor_note = "user-supplied floor"
    else:
        # the default envelope is exact only up to its own quadrature error,
        # and it is tight for monotone decay; compare at quadrature scale
        n_quad = max(1024, int(256 * data.horizon))
        floor = default_lower_envelope(data, n_quad=n_quad).values
        floor_tol = (100.0 * (data.horizon / n_quad) ** 2
                     * (1.0 + float(np.abs(f_samples).max())) + 1e-12)
        floor_note = "default envelope, quadrature-scale tolerance"
    floor_gap = float((f_samples - floor[None, :]).min())
    w_min = float(w_samples.min())

    lo, hi = -sample_range, sample_range
    one_sided = nl.max_one_sided_violation(lo, hi, seed=seed)
    growth = nl.max_growth_violation(lo, hi, seed=seed)

    items = (
        CheckItem("coercivity_margin", lambda0, 0.0, lambda0 > 0.0,
                  "lam - L*sup(weight) must be positive"),
        CheckItem("initial_admissibility", r, tol_admiss, r <= tol_admiss,
                  "force-balance residual of the initial state"),
        CheckItem("weight_nonnegative", w_min, 0.0, w_min >= -1e-14),
        CheckItem("source_above_floor", floor_gap, floor_tol,
                  floor_gap >= -floor_tol, floor_note),
        CheckItem("nonlinearity_one_sided", one_sided, 1e-12, one_sided <= 1e-12,
                  f"sampled on [{lo}, {hi}]"),
        CheckItem("nonlinearity_growth", growth, 1e-12, growth <= 1e-12,
                  f"sampled on [{lo}, {hi}]"),
    )
    return ValidationReport(items=items, lambda0=lambda0, admissibility_residual=r)


def discretize_time(data: ProblemData, m: int, quad_pts: int = 8) -> DiscretizedData:
    """Average the time-dependent data over the step intervals.

    ``source_avg[k-1](x) = (1/tau) * integral of source(x, .) over
    (t_{k-1}, t_k]`` by the composite midpoint rule with ``quad_pts``
    subintervals, which is exact for data linear in t.  Aborts with the
    offending location if an evaluator returns a non-finite value.
    """
    if m < 1:
        raise ValueError("need at least one time step")
    if quad_pts < 1:
        raise ValueError("need at least one quadrature point")
    g = data.grid
    x = g.nodes
    tau = data.horizon / m
    times = tau * np.arange(m + 1)

    def averages(profile: TimeProfile, label: str) -> np.ndarray:
        out = np.empty((m, g.n))
        for k in range(1, m + 1):
            pts = times[k - 1] + (np.arange(quad_pts) + 0.5) * (tau / quad_pts)
            acc = np.zeros(g.n)
            for t in pts:
                v = profile(x, t)
                if not np.all(np.isfinite(v)):
                    bad = int(np.flatnonzero(~np.isfinite(v))[0])
                    raise ValueError(
                        f"{label} evaluator returned a non-finite value at "
                        f"x={x[bad]:.6g}, t={t:.6g}")
                acc += v
            out[k - 1] = acc / quad_pts
        return out

    f0 = data.source(x, 0.0)
    w0 = data.weight(x, 0.0)
    if not (np.all(np.isfinite(f0)) and np.all(np.isfinite(w0))):
        raise ValueError("source/weight evaluator returned non-finite values at t=0")

    return DiscretizedData(
        m=m, tau=tau, times=times,
        source_avg=averages(data.source, "source"),
        weight_avg=averages(data.weight, "weight"),
        source_init=f0, weight_init=w0,
    )


def default_lower_envelope(data: ProblemData, n_quad: int = 1024) -> Field:
    """Default lower envelope of the source in time.

    Returns ``source(x, 0) - integral_0^T |d/dt source(x, s)| ds`` computed
    with the composite midpoint rule (``n_quad`` subintervals), which bounds
    the source from below whenever its time derivative is integrable.
    """
    g = data.grid
    x = g.nodes
    T = data.horizon
    pts = (np.arange(n_quad) + 0.5) * (T / n_quad)
    acc = np.zeros(g.n)
    for t in pts:
        d = np.abs(data.source.dt(x, t))
        if not np.all(np.isfinite(d)):
            raise ValueError(f"source time derivative non-finite at t={t:.6g}")
        acc += d
    return Field(g, data.source(x, 0.0) - acc * (T / n_quad))
