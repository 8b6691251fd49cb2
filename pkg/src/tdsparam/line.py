"""Stability equivalence along a ray or curve in parameter space.

A Rouché step bound certifies that the number of unstable zeros does not
change on ``[theta, theta + delta_bar)``.  Iterating ``theta += eta *
delta_bar`` converges to the first crossing of the imaginary axis, or
runs past the divergence cap if there is none.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .charfun import CharFun, RetardedForm
from .errors import PreconditionError, SweepError, TDSError
from .sweep import RatioProblem, SweepResult, global_min, min_modulus, quasipoly_tail_bound

log = logging.getLogger(__name__)

N_SAMPLES = 65
INFLATION = 0.1
BISECTION_RTOL = 1e-3
# min |f| on the axis below ZERO_TOL * coefficient scale counts as a crossing.
ZERO_TOL = 1e-10


@dataclass(frozen=True)
class Curve:
    """Smooth parameter curve ``tau(theta)`` with derivative ``tau'(theta)``."""

    point: Callable[[float], np.ndarray]
    tangent: Callable[[float], np.ndarray]
    is_line: bool = False

    @classmethod
    def line(cls, tau0, direction) -> "Curve":
        tau0 = np.asarray(tau0, dtype=float)
        d = np.asarray(direction, dtype=float)
        return cls(lambda th: tau0 + th * d, lambda th: d, True)


def unit(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float).reshape(-1)
    norm = np.linalg.norm(d)
    if not np.isfinite(norm) or norm == 0.0:
        raise TDSError("direction must be a non-zero finite vector")
    return d / norm


def domain_exit(cf: CharFun, tau0, direction) -> float:
    """Largest theta keeping ``tau0 + theta*direction`` inside the domain."""
    tau0 = np.asarray(tau0, dtype=float)
    lb = np.asarray(cf.lower_bounds)
    out = np.inf
    for t, d, b in zip(tau0, direction, lb):
        if d < 0:
            out = min(out, (t - b) / -d)
    return max(out, 0.0)


def coefficient_scale(cf: CharFun, tau) -> float:
    alpha, _ = cf.coefficients(np.asarray(tau, dtype=float)[None, :])
    return 1.0 + float(np.sum(np.abs(alpha)))


@dataclass
class StepBound:
    delta: float
    omega: float
    method: str
    rounds: int = 0
    domain_limited: bool = False
    sweep: SweepResult | None = None


def _chebyshev_nodes(k):
    # Chebyshev-Lobatto points on [0, 1], endpoints included
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(k) / (k - 1)))


def step_bound_retarded(rf: RetardedForm, theta0=0.0, **sweep_kw) -> StepBound:
    """Delta-independent step bound for retarded forms along a ray.

    ``min_w |f(jw, theta0)| / sum_i w |a_i P_i(jw)|``.
    """
    if rf.a is None:
        raise TDSError("retarded form carries no ray; use CharFun.to_retarded(tau0, direction)")
    if not np.any(rf.a):
        return StepBound(np.inf, np.nan, "retarded")
    s_poly_cache = {}

    def polys(w):
        key = w.tobytes()
        if key not in s_poly_cache:
            s_poly_cache.clear()
            s_poly_cache[key] = rf.poly_values(1j * w)
        return s_poly_cache[key]

    def num(w):
        return np.abs(rf.evaluate(1j * w, theta0))

    weights = np.abs(rf.a)

    def den(w):
        return w * np.sum(weights[:, None] * np.abs(polys(w)), axis=0)

    tail = quasipoly_tail_bound(rf, None, weights=weights)
    res = global_min(RatioProblem(num, den, tail, linear_span=10.0 * rf.m, **sweep_kw))
    at_min = num(np.array([res.omega]))[0] if np.isfinite(res.omega) else np.inf
    if res.value <= 0.0 or at_min <= ZERO_TOL * retarded_scale(rf):
        raise PreconditionError("f(jw, tau(theta0)) vanishes on the imaginary axis")
    return StepBound(res.value, res.omega, "retarded", 0, False, res)


def retarded_scale(rf: RetardedForm) -> float:
    return 1.0 + float(sum(np.sum(np.abs(c)) for c in rf.polys))


def _segment_ratio(cf, curve, theta0, delta, f0, tau_start, n_samples, inflation):
    betas = theta0 + delta * _chebyshev_nodes(n_samples)
    taus = np.stack([curve.point(b) for b in betas])
    tangents = np.stack([np.asarray(curve.tangent(b), dtype=float) for b in betas])
    if not all(cf.admissible(t) for t in taus):
        raise TDSError("segment leaves the parameter domain")

    # coefficients of Q_g . tangent as polynomials in s, per sample
    C = np.einsum("kgnp,kn->kgp", cf.group_polynomials(taus), tangents)

    def den(w):
        pw = cf.s_powers(1j * np.asarray(w, dtype=float))[: C.shape[-1]]
        env = np.abs(C @ pw).sum(axis=1)
        hi, lo = env.max(axis=0), env.min(axis=0)
        return hi + inflation * (hi - lo)

    box = list(zip(taus.min(axis=0), taus.max(axis=0)))
    if curve.is_line:
        tail = quasipoly_tail_bound(cf, tau_start, box=box, inflation=inflation,
                                    direction=tangents[0])
    else:
        # tangent varies: 1-norm gradient bound scaled by the largest tangent entry,
        # spread bounded by the full envelope
        tail = quasipoly_tail_bound(cf, tau_start, box=box, inflation=0.0)
        scale = float(np.max(np.abs(tangents))) * (1.0 + inflation)
        tail = type(tail)(tail.num, tail.den * scale)
    return RatioProblem(f0, den, tail, linear_span=10.0 * cf.m)


def step_bound_general(cf: CharFun, tau0=None, direction=None, theta0=0.0, curve=None,
                       limit=np.inf, n_samples=N_SAMPLES, inflation=INFLATION,
                       rtol=BISECTION_RTOL) -> StepBound:
    """Step bound solving ``delta <= min_w |f| / max_segment |df/dtheta|`` by bisection.

    The maximum over the segment is bounded by sampling, at Chebyshev
    nodes, the phase-free envelope ``sum_g |Q_g . tau'|`` of the
    directional derivative (one term per distinct delay), inflated by
    ``inflation`` times the observed spread across the samples.  ``limit``
    caps the step (distance to the domain boundary).
    """
    if curve is None:
        curve = Curve.line(cf.point(tau0), unit(direction))
        limit = min(limit, domain_exit(cf, curve.point(theta0), unit(direction)))
    tau_start = cf.point(curve.point(theta0))

    def f0(w):
        return np.abs(cf.evaluate_many(1j * w, tau_start[None, :])[0])

    rounds = 0

    def g(delta):
        nonlocal rounds
        rounds += 1
        rp = _segment_ratio(cf, curve, theta0, delta, f0, tau_start, n_samples, inflation)
        if rp.tail.infinite:
            return np.inf, None
        res = global_min(rp)
        return res.value, res

    delta, res, limited = circular_bisection(g, limit, rtol)
    return StepBound(delta, res.omega if res else np.nan, "general", rounds, limited, res)


def circular_bisection(g, limit=np.inf, rtol=BISECTION_RTOL, max_rounds=80):
    """Largest ``x`` (up to ``limit``) with ``x <= g(x)`` for non-increasing ``g``.

    ``g`` returns ``(value, payload)``.  Returns ``(x, payload at x,
    limited)``; ``limited`` is true when ``limit`` was the binding
    constraint.  Every evaluation narrows both ends: if ``c`` is feasible
    the answer is at most ``g(c)``, otherwise ``g(c)`` itself is feasible.
    """
    g0, res0 = g(0.0)
    if g0 <= 0.0:
        raise PreconditionError("f(jw, tau) vanishes on the imaginary axis at the start point")
    if not np.isfinite(g0) and not np.isfinite(limit):
        return np.inf, res0, False
    hi = min(g0, limit)
    ghi, reshi = g(hi)
    if hi <= ghi:
        return hi, reshi, hi >= limit
    lo, reslo = ghi, None
    if lo == 0.0:
        reslo = res0
    for _ in range(max_rounds):
        if lo > 0.0 and hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        gm, resm = g(mid)
        if mid <= gm:
            lo, reslo = mid, resm
            hi = min(hi, gm)
        else:
            hi = mid
            if gm > lo:
                lo, reslo = gm, None
    if reslo is None:
        _, reslo = g(lo)
    return lo, reslo, False


# Ray iteration ---------------------------------------------------------------

@dataclass
class RayTask:
    cf: CharFun
    tau0: np.ndarray
    direction: np.ndarray | None = None
    eta: float = 0.5
    delta: float = 1e-4
    theta_max: float | None = None
    theta0: float = 0.0
    curve: Curve | None = None
    retarded: bool = True
    max_steps: int = 10000

    def __post_init__(self):
        self.tau0 = self.cf.point(self.tau0)
        if self.curve is None:
            if self.direction is None:
                raise TDSError("a direction or a curve is required")
            self.direction = unit(self.direction)
            if self.direction.size != self.cf.n:
                raise TDSError("direction dimension does not match the parameters")
        if self.theta_max is None:
            self.theta_max = 100.0 * (1.0 + float(np.max(np.abs(self.tau0), initial=0.0)))
        if not 0.0 < self.eta < 1.0:
            raise TDSError("eta must lie in (0, 1)")
        if self.delta <= 0.0 or self.theta_max <= 0.0:
            raise TDSError("delta and theta_max must be positive")
        if not 0.0 <= self.theta0 < self.theta_max:
            raise TDSError("theta0 must lie in [0, theta_max)")

    def point(self, theta):
        if self.curve is not None:
            return np.asarray(self.curve.point(theta), dtype=float)
        return self.tau0 + theta * self.direction


@dataclass
class Step:
    k: int
    theta: float
    delta: float
    delta_bar: float
    omega: float
    min_abs_f: float


@dataclass
class LineTrace:
    """Iterates of the ray algorithm and the verdict.

    ``verdict`` is CONVERGED (``theta_lim`` estimates the first crossing),
    DIVERGED (passed ``theta_max``), DOMAIN_EDGE (the ray reached the
    boundary of the parameter domain without crossing) or FAILED.
    """

    steps: list = field(default_factory=list)
    verdict: str = "FAILED"
    theta_lim: float | None = None
    reason: str = ""
    omega_crossing: float | None = None
    method: str = ""

    CSV_HEADER = ("k", "theta", "delta", "omega_min", "min_abs_f")

    def csv_rows(self):
        return [(s.k, s.theta, s.delta, s.omega, s.min_abs_f) for s in self.steps]

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "theta_lim": self.theta_lim,
            "reason": self.reason,
            "omega_crossing": self.omega_crossing,
            "method": self.method,
            "steps": len(self.steps),
        }


def run_ray(task: RayTask) -> LineTrace:
    """Iterate ``theta_{k+1} = theta_k + eta * delta_bar(theta_k)``.

    Uses the retarded fast path when the characteristic function reduces
    to retarded form along a straight ray, the general bisection path
    otherwise.
    """
    cf = task.cf
    trace = LineTrace()
    rf = None
    if task.curve is None and task.retarded:
        rf = cf.to_retarded(task.tau0, task.direction)
    trace.method = "retarded" if rf is not None else "general"
    exit_theta = domain_exit(cf, task.tau0, task.direction) if task.curve is None else np.inf
    theta = task.theta0
    for k in range(task.max_steps):
        tau = task.point(theta)
        try:
            mm = min_modulus(cf, tau)
            if mm.value <= ZERO_TOL * coefficient_scale(cf, tau):
                raise PreconditionError(
                    f"f(jw, tau(theta)) vanishes at w={mm.omega:.6g} (theta={theta:.6g})")
            if rf is not None:
                bound = step_bound_retarded(rf, theta)
                if theta + bound.delta >= exit_theta:
                    bound.delta, bound.domain_limited = exit_theta - theta, True
            else:
                bound = step_bound_general(cf, theta0=theta, curve=task.curve or
                                           Curve.line(task.tau0, task.direction),
                                           limit=exit_theta - theta)
        except (PreconditionError, SweepError, TDSError) as err:
            trace.verdict, trace.reason = "FAILED", str(err)
            trace.theta_lim = theta if trace.steps else None
            return trace
        step = task.eta * bound.delta
        trace.steps.append(Step(k, theta, step, bound.delta, bound.omega, mm.value))
        log.debug("k=%d theta=%.9g delta_bar=%.6g omega=%.6g", k, theta, bound.delta, bound.omega)
        if bound.domain_limited:
            trace.verdict, trace.theta_lim = "DOMAIN_EDGE", exit_theta
            trace.reason = "ray reached the parameter-domain boundary without a crossing"
            return trace
        theta = theta + step
        if step <= task.delta:
            trace.verdict, trace.theta_lim = "CONVERGED", theta
            try:
                trace.omega_crossing = min_modulus(cf, task.point(theta)).omega
            except (SweepError, TDSError):
                trace.omega_crossing = bound.omega
            return trace
        if theta >= task.theta_max:
            trace.verdict, trace.theta_lim = "DIVERGED", theta
            trace.reason = f"theta exceeded {task.theta_max:g}"
            return trace
    trace.verdict, trace.reason = "FAILED", f"no termination after {task.max_steps} steps"
    trace.theta_lim = theta
    return trace


def fan_directions(count: int) -> np.ndarray:
    """Uniform angular fan of unit directions in the plane."""
    if count < 1:
        raise TDSError("fan needs at least one direction")
    ang = 2.0 * np.pi * np.arange(count) / count
    return np.column_stack((np.cos(ang), np.sin(ang)))


def run_fan(cf: CharFun, tau0, directions, workers=None, **task_kw) -> list:
    """Independent rays from one start point; results in direction order."""
    directions = [np.asarray(d, dtype=float) for d in directions]
    if not directions:
        raise TDSError("empty direction list")
    tasks = [RayTask(cf, tau0, d, **task_kw) for d in directions]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_ray, tasks))
