"""Stability equivalence inside Hölder balls and region growth.

A ball ``{tau0 + v : ||v||_q <= eps}`` keeps the number of unstable zeros
when ``eps * max ||grad f||_p`` over the ball stays below ``min |f(jw, tau0)|``
for every frequency, with ``1/p + 1/q = 1``.  Growing the union of such
balls from their boundaries approximates the stability equivalence region
from the inside.

The growth works on an occupancy grid of cell size ``h``: a cell is
covered when its centre lies in an accepted ball.  Each generation samples
the boundaries of the balls accepted in the previous one (at most one
sample per cell, interior samples pruned), computes a ball at every
sample and accepts those that cover at least one new cell.  Acceptance is
decided against the occupancy at the start of the generation, so the
outcome does not depend on the order in which samples are processed.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .charfun import CharFun, RetardedForm
from .errors import PreconditionError, SweepError, TDSError
from .line import BISECTION_RTOL, INFLATION, ZERO_TOL, circular_bisection, retarded_scale
from .polecount import count_unstable
from .sweep import RatioProblem, SweepResult, global_min, quasipoly_tail_bound

log = logging.getLogger(__name__)

MAX_GROW_DIM = 3
MAX_CORNER_DIM = 6


@dataclass(frozen=True)
class HolderPair:
    """Conjugate exponents: ``p`` for the gradient norm, ``q`` for the ball."""

    p: float = 2.0
    q: float = 2.0

    def __post_init__(self):
        p, q = float(self.p), float(self.q)
        if not (p >= 1.0 and q >= 1.0):
            raise TDSError("Hölder exponents must be >= 1")
        if abs(1.0 / p + 1.0 / q - 1.0) > 1e-9:
            raise TDSError(f"p={p:g} and q={q:g} are not Hölder conjugates")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_p(cls, p) -> "HolderPair":
        p = float(p)
        if p == 1.0:
            return cls(1.0, np.inf)
        if np.isinf(p):
            return cls(np.inf, 1.0)
        return cls(p, p / (p - 1.0))

    @classmethod
    def from_q(cls, q) -> "HolderPair":
        pair = cls.from_p(q)
        return cls(pair.q, pair.p)


def qnorm(v, q, axis=-1):
    return np.linalg.norm(np.asarray(v, dtype=float), ord=q, axis=axis)


def sphere_directions(n: int, count: int) -> np.ndarray:
    """Deterministic, roughly uniform Euclidean unit vectors in ``R^n``."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack((np.cos(ang), np.sin(ang)))
    if n == 3:
        # Fibonacci lattice
        i = np.arange(count) + 0.5
        z = 1.0 - 2.0 * i / count
        r = np.sqrt(1.0 - z * z)
        phi = np.pi * (3.0 - np.sqrt(5.0)) * i
        return np.column_stack((r * np.cos(phi), r * np.sin(phi), z))
    raise TDSError(f"boundary sampling supports n <= {MAX_GROW_DIM}")


@dataclass(frozen=True)
class Ball:
    """``{x : ||x - center||_q <= radius}``, to be intersected with the domain."""

    center: tuple
    radius: float
    q: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0.0:
            raise TDSError("ball radius must be positive")

    @property
    def n(self):
        return len(self.center)

    def contains(self, points, rtol=1e-12) -> np.ndarray:
        d = np.atleast_2d(points) - np.asarray(self.center)
        return qnorm(d, self.q) <= self.radius * (1.0 + rtol)

    def boundary(self, count: int) -> np.ndarray:
        u = sphere_directions(self.n, count)
        return np.asarray(self.center) + self.radius * u / qnorm(u, self.q)[:, None]

    def bbox(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def to_dict(self):
        return {"center": list(self.center), "radius": self.radius, "q": _num(self.q)}


@dataclass
class RegionBound:
    eps: float
    omega: float
    method: str
    rounds: int = 0
    sweep: SweepResult | None = None


def _ball_samples(tau0, eps, q, lower):
    """Centre, axis extremes and corner directions of the q-ball, clipped to the domain."""
    n = tau0.size
    pts = [tau0]
    for j in range(n):
        for sgn in (1.0, -1.0):
            v = np.zeros(n)
            v[j] = sgn * eps
            pts.append(tau0 + v)
    k = min(n, MAX_CORNER_DIM)
    for signs in itertools.product((1.0, -1.0), repeat=k):
        v = np.zeros(n)
        v[:k] = signs
        if n > k:
            v[k:] = 1.0
        pts.append(tau0 + eps * v / qnorm(v, q))
    return np.maximum(np.asarray(pts), lower)


def region_bound_general(cf: CharFun, tau0, hp: HolderPair = HolderPair(),
                         inflation=INFLATION, rtol=BISECTION_RTOL) -> RegionBound:
    """Ball radius from ``eps <= min_w |f(jw, tau0)| / max_ball ||grad f||_p``.

    The maximum over the ball is bounded by the phase-free envelope
    ``(sum_g |Q_g,j|)_j`` at the centre, the axis extremes and the corner
    directions, inflated by a fraction of the spread between samples.
    """
    tau0 = cf.point(tau0)
    if not cf.admissible(tau0):
        raise TDSError("start point outside the parameter domain")
    lower = np.asarray(cf.lower_bounds, dtype=float)

    def f0(w):
        return np.abs(cf.evaluate_many(1j * w, tau0[None, :])[0])

    rounds = 0

    def g(eps):
        nonlocal rounds
        rounds += 1
        pts = _ball_samples(tau0, eps, hp.q, lower)

        def den(w):
            env = np.abs(cf.group_gradients(1j * w, pts)).sum(axis=1)
            norms = qnorm(env, hp.p, axis=1)
            hi, lo = norms.max(axis=0), norms.min(axis=0)
            return hi + inflation * (hi - lo)

        box = list(zip(pts.min(axis=0), pts.max(axis=0)))
        tail = quasipoly_tail_bound(cf, tau0, box=box, inflation=inflation)
        if tail.infinite:
            return np.inf, None
        res = global_min(RatioProblem(f0, den, tail, linear_span=10.0 * cf.m))
        return res.value, res

    eps, res, _ = circular_bisection(g, np.inf, rtol)
    return RegionBound(eps, res.omega if res else np.nan, "general", rounds, res)


def region_bound_retarded(rf: RetardedForm, tau0, hp: HolderPair = HolderPair(),
                          **sweep_kw) -> RegionBound:
    """Closed-form ball radius for ``s^m + sum_i P_i(s) exp(-s*tau_i)``.

    ``min_w |f(jw, tau0)| / (sum_i (w |P_i(jw)|)^p)^(1/p)``; no bisection
    since the denominator does not depend on the delays.
    """
    tau0 = np.asarray(tau0, dtype=float)
    active = np.array([k is not None for k in rf.delay_index])
    if not active.any():
        return RegionBound(np.inf, np.nan, "retarded")

    def num(w):
        return np.abs(rf.evaluate(1j * w, tau=tau0))

    def den(w):
        mags = w * np.abs(rf.poly_values(1j * w)[active])
        return qnorm(mags, hp.p, axis=0)

    tail = quasipoly_tail_bound(rf, None)
    res = global_min(RatioProblem(num, den, tail, linear_span=10.0 * rf.m, **sweep_kw))
    at_min = num(np.array([res.omega]))[0] if np.isfinite(res.omega) else np.inf
    if res.value <= 0.0 or at_min <= ZERO_TOL * retarded_scale(rf):
        raise PreconditionError("f(jw, tau0) vanishes on the imaginary axis")
    return RegionBound(res.value, res.omega, "retarded", 0, res)


def region_bound(cf: CharFun, tau0, hp: HolderPair = HolderPair(), retarded=True) -> RegionBound:
    """Retarded closed form when available, general bisection otherwise."""
    rf = cf.to_retarded() if retarded else None
    if rf is not None:
        return region_bound_retarded(rf, cf.point(tau0), hp)
    return region_bound_general(cf, tau0, hp)


# Region growth ----------------------------------------------------------------

@dataclass
class FrontierSample:
    point: tuple
    eps: float | None
    advanced: bool
    error: str = ""


@dataclass
class RegionState:
    params: tuple
    hp: HolderPair
    eta: float
    h: float
    origin: np.ndarray
    extent: tuple
    nu: int
    balls: list = field(default_factory=list)
    occupancy: set = field(default_factory=set)
    generations: int = 0
    history: list = field(default_factory=list)
    frontier: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    capped_faces: set = field(default_factory=set)
    stop_reason: str = ""
    polygon: list | None = None
    domain_lower: np.ndarray | None = None

    @property
    def unbounded_directions(self) -> list:
        """Extent faces reached by the region, such as ``+tau`` (growth was capped)."""
        return sorted(self.capped_faces)

    def to_dict(self):
        return {
            "params": list(self.params),
            "p": _num(self.hp.p),
            "q": _num(self.hp.q),
            "eta": self.eta,
            "h": self.h,
            "extent": [list(map(float, self.extent[0])), list(map(float, self.extent[1]))],
            "nu": self.nu,
            "generations": self.generations,
            "stop_reason": self.stop_reason,
            "capped_faces": self.unbounded_directions,
            "cells": len(self.occupancy),
            "balls": [b.to_dict() for b in self.balls],
            "polygon": self.polygon,
        }

    CSV_HEADER = ("index", "center", "radius")

    def csv_rows(self):
        return [(i, *b.center, b.radius) for i, b in enumerate(self.balls)]


def _num(x):
    return "inf" if np.isinf(x) else float(x)


class _Grid:
    def __init__(self, origin, h, lo, hi, lower):
        self.origin, self.h = origin, h
        self.lo, self.hi = lo, hi
        self.valid_lo = np.maximum(lo, lower)
        self.n = origin.size

    def cell(self, x) -> tuple:
        return tuple(np.floor((np.asarray(x) - self.origin) / self.h).astype(np.int64).tolist())

    def centers(self, idx):
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.h

    def usable(self, centers) -> np.ndarray:
        return np.all((centers >= self.valid_lo) & (centers <= self.hi), axis=-1)

    def cells_in(self, ball: Ball) -> set:
        blo, bhi = ball.bbox()
        blo = np.maximum(blo, self.valid_lo)
        bhi = np.minimum(bhi, self.hi)
        if np.any(blo > bhi):
            return set()
        i0 = np.floor((blo - self.origin) / self.h - 0.5).astype(np.int64)
        i1 = np.ceil((bhi - self.origin) / self.h - 0.5).astype(np.int64)
        axes = [np.arange(a, b + 1) for a, b in zip(i0, i1)]
        idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.n)
        c = self.centers(idx)
        keep = ball.contains(c) & self.usable(c)
        return set(map(tuple, idx[keep].tolist()))

    def interior(self, cell, occupancy) -> bool:
        for off in itertools.product((-1, 0, 1), repeat=self.n):
            nb = tuple(c + o for c, o in zip(cell, off))
            if nb in occupancy:
                continue
            if self.usable(self.centers(nb)[None, :])[0]:
                return False
        return True


def grow_region(cf: CharFun, tau0, hp: HolderPair = HolderPair(), eta=0.5, h=None,
                extent=None, max_generations=60, max_balls=4000, retarded=True,
                workers=None) -> RegionState:
    """Grow a union of certified balls around ``tau0`` (n <= 3).

    ``extent`` is a pair of corner vectors bounding the search box; by
    default it spans 16 initial bound radii around ``tau0`` (clipped to the
    domain).  ``h`` defaults to an eighth of the initial bound.
    Growth stops when a generation adds no cell, or at the generation or
    ball cap.
    """
    tau0 = cf.point(tau0)
    n = cf.n
    if n > MAX_GROW_DIM:
        raise TDSError(f"region growth supports at most {MAX_GROW_DIM} parameters (got {n})")
    if not 0.0 < eta < 1.0:
        raise TDSError("eta must lie in (0, 1)")
    lower = np.asarray(cf.lower_bounds, dtype=float)
    rf = cf.to_retarded() if retarded else None

    def bound(tau):
        if rf is not None:
            return region_bound_retarded(rf, tau, hp).eps
        return region_bound_general(cf, tau, hp).eps

    nu0 = count_unstable(cf, tau0).nu
    eps0 = bound(tau0)
    if extent is None:
        if not np.isfinite(eps0):
            raise TDSError("f does not depend on the parameters; give an explicit extent")
        half = 16.0 * eps0
        lo, hi = np.maximum(tau0 - half, lower), tau0 + half
    else:
        lo, hi = (np.asarray(e, dtype=float) for e in extent)
        if lo.shape != (n,) or hi.shape != (n,) or np.any(lo >= hi):
            raise TDSError("extent must be two corner vectors with lo < hi")
        if np.any(tau0 < lo) or np.any(tau0 > hi):
            raise TDSError("start point outside the extent box")
    if h is None:
        h = (eps0 if np.isfinite(eps0) else float(np.max(hi - lo))) / 8.0
    if not h > 0.0:
        raise TDSError("grid cell size must be positive")
    grid = _Grid(lo.copy(), float(h), lo, hi, lower)
    state = RegionState(tuple(cf.params), hp, eta, float(h), grid.origin, (lo, hi), nu0,
                        domain_lower=lower)

    def radius(eps):
        return eta * min(eps, 2.0 * float(np.max(hi - lo)))

    first = Ball(tuple(tau0), radius(eps0), hp.q)
    _commit(state, grid, [first])
    state.history.append(len(state.occupancy))
    new_balls = [first]
    pool = ThreadPoolExecutor(max_workers=workers)
    try:
        while True:
            if state.generations >= max_generations:
                state.stop_reason = "generation cap"
                break
            samples = _frontier(state, grid, new_balls, lower)
            if not samples:
                state.stop_reason = "no frontier"
                break

            def evaluate(x):
                try:
                    return x, bound(x), ""
                except (PreconditionError, SweepError, TDSError) as err:
                    return x, None, str(err)

            results = list(pool.map(evaluate, samples))
            start = state.occupancy
            candidates, frontier = [], []
            for x, eps, err in results:
                if eps is None or eps <= 0.0:
                    state.skipped.append(FrontierSample(tuple(x), None, False, err))
                    frontier.append(FrontierSample(tuple(x), None, False, err))
                    continue
                ball = Ball(tuple(x), radius(eps), hp.q)
                gain = grid.cells_in(ball) - start
                advanced = bool(gain)
                frontier.append(FrontierSample(tuple(x), float(eps), advanced))
                if advanced:
                    candidates.append(ball)
            state.generations += 1
            state.frontier = frontier
            room = max_balls - len(state.balls)
            if len(candidates) > room:
                candidates = candidates[:room]
                _commit(state, grid, candidates)
                state.history.append(len(state.occupancy))
                state.stop_reason = "ball cap"
                break
            _commit(state, grid, candidates)
            state.history.append(len(state.occupancy))
            log.debug("generation %d: %d samples, %d balls, %d cells", state.generations,
                      len(samples), len(candidates), len(state.occupancy))
            if not candidates:
                state.stop_reason = "converged"
                break
            new_balls = candidates
    finally:
        pool.shutdown()
    if n == 2:
        state.polygon = _polygon(state, grid, tau0)
    return state


def _commit(state: RegionState, grid: _Grid, balls):
    # union is commutative; ball order is the deterministic sample order
    cells = set(state.occupancy)
    for b in balls:
        cells |= grid.cells_in(b)
        blo, bhi = b.bbox()
        for j, name in enumerate(state.params):
            if bhi[j] >= grid.hi[j]:
                state.capped_faces.add(f"+{name}")
            # the lower face only caps growth when it lies above the domain bound
            if blo[j] <= grid.lo[j] and grid.lo[j] > grid.valid_lo[j] - 1e-12 \
                    and grid.lo[j] > _lower_bound(state, j):
                state.capped_faces.add(f"-{name}")
    state.balls.extend(balls)
    state.occupancy = cells


def _lower_bound(state, j):
    return state.domain_lower[j]


def _frontier(state: RegionState, grid: _Grid, balls, lower) -> list:
    """One boundary sample per cell, skipping samples inside the union."""
    picked = {}
    centers = np.array([b.center for b in state.balls])
    radii = np.array([b.radius for b in state.balls])
    for b in balls:
        if grid.n == 1:
            count = 2
        elif grid.n == 2:
            count = int(min(max(16, np.ceil(2.0 * np.pi * b.radius / grid.h) * 2), 4096))
        else:
            count = int(min(max(32, np.ceil(4.0 * np.pi * (b.radius / grid.h) ** 2) * 2), 20000))
        pts = b.boundary(count)
        ok = np.all((pts >= lower - 1e-12) & (pts >= grid.lo) & (pts <= grid.hi), axis=1)
        for x in pts[ok]:
            cell = grid.cell(x)
            if cell in picked:
                continue
            d = qnorm(centers - x, state.hp.q)
            if np.any(d < radii * (1.0 - 1e-9)):
                continue
            if grid.interior(cell, state.occupancy):
                continue
            picked[cell] = np.maximum(x, lower)
    return [picked[c] for c in sorted(picked)]


def _polygon(state: RegionState, grid: _Grid, tau0):
    """Outline of the union of balls (component containing the start point)."""
    from shapely.geometry import Point, Polygon, box
    from shapely.ops import unary_union

    shapes = [Polygon(b.boundary(128)) for b in state.balls]
    union = unary_union(shapes).intersection(box(*grid.valid_lo, *grid.hi))
    if union.is_empty:
        return None
    parts = getattr(union, "geoms", [union])
    start = Point(*tau0)
    polys = [g for g in parts if g.geom_type == "Polygon"]
    if not polys:
        return None
    main = min(polys, key=lambda g: (g.distance(start), -g.area))
    return [[float(x), float(y)] for x, y in main.exterior.coords]
