"""Global minimisation of frequency ratios N(w)/D(w) over w >= 0.

The sweep evaluates a mixed linear/logarithmic grid, refines the best
brackets by golden-section search and then extends the upper cut-off until
an analytic lower bound of the ratio (the *tail bound*) shows that nothing
beyond the cut can undercut the minimum found.  When the infimum is only
approached as w -> inf the tail value is returned and the result is
flagged as not attained.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P

from . import expr as ex
from .charfun import CharFun, RetardedForm
from .errors import IntervalError, SweepError

log = logging.getLogger(__name__)

_GOLD = (np.sqrt(5.0) - 1.0) / 2.0


def _trim(c):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    nz = np.nonzero(c)[0]
    return c[: nz[-1] + 1] if nz.size else np.zeros(1)


@dataclass(frozen=True)
class TailBound:
    """Rational lower bound ``num(w)/den(w)`` valid for ``w >= omega_tail``.

    Coefficients are in ascending order.  A zero denominator means the
    ratio is unbounded (no parameter sensitivity).
    """

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "num", _trim(self.num))
        object.__setattr__(self, "den", _trim(self.den))

    @property
    def infinite(self) -> bool:
        return not np.any(self.den)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        n = P.polyval(w, self.num)
        if self.infinite:
            return np.where(n > 0, np.inf, -np.inf)
        d = P.polyval(w, self.den)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(d > 0, n / np.where(d > 0, d, 1.0), np.where(n > 0, np.inf, -np.inf))

    @cached_property
    def omega_tail(self) -> float:
        """Beyond this frequency numerator and denominator keep their sign."""
        if self.num[-1] <= 0:
            return np.inf
        edges = [0.0]
        for c in (self.num, self.den):
            if c.size > 1 and np.any(c):
                r = P.polyroots(c)
                real = r[np.abs(r.imag) <= 1e-9 * (1 + np.abs(r.real))].real
                if real.size:
                    edges.append(float(real.max()))
        return max(edges)

    @cached_property
    def limit(self) -> float:
        if self.infinite or self.num.size > self.den.size:
            return np.inf if self.num[-1] > 0 else -np.inf
        if self.num.size < self.den.size:
            return 0.0
        return float(self.num[-1] / self.den[-1])

    def inf_from(self, w0: float) -> float:
        """Exact infimum of the bound over ``[w0, inf)`` (``w0 >= omega_tail``)."""
        if self.infinite:
            return np.inf
        cand = [float(self(w0)), self.limit]
        crit = P.polysub(P.polymul(P.polyder(self.num), self.den),
                         P.polymul(self.num, P.polyder(self.den)))
        crit = _trim(crit)
        if crit.size > 1:
            r = P.polyroots(crit)
            real = r[np.abs(r.imag) <= 1e-9 * (1 + np.abs(r.real))].real
            real = real[real > w0]
            if real.size:
                cand.extend(float(v) for v in self(real))
        return min(cand)


@dataclass
class RatioProblem:
    """Minimise ``numerator(w) / denominator(w)`` over ``w >= 0``.

    Both callables take and return numpy arrays.  ``denominator=None``
    means ``D = 1``.  Without a ``tail`` an explicit ``omega_max`` must be
    given and the result is not certified beyond it.
    """

    numerator: Callable
    denominator: Callable | None = None
    tail: TailBound | None = None
    linear_span: float = 20.0
    n_linear: int = 1024
    n_log: int = 1024
    n_brackets: int = 8
    rtol: float = 1e-9
    tail_rtol: float = 1e-7
    omega_floor: float = 1e-9
    omega_max: float | None = None
    max_extensions: int = 14

    def ratio(self, w):
        w = np.asarray(w, dtype=float)
        n = np.asarray(self.numerator(w), dtype=float)
        if self.denominator is None:
            return n
        d = np.asarray(self.denominator(w), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(d > 0, n / np.where(d > 0, d, 1.0), np.inf)
        return np.where((d <= 0) & (n <= 0), 0.0, r)


@dataclass
class SweepResult:
    omega: float
    value: float
    omega_cut: float
    tail_value: float | None
    attained: bool
    evaluations: int
    diagnostics: list = field(default_factory=list)

    def to_dict(self):
        return {
            "omega": self.omega,
            "value": self.value,
            "omega_cut": self.omega_cut,
            "tail_value": self.tail_value,
            "attained": self.attained,
            "evaluations": self.evaluations,
        }


def _golden(fn, a, b, rtol, max_iter=200):
    """Vectorised golden-section search on independent brackets ``[a, b]``."""
    a, b = np.array(a, dtype=float), np.array(b, dtype=float)
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = fn(c), fn(d)
    evals = 2 * a.size
    for _ in range(max_iter):
        if np.all(b - a <= rtol * np.maximum(np.abs(b), 1e-300)):
            break
        left = fc <= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        keep = np.where(left, c, d)
        fkeep = np.where(left, fc, fd)
        new = np.where(left, b - _GOLD * (b - a), a + _GOLD * (b - a))
        fnew = fn(new)
        evals += a.size
        c = np.where(left, new, keep)
        fc = np.where(left, fnew, fkeep)
        d = np.where(left, keep, new)
        fd = np.where(left, fkeep, fnew)
    x = np.where(fc <= fd, c, d)
    fx = np.minimum(fc, fd)
    return x, fx, evals


def _local_minima(w, r, k):
    """Indices of the ``k`` lowest local minima of ``r`` (ties -> smaller w)."""
    n = r.size
    if n < 3:
        return np.arange(n)
    left = np.concatenate(([np.inf], r[:-1]))
    right = np.concatenate((r[1:], [np.inf]))
    idx = np.nonzero((r <= left) & (r <= right) & np.isfinite(r))[0]
    order = np.lexsort((w[idx], r[idx]))
    return idx[order[:k]]


def global_min(rp: RatioProblem) -> SweepResult:
    """Certified-tail grid-and-refine minimisation of ``rp``."""
    diags = []
    tail = rp.tail
    span = rp.linear_span
    if tail is not None:
        if not np.isfinite(tail.omega_tail):
            raise SweepError("UNBOUNDED-SWEEP: tail bound numerator has no positive leading term")
        span = max(span, tail.omega_tail)
        cut = max(10.0 * span, 4.0 * tail.omega_tail)
    elif rp.omega_max is not None:
        cut = max(rp.omega_max, span)
        span = min(span, cut)
    else:
        raise SweepError("UNBOUNDED-SWEEP: no tail bound and no explicit omega_max")

    w = np.concatenate((np.linspace(rp.omega_floor, span, rp.n_linear),
                        np.geomspace(span, cut, rp.n_log)[1:]))
    r = rp.ratio(w)
    evals = w.size
    cand_w, cand_r = [w], [r]

    def refine(wg, rg):
        nonlocal evals
        idx = _local_minima(wg, rg, rp.n_brackets)
        if idx.size == 0:
            return
        lo = wg[np.maximum(idx - 1, 0)]
        hi = wg[np.minimum(idx + 1, wg.size - 1)]
        x, fx, n_ev = _golden(rp.ratio, lo, hi, rp.rtol)
        evals += n_ev
        cand_w.append(x)
        cand_r.append(fx)

    refine(w, r)

    tail_value = None
    attained = True
    if tail is not None:
        best = min(float(np.min(c)) for c in cand_r)
        tail_value = tail.inf_from(cut)
        ext = 0
        while (tail_value < best and best > 0
               and not (tail_value >= tail.limit * (1.0 - rp.tail_rtol) and tail.limit <= best)):
            if ext >= rp.max_extensions:
                break
            new_cut = cut * 10.0
            wn = np.geomspace(cut, new_cut, 257)[1:]
            rn = rp.ratio(wn)
            evals += wn.size
            cand_w.append(wn)
            cand_r.append(rn)
            refine(np.concatenate(([cut], wn)), np.concatenate((rp.ratio([cut]), rn)))
            cut = new_cut
            ext += 1
            best = min(float(np.min(c)) for c in cand_r)
            tail_value = tail.inf_from(cut)
        if tail_value <= 0 and best > 0:
            raise SweepError(
                f"UNBOUNDED-SWEEP: tail bound stays non-positive up to w={cut:g} "
                f"(limit {tail.limit:g})")
        if tail_value < best:
            attained = False
            diags.append(f"NOT-ATTAINED: infimum approached for w -> inf, tail limit {tail.limit:.12g}")
        diags.append(f"tail certificate: bound {tail_value:.12g} beyond w={cut:g}")

    allw = np.concatenate(cand_w)
    allr = np.concatenate(cand_r)
    order = np.lexsort((allw, allr))
    i = order[0]
    omega, value = float(allw[i]), float(allr[i])
    if not attained:
        omega, value = np.inf, float(tail_value)
    for d in diags:
        log.debug(d)
    return SweepResult(omega, value, cut, tail_value, attained, evals, diags)


# Tail bounds for quasi-polynomial ratios -----------------------------------

def _box_dict(cf: CharFun, box):
    return {name: (float(lo), float(hi)) for name, (lo, hi) in zip(cf.params, box)}


def quasipoly_tail_bound(source, tau, box=None, sensitivity=True, inflation=0.0,
                         weights=None, direction=None) -> TailBound:
    """Rational lower bound of ``|f(jw, tau)| / S(w)`` for large ``w``.

    ``S`` bounds the sampled sensitivity envelope used by the step and
    region bounds: the largest envelope value over the parameter ``box``
    (a sequence of ``(lo, hi)``) plus ``inflation`` times its spread.
    With ``direction`` the envelope is ``|df/dtheta|`` along that vector,
    otherwise ``||grad f||_1`` (which dominates every p-norm); with
    ``sensitivity=False`` the bound is for ``|f|`` alone.  ``source`` may be
    a :class:`RetardedForm`, whose ``weights`` scale each delay group.
    """
    if isinstance(source, RetardedForm):
        return _retarded_tail(source, sensitivity, inflation, weights)
    cf: CharFun = source
    tau = cf.point(tau)
    if box is None:
        box = [(v, v) for v in tau]
    alpha, _ = cf.coefficients(tau[None, :])
    num = np.zeros(max(cf.m, max((t.power for t in cf.terms), default=0)) + 1)
    num[cf.m] += 1.0
    for i, t in enumerate(cf.terms):
        num[t.power] -= abs(alpha[0, i])
    if not sensitivity:
        return TailBound(num, np.ones(1))
    b = _box_dict(cf, box)
    den = np.zeros(num.size + 1)
    try:
        for t, (da, db) in zip(cf.terms, cf.derivatives):
            if direction is not None:
                v = [ex.const(c) for c in direction]
                comps = [(_dot(v, da), ex.mul(t.coeff, _dot(v, db)))]
            else:
                comps = [(x, ex.mul(t.coeff, y)) for x, y in zip(da, db)]
            for x, y in comps:
                for e, k in ((x, t.power), (y, t.power + 1)):
                    lo, hi = ex.bounds(e, b)
                    den[k] += max(abs(lo), abs(hi)) + inflation * (hi - lo)
    except IntervalError as err:
        raise SweepError(f"interval evaluation failed over the parameter box: {err}") from err
    if not np.all(np.isfinite(den)):
        raise SweepError("interval evaluation failed: unbounded parameter box")
    return TailBound(num, den)


def _dot(v, exprs):
    out = ex.ZERO
    for c, e in zip(v, exprs):
        out = ex.add(out, ex.mul(c, e))
    return out


def _retarded_tail(rf: RetardedForm, sensitivity, inflation, weights):
    num = np.zeros(rf.m + 1)
    num[rf.m] = 1.0
    den = np.zeros(rf.m + 1)
    w = np.ones(len(rf.polys)) if weights is None else np.abs(np.asarray(weights, dtype=float))
    for c, k, wi in zip(rf.polys, rf.delay_index, w):
        num[: rf.m] -= np.abs(c)
        if k is not None:
            den[1:] += wi * np.abs(c)
    if not sensitivity:
        return TailBound(num, np.ones(1))
    # group envelopes of a retarded form do not vary with tau: no spread
    return TailBound(num, den)


def min_modulus(cf: CharFun, tau, **kw) -> SweepResult:
    """Certified ``min_w |f(jw, tau)|`` for ``w >= 0``."""
    tau = cf.point(tau)

    def num(w):
        return np.abs(cf.evaluate_many(1j * w, tau[None, :])[0])

    rp = RatioProblem(num, tail=quasipoly_tail_bound(cf, tau, sensitivity=False),
                      linear_span=10.0 * cf.m, **kw)
    res = global_min(rp)
    f0 = abs(cf.eval_f(0.0, tau))
    if f0 < res.value:
        res.value, res.omega = f0, 0.0
    return res
