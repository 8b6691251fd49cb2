"""Distributed-delay state models with polynomial kernels.

The model

    x'(t) = A0 x(t) + sum_i A1_i x(t - tau_i)
                    + sum_j A2_j int_{a_j}^{b_j} gamma_j(xi) x(t - xi) dxi,

with ``gamma_j(xi) = sum_l g_jl xi^l``, has the characteristic function
``det(sI - A0 - sum_i A1_i e^{-s tau_i} - sum_j A2_j I_j(s))`` where
``I_j(s) = int_a^b gamma_j(xi) e^{-s xi} dxi``.  Because

    int xi^l e^{-s xi} dxi = -e^{-s xi} P_l(s, xi),
    P_l(s, xi) = l!/s^(l+1) * sum_{k<=l} (s xi)^k / k!,

each ``I_j`` is a sum of exponentials with coefficients rational in ``s``.
Multiplying the determinant by ``s^d`` clears the denominators and gives a
quasi-polynomial.  The factor adds ``d`` zeros at ``s = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import sympy as sp

from . import expr as ex
from .charfun import CharFun
from .errors import ModelError, StructureError, TDSError

# |s|*b below this uses the Taylor series of the integrand (the closed form
# cancels catastrophically near s = 0).
SERIES_THRESHOLD = 2.0
SERIES_TERMS = 80
MAX_KERNEL_DEGREE = 12


def kernel_laplace(g, a, b, s):
    """``int_a^b gamma(xi) exp(-s xi) dxi`` for ``gamma(xi) = sum_l g[l] xi^l``.

    ``s`` may be a scalar or an array; ``0 <= a < b``.
    """
    g = np.atleast_1d(np.asarray(g, dtype=float))
    a, b = float(a), float(b)
    if not (0.0 <= a < b) or not np.all(np.isfinite(g)) or not np.isfinite(b):
        raise ModelError(f"kernel limits must satisfy 0 <= a < b (got a={a:g}, b={b:g})")
    scalar = np.ndim(s) == 0
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    out = np.empty(s.shape, dtype=complex)
    small = np.abs(s) * b < SERIES_THRESHOLD
    if small.any():
        out[small] = _series(g, a, b, s[small])
    if (~small).any():
        out[~small] = _closed(g, a, b, s[~small])
    return complex(out[0]) if scalar else out


def _closed(g, a, b, s):
    total = np.zeros(s.shape, dtype=complex)
    for ell, c in enumerate(g):
        if c == 0.0:
            continue
        total += c * (np.exp(-s * a) * _p_ell(ell, s, a) - np.exp(-s * b) * _p_ell(ell, s, b))
    return total


def _p_ell(ell, s, xi):
    acc = np.zeros(s.shape, dtype=complex)
    term = np.ones(s.shape, dtype=complex)
    for k in range(ell + 1):
        if k:
            term = term * (s * xi) / k
        acc += term
    return math.factorial(ell) * acc / s ** (ell + 1)


def _series(g, a, b, s):
    # exp(-s xi) = sum_k (-s)^k xi^k / k!, integrated term by term
    total = np.zeros(s.shape, dtype=complex)
    for ell, c in enumerate(g):
        if c == 0.0:
            continue
        coef = np.ones(s.shape, dtype=complex)
        for k in range(SERIES_TERMS):
            if k:
                coef = coef * (-s) / k
            e = ell + k + 1
            total += c * coef * (b ** e - a ** e) / e
    return total


# Model descriptor ----------------------------------------------------------------

def _as_expr(value) -> ex.Expr:
    if isinstance(value, ex.Expr):
        return value
    if isinstance(value, bool):
        raise ModelError("boolean is not a valid model entry")
    if isinstance(value, (int, float)):
        return ex.const(value)
    if isinstance(value, str):
        return ex.parse(value)
    raise ModelError(f"cannot interpret model entry {value!r}")


def _matrix(rows, name) -> list:
    if isinstance(rows, (int, float, str)):
        rows = [[rows]]
    if not rows or not all(isinstance(r, (list, tuple)) for r in rows):
        raise ModelError(f"{name} must be a square matrix (list of rows)")
    size = len(rows)
    if any(len(r) != size for r in rows):
        raise ModelError(f"{name} is not square")
    return [[_as_expr(v) for v in r] for r in rows]


@dataclass(frozen=True)
class DiscreteTerm:
    A: list
    delay: ex.Expr


@dataclass(frozen=True)
class DistributedTerm:
    A: list
    lower: ex.Expr
    upper: ex.Expr
    kernel: tuple


@dataclass(frozen=True)
class DistributedModel:
    """State model with discrete and polynomial-kernel distributed delays.

    Matrix entries, delays, limits and kernel coefficients are numbers or
    expressions in the named parameters.
    """

    A0: list
    discrete: tuple = ()
    distributed: tuple = ()
    params: tuple = ()

    def __post_init__(self):
        dim = len(self.A0)
        for t in (*self.discrete, *self.distributed):
            if len(t.A) != dim:
                raise ModelError(f"matrix dimension mismatch: {len(t.A)} vs {dim}")
        known = set(self.params)
        for t in self.distributed:
            if len(t.kernel) - 1 > MAX_KERNEL_DEGREE:
                raise ModelError(f"kernel degree {len(t.kernel) - 1} exceeds {MAX_KERNEL_DEGREE}")
            if not t.kernel:
                raise ModelError("kernel needs at least one coefficient")
            lo, hi = t.lower, t.upper
            if isinstance(lo, ex.Const) and isinstance(hi, ex.Const):
                if not 0.0 <= lo.value < hi.value:
                    raise ModelError(
                        f"distributed limits must satisfy 0 <= lower < upper "
                        f"(got {lo.value:g}, {hi.value:g})")
        for e in self._all_exprs():
            names = ex.free_vars(e)
            if ex.LAPLACE in names:
                raise ModelError("model entries must not depend on s")
            if names - known:
                raise ModelError(f"unknown parameter {sorted(names - known)[0]!r}")
        for t in self.discrete:
            if isinstance(t.delay, ex.Const) and t.delay.value < 0:
                raise ModelError("discrete delays must be non-negative")

    def _all_exprs(self):
        for r in self.A0:
            yield from r
        for t in self.discrete:
            for r in t.A:
                yield from r
            yield t.delay
        for t in self.distributed:
            for r in t.A:
                yield from r
            yield t.lower
            yield t.upper
            yield from t.kernel

    @property
    def dim(self) -> int:
        return len(self.A0)

    @classmethod
    def from_dict(cls, data: Mapping) -> "DistributedModel":
        """``{"params", "A0", "discrete": [{"A", "delay"}],
        "distributed": [{"A", "lower", "upper", "kernel"}]}``."""
        try:
            A0 = _matrix(data["A0"], "A0")
            disc = tuple(DiscreteTerm(_matrix(t["A"], "A"), _as_expr(t["delay"]))
                         for t in data.get("discrete", ()))
            dist = tuple(DistributedTerm(_matrix(t["A"], "A"), _as_expr(t.get("lower", 0.0)),
                                         _as_expr(t["upper"]),
                                         tuple(_as_expr(c) for c in t.get("kernel", [1.0])))
                         for t in data.get("distributed", ()))
        except KeyError as err:
            raise ModelError(f"missing field {err.args[0]!r}") from err
        return cls(A0, disc, dist, tuple(data.get("params", ())))

    def evaluate(self, s, tau) -> np.ndarray:
        """Numerical characteristic determinant at complex ``s`` (array)."""
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        p = dict(zip(self.params, np.asarray(tau, dtype=float)))

        def num(e):
            return float(ex.evaluate(e, None, p).real)

        def mat(rows):
            return np.array([[num(v) for v in r] for r in rows])

        base = np.broadcast_to(np.eye(self.dim) * 1.0, (s.size, self.dim, self.dim))
        M = s[:, None, None] * base - mat(self.A0)
        for t in self.discrete:
            M = M - mat(t.A) * np.exp(-s * num(t.delay))[:, None, None]
        for t in self.distributed:
            I = kernel_laplace([num(c) for c in t.kernel], num(t.lower), num(t.upper), s)
            M = M - mat(t.A) * I[:, None, None]
        return np.linalg.det(M)


@dataclass
class ConversionReport:
    charfun: CharFun
    clearing_power: int
    scale: float
    notes: list = field(default_factory=list)

    @property
    def spurious_zeros_at_origin(self) -> int:
        return self.clearing_power

    def to_dict(self):
        return {
            "system": self.charfun.to_dict(),
            "text": self.charfun.to_text(),
            "clearing_power": self.clearing_power,
            "spurious_zeros_at_origin": self.spurious_zeros_at_origin,
            "scale": self.scale,
            "notes": list(self.notes),
        }


def _to_sympy(e: ex.Expr, syms):
    if isinstance(e, ex.Const):
        v = e.value
        return sp.Integer(int(v)) if float(v).is_integer() else sp.Float(v)
    if isinstance(e, ex.Var):
        return syms[e.name]
    if isinstance(e, ex.Neg):
        return -_to_sympy(e.arg, syms)
    if isinstance(e, ex.Exp):
        return sp.exp(_to_sympy(e.arg, syms))
    if isinstance(e, ex.Pow):
        return _to_sympy(e.base, syms) ** e.exponent
    left, right = _to_sympy(e.left, syms), _to_sympy(e.right, syms)
    if isinstance(e, ex.Add):
        return left + right
    if isinstance(e, ex.Sub):
        return left - right
    if isinstance(e, ex.Mul):
        return left * right
    return left / right


def _from_sympy(e) -> ex.Expr:
    if e.is_Integer:
        return ex.const(int(e))
    if e.is_Rational:
        return ex.div(ex.const(int(e.p)), ex.const(int(e.q)))
    if e.is_Number:
        return ex.const(float(e))
    if e.is_Symbol:
        return ex.Var(e.name)
    if e.is_Add:
        out = ex.ZERO
        for a in e.args:
            out = ex.add(out, _from_sympy(a))
        return out
    if e.is_Mul:
        out = ex.ONE
        for a in e.args:
            out = ex.mul(out, _from_sympy(a))
        return out
    if e.is_Pow and e.exp.is_Integer:
        k = int(e.exp)
        base = _from_sympy(e.base)
        return ex.power(base, k) if k >= 0 else ex.div(ex.ONE, ex.power(base, -k))
    if isinstance(e, sp.exp):
        return ex.exp(_from_sympy(e.args[0]))
    raise StructureError(f"cannot represent {e} as a quasi-polynomial expression")


def _p_symbolic(ell, s, xi):
    return sp.factorial(ell) / s ** (ell + 1) * sum((s * xi) ** k / sp.factorial(k)
                                                   for k in range(ell + 1))


def model_to_charfun(dm: DistributedModel, lower_bounds=None) -> ConversionReport:
    """Cleared, monic characteristic quasi-polynomial of ``dm``."""
    s = sp.Symbol("s")
    syms = {name: sp.Symbol(name, real=True) for name in dm.params}
    conv = lambda e: _to_sympy(e, syms)  # noqa: E731

    def mat(rows):
        return sp.Matrix([[conv(v) for v in r] for r in rows])

    M = s * sp.eye(dm.dim) - mat(dm.A0)
    for t in dm.discrete:
        M -= mat(t.A) * sp.exp(-s * conv(t.delay))
    for t in dm.distributed:
        a, b = conv(t.lower), conv(t.upper)
        I = sum(conv(c) * (sp.exp(-s * a) * _p_symbolic(ell, s, a)
                           - sp.exp(-s * b) * _p_symbolic(ell, s, b))
                for ell, c in enumerate(t.kernel))
        M -= mat(t.A) * I
    det = sp.expand(M.det(method="berkowitz"))
    d = 0
    for term in sp.Add.make_args(det):
        k = _s_power(term, s)
        d = max(d, -k)
    cleared = sp.expand(det * s ** d) if d else det
    cleared = sp.expand(sp.powsimp(cleared, combine="exp"))
    if cleared == 0:
        raise ModelError("characteristic function is identically zero")
    try:
        cf = CharFun.from_text(_from_sympy(cleared), dm.params, lower_bounds)
    except TDSError as err:
        raise ModelError(f"cleared characteristic function is not retarded: {err}") from err
    notes = []
    if d:
        notes.append(f"multiplied by s^{d} to clear 1/s factors; this adds {d} zero(s) at s = 0, "
                     "which lie on the imaginary axis for every parameter value")
    lead = sp.Poly(_lead_part(cleared, s), s).LC() if d or dm.dim else 1
    try:
        scale = float(lead)
    except TypeError:
        scale = float("nan")
    return ConversionReport(cf, d, scale, notes)


def _s_power(term, s) -> int:
    k = 0
    for f in sp.Mul.make_args(term):
        if f == s:
            k += 1
        elif f.is_Pow and f.base == s:
            k += int(f.exp)
    return k


def _lead_part(expr, s):
    # delay-free polynomial part, used for the normalising constant
    parts = [t for t in sp.Add.make_args(expr) if not t.has(sp.exp)]
    return sp.Add(*parts) if parts else sp.Integer(0)
