"""Characteristic quasi-polynomials of retarded time-delay systems.

A :class:`CharFun` is the monic quasi-polynomial

    f(s, tau) = s^m + sum_t s^{p_t} * alpha_t(tau) * exp(-s * beta_t(tau))

with parameter-only coefficient and delay expressions.  Evaluation is
vectorised over frequencies (and, internally, over batches of parameter
points) because the frequency sweeps call it on grids of thousands of
points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .errors import (
    IntervalError,
    NegativeDelayError,
    StructureError,
    TDSError,
    UnboundVariableError,
)

# Delays evaluating in (-DELAY_SLACK, 0) are treated as round-off and clipped.
DELAY_SLACK = 1e-12


@dataclass(frozen=True)
class QPTerm:
    power: int
    coeff: ex.Expr
    delay: ex.Expr = ex.ZERO

    @property
    def delay_free(self) -> bool:
        return isinstance(self.delay, ex.Const) and self.delay.value == 0.0


def _as_expr(value) -> ex.Expr:
    if isinstance(value, ex.Expr):
        return value
    if isinstance(value, (int, float)):
        return ex.const(value)
    return ex.parse(str(value))


@dataclass(frozen=True)
class CharFun:
    """Monic retarded quasi-polynomial over named parameters.

    ``lower_bounds`` declares the parameter domain ``tau_k >= lower_bounds[k]``;
    it defaults to the non-negative orthant.
    """

    m: int
    terms: tuple
    params: tuple
    lower_bounds: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(
            QPTerm(int(t.power), _as_expr(t.coeff), _as_expr(t.delay)) for t in self.terms
        ))
        object.__setattr__(self, "params", tuple(self.params))
        if self.lower_bounds is None:
            object.__setattr__(self, "lower_bounds", (0.0,) * len(self.params))
        else:
            object.__setattr__(self, "lower_bounds", tuple(float(b) for b in self.lower_bounds))
        if self.m < 1:
            raise StructureError("leading power m must be at least 1")
        if len(set(self.params)) != len(self.params):
            raise StructureError("duplicate parameter names")
        if ex.LAPLACE in self.params:
            raise StructureError("'s' is reserved for the Laplace variable")
        if len(self.lower_bounds) != len(self.params):
            raise StructureError("lower_bounds must match params")
        known = set(self.params)
        for t in self.terms:
            if t.power < 0:
                raise StructureError("term powers must be non-negative")
            for e in (t.coeff, t.delay):
                names = ex.free_vars(e)
                if ex.LAPLACE in names:
                    raise StructureError(f"term expression {ex.unparse(e)!r} depends on s")
                unknown = names - known
                if unknown:
                    raise UnboundVariableError(sorted(unknown)[0])

    # Construction ----------------------------------------------------------

    @classmethod
    def from_text(cls, text: str, params: Sequence[str] | None = None,
                  lower_bounds=None) -> "CharFun":
        """Build from a full characteristic-function expression.

        The expression is expanded into quasi-polynomial terms; ``exp`` of
        an argument affine in ``s`` becomes a delay.  When ``params`` is not
        given, the parameters are the free names in order of appearance.
        """
        e = ex.parse(text) if isinstance(text, str) else text
        raw = _expand(e)
        merged: dict = {}
        order = []
        for power, coeff, delay in raw:
            key = (power, ex.unparse(delay))
            if key not in merged:
                merged[key] = [coeff, delay]
                order.append(key)
            else:
                merged[key][0] = ex.add(merged[key][0], coeff)
        terms = [(k[0], merged[k][0], merged[k][1]) for k in order
                 if not (isinstance(merged[k][0], ex.Const) and merged[k][0].value == 0.0)]
        if not terms:
            raise StructureError("characteristic function is identically zero")
        m = max(p for p, _, _ in terms)
        lead = [t for t in terms if t[0] == m and isinstance(t[2], ex.Const) and t[2].value == 0.0]
        if m < 1 or len(lead) != 1 or not isinstance(lead[0][1], ex.Const):
            raise StructureError(
                "highest power of s must carry a delay-free nonzero constant coefficient")
        scale = lead[0][1].value
        rest = [QPTerm(p, ex.div(c, ex.const(scale)), d) for p, c, d in terms if (p, c, d) != lead[0]]
        if params is None:
            params = _names_in_order(e)
        return cls(m, tuple(rest), tuple(params), lower_bounds)

    @classmethod
    def from_dict(cls, data: Mapping) -> "CharFun":
        """Build from the JSON system descriptor.

        Either ``{"m", "params", "terms": [{"power", "coeff", "delay"}]}``
        or ``{"text", "params"}``.
        """
        params = data.get("params")
        lower = data.get("lower_bounds")
        if "text" in data:
            return cls.from_text(data["text"], params, lower)
        terms = tuple(
            QPTerm(int(t["power"]), _as_expr(t.get("coeff", 1)), _as_expr(t.get("delay", 0)))
            for t in data["terms"]
        )
        return cls(int(data["m"]), terms, tuple(params or ()), lower)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "params": list(self.params),
            "lower_bounds": list(self.lower_bounds),
            "terms": [
                {"power": t.power, "coeff": ex.unparse(t.coeff), "delay": ex.unparse(t.delay)}
                for t in self.terms
            ],
        }

    def to_text(self) -> str:
        parts = [f"s^{self.m}" if self.m > 1 else "s"]
        for t in self.terms:
            piece = f"({ex.unparse(t.coeff)})"
            if t.power:
                piece += f"*s^{t.power}" if t.power > 1 else "*s"
            if not t.delay_free:
                piece += f"*exp(-s*({ex.unparse(t.delay)}))"
            parts.append(piece)
        return " + ".join(parts)

    @property
    def n(self) -> int:
        return len(self.params)

    def point(self, tau) -> np.ndarray:
        """Validate and convert a parameter point."""
        tau = np.asarray(tau, dtype=float).reshape(-1)
        if tau.shape != (self.n,):
            raise TDSError(f"parameter point has dimension {tau.size}, expected {self.n}")
        if not np.all(np.isfinite(tau)):
            raise TDSError("parameter point must be finite")
        return tau

    def admissible(self, tau) -> bool:
        tau = np.asarray(tau, dtype=float)
        return bool(np.all(tau >= np.asarray(self.lower_bounds) - DELAY_SLACK))

    # Compiled coefficient machinery ----------------------------------------

    @cached_property
    def derivatives(self):
        """Per term: (d coeff / d tau_j, d delay / d tau_j) expression lists."""
        return [([ex.diff(t.coeff, name) for name in self.params],
                 [ex.diff(t.delay, name) for name in self.params]) for t in self.terms]

    @cached_property
    def _compiled(self):
        return [(ex.compile_expr(t.coeff), ex.compile_expr(t.delay),
                 [ex.compile_expr(d) for d in da], [ex.compile_expr(d) for d in db])
                for t, (da, db) in zip(self.terms, self.derivatives)]

    @cached_property
    def _groups(self):
        """Term indices grouped by identical delay expression."""
        groups: dict = {}
        for i, t in enumerate(self.terms):
            groups.setdefault(ex.unparse(t.delay), []).append(i)
        return [np.asarray(v) for v in groups.values()]

    @cached_property
    def _powers(self):
        return np.asarray([t.power for t in self.terms], dtype=int)

    def coefficients(self, taus, derivatives=False):
        """Coefficient and delay values at a batch of points.

        ``taus`` has shape ``(K, n)``.  Returns ``alpha, beta`` of shape
        ``(K, T)`` and, with ``derivatives``, also ``dalpha, dbeta`` of shape
        ``(K, T, n)``.  Results are read-only and cached per batch, since
        frequency sweeps request the same batch many times.
        """
        taus = np.atleast_2d(np.asarray(taus, dtype=float))
        key = (taus.shape, taus.tobytes(), bool(derivatives))
        cache = self._coeff_cache
        hit = cache.get(key)
        if hit is None:
            hit = self._coefficients(taus, derivatives)
            for a in hit:
                a.setflags(write=False)
            if len(cache) >= 16:
                cache.clear()
            cache[key] = hit
        return hit

    @cached_property
    def _coeff_cache(self):
        return {}

    def _coefficients(self, taus, derivatives):
        K, T = taus.shape[0], len(self.terms)
        p = {name: taus[:, j] for j, name in enumerate(self.params)}
        alpha = np.empty((K, T))
        beta = np.empty((K, T))
        if derivatives:
            dalpha = np.empty((K, T, self.n))
            dbeta = np.empty((K, T, self.n))
        with np.errstate(divide="raise", invalid="raise"):
            for i, (fa, fb, dfa, dfb) in enumerate(self._compiled):
                try:
                    alpha[:, i] = fa(None, p)
                    beta[:, i] = fb(None, p)
                    if derivatives:
                        for j in range(self.n):
                            dalpha[:, i, j] = dfa[j](None, p)
                            dbeta[:, i, j] = dfb[j](None, p)
                except FloatingPointError as err:
                    raise TDSError(
                        f"term {i} ({ex.unparse(self.terms[i].coeff)}) undefined at point") from err
        if np.any(beta < -DELAY_SLACK):
            i = int(np.argwhere(beta < -DELAY_SLACK)[0][1])
            raise NegativeDelayError(
                f"delay {ex.unparse(self.terms[i].delay)!r} is negative at the evaluation point")
        np.maximum(beta, 0.0, out=beta)
        if derivatives:
            return alpha, beta, dalpha, dbeta
        return alpha, beta

    def s_powers(self, s):
        """s^0 .. s^m by repeated multiplication (keeps conjugate symmetry exact)."""
        pw = [np.ones_like(s)]
        for _ in range(self.m + 1):
            pw.append(pw[-1] * s)
        return np.stack(pw)

    # Evaluation ------------------------------------------------------------

    def evaluate_many(self, s, taus):
        """f(s, tau_k) for every row of ``taus``; result shape ``(K, W)``."""
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        alpha, beta = self.coefficients(taus)
        pw = self.s_powers(s)
        out = np.broadcast_to(pw[self.m], (alpha.shape[0], s.size)).copy()
        for i in range(len(self.terms)):
            out += (alpha[:, i, None] * pw[self._powers[i]]) * np.exp(-beta[:, i, None] * s)
        return out

    def evaluate(self, s, tau):
        """f(s, tau) at complex ``s`` (scalar or array)."""
        tau = self.point(tau)
        scalar = np.ndim(s) == 0
        out = self.evaluate_many(np.ravel(s), tau[None, :])[0].reshape(np.shape(s))
        return complex(out) if scalar else out

    def eval_f(self, omega, tau):
        """f(j*omega, tau)."""
        return self.evaluate(1j * np.asarray(omega, dtype=float), tau)

    def group_polynomials(self, taus) -> np.ndarray:
        """Coefficients ``C`` of shape ``(K, G, n, m + 2)``, ascending in ``s``.

        ``Q[k, g, j](s) = sum_p C[k, g, j, p] s^p`` is the phase-free part of
        ``d f / d tau_j`` contributed by delay group ``g``.
        """
        taus = np.atleast_2d(np.asarray(taus, dtype=float))
        key = (taus.shape, taus.tobytes(), "poly")
        cache = self._coeff_cache
        hit = cache.get(key)
        if hit is not None:
            return hit
        alpha, _, dalpha, dbeta = self.coefficients(taus, derivatives=True)
        C = np.zeros((taus.shape[0], len(self._groups), self.n, self.m + 2))
        for g, idx in enumerate(self._groups):
            for i in idx:
                p = self._powers[i]
                C[:, g, :, p] += dalpha[:, i, :]
                C[:, g, :, p + 1] -= alpha[:, i, None] * dbeta[:, i, :]
        C.setflags(write=False)
        if len(cache) >= 16:
            cache.clear()
        cache[key] = C
        return C

    def group_gradients(self, s, taus):
        """Phase-free gradient pieces per delay group.

        Returns ``Q`` with shape ``(K, G, n, W)`` such that
        ``grad f(s, tau_k) = sum_g exp(-s*beta_g(tau_k)) * Q[k, g]``.
        """
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        C = self.group_polynomials(taus)
        return C @ self.s_powers(s)[: C.shape[-1]]

    def gradient_many(self, s, taus):
        """grad_tau f(s, tau_k); shape ``(K, n, W)``."""
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        Q = self.group_gradients(s, taus)
        _, beta = self.coefficients(taus)
        out = np.zeros((Q.shape[0], self.n, s.size), dtype=complex)
        for g, idx in enumerate(self._groups):
            phase = np.exp(-beta[:, idx[0], None] * s)
            out += Q[:, g] * phase[:, None, :]
        return out

    def grad_f(self, omega, tau):
        """Parametric gradient of f(j*omega, tau); shape ``(n,)`` or ``(n, W)``."""
        tau = self.point(tau)
        scalar = np.ndim(omega) == 0
        g = self.gradient_many(1j * np.ravel(np.asarray(omega, dtype=float)), tau[None, :])[0]
        return g[:, 0] if scalar else g

    def directional_derivative(self, omega, tau0, direction=None, theta=0.0, curve=None):
        """d f(j*omega, tau(theta)) / d theta along a line or a smooth curve.

        For a line, ``tau(theta) = tau0 + theta*direction``; for a curve,
        ``curve.point(theta)`` and ``curve.tangent(theta)`` are used.
        """
        if curve is not None:
            tau, tangent = curve.point(theta), curve.tangent(theta)
        else:
            direction = np.asarray(direction, dtype=float)
            tau = self.point(tau0) + theta * direction
            tangent = direction
        if not self.admissible(tau):
            raise TDSError("point outside the parameter domain")
        g = self.grad_f(omega, tau)
        return np.tensordot(np.asarray(tangent, dtype=float), g, axes=(0, 0))

    # Structure -------------------------------------------------------------

    def to_retarded(self, tau0=None, direction=None) -> "RetardedForm | None":
        """Reduce to ``s^m + sum_i P_i(s) exp(-s*tau_i)``; ``None`` if not of that form.

        Requires parameter-free coefficients and delays that are either a
        plain parameter or a non-negative constant.  With a ray, the form
        also carries ``f_i(s) = P_i(s) exp(-s*tau_i0)`` and slopes ``a_i``.
        """
        polys: dict = {}
        for t in self.terms:
            if ex.free_vars(t.coeff) or t.power >= self.m:
                return None
            d = t.delay
            if isinstance(d, ex.Var) and d.name in self.params:
                key = ("param", self.params.index(d.name))
            elif isinstance(d, ex.Const) and d.value >= 0.0:
                key = ("fixed", d.value)
            else:
                return None
            poly = polys.setdefault(key, np.zeros(self.m))
            poly[t.power] += float(ex.evaluate(t.coeff))
        keys = list(polys)
        rf = RetardedForm(
            m=self.m,
            polys=tuple(polys[k] for k in keys),
            delay_index=tuple(k[1] if k[0] == "param" else None for k in keys),
            fixed_delays=tuple(k[1] if k[0] == "fixed" else 0.0 for k in keys),
            n=self.n,
        )
        if tau0 is not None:
            rf = rf.along(self.point(tau0), np.asarray(direction, dtype=float))
        return rf

    def check_hypotheses(self) -> "HypothesisReport":
        """Structural membership test for the retarded quasi-polynomial class."""
        issues = []
        box = {name: (lb, np.inf) for name, lb in zip(self.params, self.lower_bounds)}
        for i, t in enumerate(self.terms):
            label = f"term {i} (s^{t.power}: {ex.unparse(t.coeff)}, delay {ex.unparse(t.delay)})"
            if t.power >= self.m:
                issues.append(f"{label}: power >= m, neutral-type structure")
            try:
                lo, _ = ex.bounds(t.delay, box)
                if lo < 0.0:
                    issues.append(f"{label}: delay not provably non-negative on the domain")
            except IntervalError as err:
                issues.append(f"{label}: delay not differentiable on the domain ({err})")
            try:
                ex.bounds(t.coeff, box)
            except IntervalError as err:
                issues.append(f"{label}: coefficient not differentiable on the domain ({err})")
        return HypothesisReport("WARN" if issues else "PASS", issues)


@dataclass(frozen=True)
class HypothesisReport:
    verdict: str
    issues: list = field(default_factory=list)

    def to_dict(self):
        return {"verdict": self.verdict, "issues": list(self.issues)}


@dataclass(frozen=True)
class RetardedForm:
    """``s^m + sum_i P_i(s) exp(-s*tau_i)`` with real polynomial ``P_i``.

    ``polys[i]`` holds ascending coefficients of ``P_i`` (length ``m``).
    ``delay_index[i]`` is the parameter index of ``tau_i`` or ``None`` for a
    fixed delay ``fixed_delays[i]``.  After :meth:`along`, ``tau0`` and the
    slopes ``a`` describe a ray.
    """

    m: int
    polys: tuple
    delay_index: tuple
    fixed_delays: tuple
    n: int
    tau0: np.ndarray | None = None
    a: np.ndarray | None = None

    def along(self, tau0, direction) -> "RetardedForm":
        a = np.asarray([0.0 if k is None else direction[k] for k in self.delay_index])
        return RetardedForm(self.m, self.polys, self.delay_index, self.fixed_delays,
                            self.n, np.asarray(tau0, dtype=float), a)

    def delays(self, tau) -> np.ndarray:
        return np.asarray([self.fixed_delays[i] if k is None else tau[k]
                           for i, k in enumerate(self.delay_index)], dtype=float)

    def poly_values(self, s) -> np.ndarray:
        """P_i(s) for all groups; shape ``(G, W)``."""
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        out = np.zeros((len(self.polys), s.size), dtype=complex)
        for i, c in enumerate(self.polys):
            out[i] = np.polynomial.polynomial.polyval(s, c)
        return out

    def f_i(self, s) -> np.ndarray:
        """P_i(s) exp(-s*tau_i0) along the stored ray; shape ``(G, W)``."""
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        d0 = self.delays(self.tau0)
        return self.poly_values(s) * np.exp(-d0[:, None] * s[None, :])

    def evaluate(self, s, theta=0.0, tau=None):
        """f at ``tau`` or, along the stored ray, at ``tau(theta)``."""
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        if tau is None:
            d = self.delays(self.tau0) + theta * self.a
        else:
            d = self.delays(np.asarray(tau, dtype=float))
        return s ** self.m + np.sum(self.poly_values(s) * np.exp(-d[:, None] * s[None, :]), axis=0)


# Expansion of expression trees into quasi-polynomial terms -----------------

MAX_EXPANSION_POWER = 16


def _names_in_order(e: ex.Expr) -> list:
    seen = []

    def walk(node):
        if isinstance(node, ex.Var):
            if node.name != ex.LAPLACE and node.name not in seen:
                seen.append(node.name)
        elif isinstance(node, (ex.Neg, ex.Exp)):
            walk(node.arg)
        elif isinstance(node, ex.Pow):
            walk(node.base)
        elif not isinstance(node, ex.Const):
            walk(node.left)
            walk(node.right)

    walk(e)
    return seen


def _has_s(e):
    return ex.LAPLACE in ex.free_vars(e)


def _expand(e: ex.Expr) -> list:
    """Expand into ``[(power, coeff, delay)]`` with s-free coeff/delay."""
    if not _has_s(e):
        return [(0, e, ex.ZERO)]
    if isinstance(e, ex.Var):
        return [(1, ex.ONE, ex.ZERO)]
    if isinstance(e, ex.Neg):
        return [(p, ex.neg(c), d) for p, c, d in _expand(e.arg)]
    if isinstance(e, ex.Add):
        return _expand(e.left) + _expand(e.right)
    if isinstance(e, ex.Sub):
        return _expand(e.left) + [(p, ex.neg(c), d) for p, c, d in _expand(e.right)]
    if isinstance(e, ex.Mul):
        return _product(_expand(e.left), _expand(e.right))
    if isinstance(e, ex.Div):
        if _has_s(e.right):
            raise StructureError(f"division by an s-dependent expression: {ex.unparse(e)}")
        return [(p, ex.div(c, e.right), d) for p, c, d in _expand(e.left)]
    if isinstance(e, ex.Pow):
        if e.exponent < 0:
            raise StructureError(f"negative power of an s-dependent expression: {ex.unparse(e)}")
        if e.exponent > MAX_EXPANSION_POWER:
            raise StructureError(f"power {e.exponent} exceeds expansion limit")
        base = _expand(e.base)
        out = [(0, ex.ONE, ex.ZERO)]
        for _ in range(e.exponent):
            out = _product(out, base)
        return out
    if isinstance(e, ex.Exp):
        inner = _expand(e.arg)
        c0, c1 = ex.ZERO, ex.ZERO
        for p, c, d in inner:
            if not (isinstance(d, ex.Const) and d.value == 0.0) or p > 1:
                raise StructureError(
                    f"exponent must be affine in s without nested delays: {ex.unparse(e)}")
            if p == 0:
                c0 = ex.add(c0, c)
            else:
                c1 = ex.add(c1, c)
        return [(0, ex.exp(c0), ex.neg(c1))]
    raise StructureError(f"unsupported expression node {e!r}")


def _product(left, right):
    return [(p1 + p2, ex.mul(c1, c2), ex.add(d1, d2))
            for p1, c1, d1 in left for p2, c2, d2 in right]
