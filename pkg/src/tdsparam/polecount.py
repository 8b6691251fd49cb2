"""Counting characteristic zeros with non-negative real part.

The count is the winding number of ``f`` along the boundary of the right
half-disk ``{Re s >= 0, |s| <= radius}``, where ``radius`` is a Cauchy-type
bound beyond which no right-half-plane zero can exist.  The contour is
refined until, on every segment, a Lipschitz bound on ``f`` keeps the
image inside a disk around an end-point value that excludes the origin.
Each wrapped phase difference is then exact and the winding is certified
up to floating-point error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .charfun import CharFun
from .errors import TDSError, WindingError, ZeroOnContourError

INITIAL_SAMPLES = 512
MAX_SAMPLES = 1 << 21
ZERO_TOL = 1e-9


@dataclass(frozen=True)
class PoleCountReport:
    nu: int
    radius: float
    samples: int
    residual: float
    min_abs_f: float

    def to_dict(self):
        return {"nu": self.nu, "radius": self.radius, "samples": self.samples,
                "residual": self.residual, "min_abs_f": self.min_abs_f}


def rhp_radius_bound(cf: CharFun, tau) -> float:
    """Radius outside of which ``f`` has no zero with ``Re s >= 0``.

    With ``A_i = sum_k |alpha_ik(tau)|`` the dominating polynomial
    ``|s|^m - sum_i A_i |s|^i`` is positive for ``|s| >= 1 + max_i A_i``.
    """
    tau = cf.point(tau)
    if any(t.power >= cf.m for t in cf.terms):
        raise TDSError("radius bound needs every term power below m (retarded structure)")
    alpha, _ = cf.coefficients(tau[None, :])
    sums = np.zeros(cf.m)
    for i, t in enumerate(cf.terms):
        sums[t.power] += abs(alpha[0, i])
    bound = 1.0 + float(sums.max(initial=0.0))
    if not np.isfinite(bound):
        raise TDSError("non-finite coefficient bound")
    return bound


def _contour(t, radius):
    # t in [0, 1]: arc from -j*radius through radius to j*radius
    # t in [1, 2]: imaginary axis from j*radius down to -j*radius
    arc = radius * np.exp(1j * np.pi * (t - 0.5))
    axis = 1j * radius * (1.0 - 2.0 * (t - 1.0))
    return np.where(t <= 1.0, arc, axis)


def count_unstable(cf: CharFun, tau, radius=None, max_samples=MAX_SAMPLES) -> PoleCountReport:
    """NU_f(tau): zeros with ``Re s >= 0`` counted with multiplicity."""
    tau = cf.point(tau)
    if radius is None:
        radius = rhp_radius_bound(cf, tau)
    alpha, beta = cf.coefficients(tau[None, :])
    scale = 1.0 + float(np.sum(np.abs(alpha)))

    def f(t):
        return cf.evaluate_many(_contour(t, radius), tau[None, :])[0]

    # |f'(s)| <= m |s|^(m-1) + sum |alpha| (p |s|^(p-1) + beta |s|^p) on Re s >= 0
    pw = np.array([t.power for t in cf.terms], dtype=float)
    a, b = np.abs(alpha[0]), beta[0]

    def lipschitz(r):
        r = r[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            low = np.where(pw > 0, pw * r ** np.maximum(pw - 1, 0), 0.0)
        return cf.m * r[:, 0] ** (cf.m - 1) + np.sum(a * (low + b * r ** pw), axis=1)

    # the point t = 1.5 (s = 0) and the axis end points are always sampled
    t = np.linspace(0.0, 2.0, 2 * INITIAL_SAMPLES + 1)
    vals = f(t)
    while True:
        if np.min(np.abs(vals)) <= ZERO_TOL * scale:
            k = int(np.argmin(np.abs(vals)))
            raise ZeroOnContourError(
                f"ZERO-ON-CONTOUR: |f| = {abs(vals[k]):.3g} at s = {_contour(t[k], radius):.6g}; "
                "the parameter point likely sits on a stability crossing")
        s = _contour(t, radius)
        length = np.abs(np.diff(s))
        if np.any(t > 1.0):
            # arc segments are chords; the arc is longer by at most pi/2
            length = np.where(t[1:] <= 1.0, length * (np.pi / 2), length)
        reach = lipschitz(np.maximum(np.abs(s[:-1]), np.abs(s[1:]))) * length
        margin = np.maximum(np.abs(vals[:-1]), np.abs(vals[1:]))
        bad = reach >= margin
        if not bad.any():
            break
        pieces = np.minimum(np.ceil(2.0 * reach[bad] / margin[bad]), 64).astype(int)
        if t.size + int(pieces.sum()) > max_samples:
            raise WindingError(
                f"NON-INTEGER-WINDING: phase not resolved with {t.size} contour samples")
        lo, hi = t[:-1][bad], t[1:][bad]
        new = np.concatenate([l + (h - l) * np.arange(1, k) / k
                              for l, h, k in zip(lo, hi, pieces)])
        t_new = np.concatenate((t, new))
        order = np.argsort(t_new, kind="stable")
        t = t_new[order]
        vals = np.concatenate((vals, f(new)))[order]
    turn = np.angle(vals[1:] / vals[:-1])
    winding = float(np.sum(turn)) / (2.0 * np.pi)
    nu = int(round(winding))
    residual = abs(winding - nu)
    if residual >= 0.1 or nu < 0:
        raise WindingError(f"NON-INTEGER-WINDING: winding {winding:.6f}")
    return PoleCountReport(nu, float(radius), int(t.size), residual, float(np.min(np.abs(vals))))
