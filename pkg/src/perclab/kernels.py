"""Connection functions and their mark-integrated decay.

All kernels are functions ``phi(s, t, r)`` of two vertex marks and a
distance, non-increasing in each argument; an edge is present with
probability ``1 - exp(-phi)``.

Families
--------
``bernoulli_nn(p)``
    ``-log(1-p)`` for ``r <= 1``, zero beyond (nearest-neighbour bond
    percolation on Z^d).
``long_range(beta, delta)``
    ``beta * r**(-delta*d)``.
``scale_free(beta, gamma, delta)``
    ``beta * (s*t)**(-gamma*delta) * r**(-delta*d)``, i.e. ``rho(g r^d)`` with
    ``g = (st)**gamma`` and ``rho(x) = beta x**(-delta)``.  The per-mark
    exponent is ``gamma*delta``; the effective decay is ``delta + 2 -
    2*gamma*delta`` when ``gamma*delta > 1``.
``wdrcm(g_kind, g_params, rho_kind, beta, delta)``
    ``rho(g(s,t) * r**d)`` with ``rho`` one of ``"cutoff"``
    (``beta*max(x,1)**(-delta)``) or ``"min"`` (``min(1, beta*x**(-delta))``)
    and ``g`` one of ``"product"`` (``(st)**gamma``), ``"min"``
    (``min(s,t)**gamma * max(s,t)**gamma2``) or ``"max"`` (``max(s,t)**gamma``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import NumericError, ParameterError

__all__ = [
    "KernelSpec",
    "DeltaEffEstimate",
    "bernoulli_nn",
    "long_range",
    "scale_free",
    "wdrcm",
    "eval_phi",
    "edge_prob",
    "mark_integral",
    "mark_square_integral",
    "estimate_delta_eff",
    "geometric_grid",
    "kernel_from_mapping",
]

FAMILIES = ("bernoulli_nn", "long_range", "scale_free", "wdrcm")
G_KINDS = ("product", "min", "max")
RHO_KINDS = ("cutoff", "min")


@dataclass(frozen=True)
class KernelSpec:
    family: str
    d: int
    beta: float = 1.0
    delta: float = 1.0
    gamma: float = 0.0
    p: float = 0.5
    g_kind: str = "product"
    gamma2: float = 0.0
    rho_kind: str = "cutoff"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown kernel family {self.family!r}")
        if int(self.d) < 1:
            raise ParameterError("dimension must be a positive integer")
        object.__setattr__(self, "d", int(self.d))
        if self.family == "bernoulli_nn":
            if not 0.0 <= self.p <= 1.0:
                raise ParameterError("bernoulli_nn needs p in [0, 1]")
            return
        if not self.beta > 0:
            raise ParameterError("beta must be positive")
        if not self.delta > 0:
            raise ParameterError("delta must be positive")
        if self.gamma < 0 or self.gamma2 < 0:
            raise ParameterError("gamma exponents must be non-negative")
        if self.family == "wdrcm":
            if self.g_kind not in G_KINDS:
                raise ParameterError(f"g_kind must be one of {G_KINDS}")
            if self.rho_kind not in RHO_KINDS:
                raise ParameterError(f"rho_kind must be one of {RHO_KINDS}")

    @property
    def mark_free(self):
        """True when phi does not depend on the marks."""
        return self.family in ("bernoulli_nn", "long_range")

    def with_beta(self, beta):
        return KernelSpec(**{**self.__dict__, "beta": float(beta)})

    def as_dict(self):
        """Only the fields that matter for this family."""
        keys = {
            "bernoulli_nn": ("p",),
            "long_range": ("beta", "delta"),
            "scale_free": ("beta", "gamma", "delta"),
            "wdrcm": ("beta", "delta", "gamma", "gamma2", "g_kind", "rho_kind"),
        }[self.family]
        return {"family": self.family, "d": self.d, **{k: getattr(self, k) for k in keys}}


def bernoulli_nn(p, d):
    return KernelSpec("bernoulli_nn", d, p=float(p))


def long_range(beta, delta, d):
    return KernelSpec("long_range", d, beta=float(beta), delta=float(delta))


def scale_free(beta, gamma, delta, d):
    return KernelSpec("scale_free", d, beta=float(beta), gamma=float(gamma), delta=float(delta))


def wdrcm(g_kind, beta, delta, d, gamma=0.0, gamma2=0.0, rho_kind="cutoff"):
    return KernelSpec("wdrcm", d, beta=float(beta), delta=float(delta), gamma=float(gamma),
                      gamma2=float(gamma2), g_kind=g_kind, rho_kind=rho_kind)


def kernel_from_mapping(m):
    """Build a KernelSpec from a config mapping (``family=..., beta=...``)."""
    m = dict(m)
    known = {"family", "d", "beta", "delta", "gamma", "p", "g_kind", "gamma2", "rho_kind"}
    extra = set(m) - known
    if extra:
        raise ParameterError(f"unknown kernel keys: {sorted(extra)}")
    if "family" not in m or "d" not in m:
        raise ParameterError("kernel needs at least 'family' and 'd'")
    return KernelSpec(**m)


def _check_marks(*marks):
    for s in marks:
        a = np.asarray(s, dtype=float)
        if not (np.all(a > 0) and np.all(a < 1)):
            raise ParameterError("marks must lie strictly inside (0, 1)")


def _phi(k, s, t, r):
    # unchecked, broadcasting; r == 0 gives inf (edge certain)
    s, t, r = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float), np.asarray(r, float))
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if k.family == "bernoulli_nn":
            c = math.inf if k.p >= 1 else -math.log1p(-k.p)
            return np.where(r <= 1.0 + 1e-9, c, 0.0)
        if k.family == "long_range":
            return k.beta * r ** (-k.delta * k.d)
        if k.family == "scale_free":
            return k.beta * (s * t) ** (-k.gamma * k.delta) * r ** (-k.delta * k.d)
        g = _g(k, s, t)
        x = g * r ** k.d
        if k.rho_kind == "cutoff":
            return k.beta * np.maximum(x, 1.0) ** (-k.delta)
        return np.minimum(1.0, k.beta * x ** (-k.delta))


def _g(k, s, t):
    if k.g_kind == "product":
        return (s * t) ** k.gamma
    lo, hi = np.minimum(s, t), np.maximum(s, t)
    if k.g_kind == "min":
        return lo ** k.gamma * hi ** k.gamma2
    return hi ** k.gamma


def _phi_scalar(k, s, t, r):
    # float-only twin of _phi for the quadrature inner loop
    if k.family == "long_range":
        return k.beta * r ** (-k.delta * k.d)
    if k.family == "scale_free":
        return k.beta * (s * t) ** (-k.gamma * k.delta) * r ** (-k.delta * k.d)
    if k.family == "bernoulli_nn":
        return float(_phi(k, s, t, r))
    if k.g_kind == "product":
        g = (s * t) ** k.gamma
    elif k.g_kind == "min":
        g = min(s, t) ** k.gamma * max(s, t) ** k.gamma2
    else:
        g = max(s, t) ** k.gamma
    x = g * r ** k.d
    if k.rho_kind == "cutoff":
        return k.beta * max(x, 1.0) ** (-k.delta)
    return min(1.0, k.beta * x ** (-k.delta)) if x > 0 else 1.0


def eval_phi(kernel, s, t, r):
    """Connection function value(s); broadcasts over array arguments."""
    _check_marks(s, t)
    if np.any(np.asarray(r) < 0):
        raise ParameterError("distance must be non-negative")
    out = _phi(kernel, s, t, r)
    return float(out) if out.ndim == 0 else out


def edge_prob(kernel, s, t, r):
    """``1 - exp(-phi(s, t, r))``."""
    phi = np.asarray(eval_phi(kernel, s, t, r), dtype=float)
    out = -np.expm1(-phi)
    return float(out) if out.ndim == 0 else out


def _antideriv_power(a, b, e):
    # integral of x**(-e) over [a, b]
    if abs(e - 1.0) < 1e-12:
        return math.log(b / a)
    return (b ** (1.0 - e) - a ** (1.0 - e)) / (1.0 - e)


def _closed_square(k, lo, hi, r):
    w = hi - lo
    if k.family in ("bernoulli_nn", "long_range"):
        return float(_phi(k, 0.5, 0.5, r)) * w * w
    if k.family == "scale_free":
        one = _antideriv_power(lo, hi, k.gamma * k.delta)
        return k.beta * r ** (-k.delta * k.d) * one * one
    return None


def _quad_square(k, lo, hi, r, rtol=1e-8):
    # integrate in log-marks: mass concentrates at small marks when lo is tiny
    a, b = math.log(lo), math.log(hi)

    def inner(u):
        s = math.exp(u)
        f = lambda v: _phi_scalar(k, s, math.exp(v), r) * math.exp(v)
        pts = _kinks(k, s, r, a, b)
        val, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=200, points=pts or None)
        return val * s

    pts = _kinks(k, None, r, a, b)
    val, _ = integrate.quad(inner, a, b, epsabs=0.0, epsrel=rtol, limit=200, points=pts or None)
    return val


def _kinks(k, s, r, a, b):
    # log-mark locations where the wdrcm profile switches branch (or the diagonal)
    if k.family != "wdrcm":
        return []
    pts = []
    if s is not None:
        pts.append(math.log(s))
    rd = r ** k.d
    x_star = 1.0 if k.rho_kind == "cutoff" else k.beta ** (1.0 / k.delta)
    if k.g_kind == "product" and k.gamma > 0 and s is not None:
        # (s t)^gamma r^d = x_star
        pts.append(math.log(x_star / rd) / k.gamma - math.log(s))
    elif k.g_kind == "max" and k.gamma > 0:
        pts.append(math.log(x_star / rd) / k.gamma)
    return sorted(p for p in pts if a < p < b)


def mark_square_integral(kernel, lo, hi, r, method="auto"):
    """Integral of ``phi(s, t, r)`` over the square ``[lo, hi]^2``.

    ``method`` is ``"auto"`` (closed form when available), ``"closed"`` or
    ``"quad"`` (adaptive quadrature in log-marks, relative tolerance 1e-8).
    """
    if not (0.0 < lo < hi <= 1.0):
        raise ParameterError(f"integration bounds must satisfy 0 < lo < hi <= 1, got [{lo}, {hi}]")
    if method not in ("auto", "closed", "quad"):
        raise ParameterError(f"unknown method {method!r}")
    if method != "quad":
        val = _closed_square(kernel, lo, hi, r)
        if val is not None:
            return float(val)
        if method == "closed":
            raise ParameterError(f"no closed form for family {kernel.family!r}")
    return float(_quad_square(kernel, lo, hi, r))


def mark_integral(kernel, r, mu, method="auto"):
    """Double integral of phi over ``[r^(d(mu-1)), 1 - r^(d(mu-1))]^2``."""
    if not 0.0 <= mu < 1.0:
        raise ParameterError("mu must lie in [0, 1)")
    if not r > 0:
        raise ParameterError("r must be positive")
    lo = r ** (kernel.d * (mu - 1.0))
    if not lo < 0.5:
        raise ParameterError(f"r={r} too small: lower mark bound {lo} is not below 1/2")
    return mark_square_integral(kernel, lo, 1.0 - lo, r, method)


def geometric_grid(r_min, r_max, points):
    """Geometric sequence of ``points`` radii from ``r_min`` to ``r_max``."""
    return np.geomspace(float(r_min), float(r_max), int(points))


@dataclass(frozen=True)
class DeltaEffEstimate:
    mu: float
    r_grid: np.ndarray
    integrals: np.ndarray
    slope: float
    residual: float
    intercept: float = field(default=0.0)

    def as_dict(self):
        return {
            "mu": self.mu,
            "slope": self.slope,
            "residual": self.residual,
            "intercept": self.intercept,
            "r_grid": [float(r) for r in self.r_grid],
            "integrals": [float(v) for v in self.integrals],
        }


def estimate_delta_eff(kernel, mu, r_grid, method="auto"):
    """Least-squares slope of ``-log(I(r))/d`` against ``log r``.

    ``I`` is :func:`mark_integral`.  The residual is the root-mean-square
    deviation of the fit; a large residual signals that the finite-r slope is
    not a good proxy for the liminf (e.g. oscillating kernels).
    """
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.ndim != 1 or r_grid.size < 4:
        raise ParameterError("r grid needs at least 4 points")
    ratios = r_grid[1:] / r_grid[:-1]
    if np.any(ratios < 2.0 - 1e-9) or np.ptp(ratios) > 1e-6 * ratios.mean():
        raise ParameterError("r grid must be geometric with ratio >= 2")
    vals = np.array([mark_integral(kernel, r, mu, method) for r in r_grid])
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise NumericError("mark integral vanishes or is not finite on the r grid")
    x = np.log(r_grid)
    y = -np.log(vals) / kernel.d
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ np.array([slope, intercept]) - y) ** 2)))
    return DeltaEffEstimate(float(mu), r_grid, vals, float(slope), resid, float(intercept))
