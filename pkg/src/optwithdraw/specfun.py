"""Confluent hypergeometric functions M, U and parabolic cylinder D for real arguments.

Every evaluator works internally with ``(log|value|, sign)`` so the large
exponential prefactors met in the closed-form kernels never overflow.  The
plain entry points (:func:`kummer_m`, :func:`tricomi_u`,
:func:`parabolic_cylinder_d`) return a :class:`SpecFunResult`; the ``log_*``
variants return ``(logabs, sign)``.

M uses its power series (after Kummer's transformation for negative z) and
falls back to the Euler integral for large negative z.  U and D are only ever
evaluated from their Laplace-type integrals, split into an endpoint-singular
piece (algebraic-weight quadrature), a bulk piece and an analytically bounded
tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

EPS = np.finfo(float).eps
Z_MAX = 700.0
Z_MAX_LOG = 1.0e4
SERIES_SWITCH = 40.0
DEFAULT_TOL = 1e-13
_SERIES_BUDGET = 200_000


class SpecFunError(ArithmeticError):
    pass


class ParameterPole(SpecFunError):
    pass


class NoConvergence(SpecFunError):
    pass


class UnsupportedRegime(SpecFunError):
    pass


@dataclass(frozen=True)
class SpecFunResult:
    value: float
    abs_error_estimate: float
    terms_or_nodes_used: int
    log_abs: float = math.nan
    sign: int = 1


@dataclass(frozen=True)
class _LogVal:
    log_abs: float
    sign: int
    rel_err: float
    used: int

    def result(self) -> SpecFunResult:
        if self.sign == 0:
            return SpecFunResult(0.0, 0.0, self.used, -math.inf, 0)
        v = self.sign * math.exp(self.log_abs) if self.log_abs < 709.0 else self.sign * math.inf
        return SpecFunResult(v, abs(v) * self.rel_err, self.used, self.log_abs, self.sign)


def _is_nonpos_int(b: float) -> bool:
    return b <= 0 and b == math.floor(b)


# ---------------------------------------------------------------------------
# Kummer M
# ---------------------------------------------------------------------------

def _m_series(a: float, b: float, z: float, tol: float) -> _LogVal:
    """Power series for z >= 0, rescaled to stay inside double range."""
    scale = 0.0          # log of the common factor pulled out of s and t
    s = 1.0
    t = 1.0
    tmax = 1.0
    k = 0
    while True:
        if k >= _SERIES_BUDGET:
            raise NoConvergence(f"M({a}, {b}; {z}) series did not converge")
        t *= (a + k) * z / ((b + k) * (k + 1))
        k += 1
        s += t
        at = abs(t)
        if at > tmax:
            tmax = at
        if abs(s) > 1e250 or tmax > 1e250:
            s *= 1e-250
            t *= 1e-250
            tmax *= 1e-250
            scale += 250.0 * math.log(10.0)
        if t == 0.0:
            break
        past_growth = k > -a and k + b > z
        if past_growth and at <= tol * 0.25 * abs(s):
            break
    if s == 0.0:
        return _LogVal(-math.inf, 0, 0.0, k)
    rel = EPS * (2.0 + tmax / abs(s)) + tol
    return _LogVal(math.log(abs(s)) + scale, 1 if s > 0 else -1, rel, k)


def _m_integral(a: float, b: float, z: float, tol: float) -> _LogVal:
    """Euler integral, valid for b > a > 0."""
    if not (a > 0 and b > a):
        raise UnsupportedRegime("integral representation of M needs b > a > 0")
    shift = max(z, 0.0)
    val, err, info = _quad(lambda t: math.exp(z * t - shift), 0.0, 1.0, tol,
                           weight="alg", wvar=(a - 1.0, b - a - 1.0))
    pref = math.lgamma(b) - math.lgamma(a) - math.lgamma(b - a)
    return _LogVal(pref + shift + math.log(val), 1, err / val + 4 * EPS, info)


def _log_kummer_m(a: float, b: float, z: float, tol: float, z_max: float) -> _LogVal:
    if _is_nonpos_int(b):
        raise ParameterPole(f"M(a, b; z) has a pole at b={b}")
    if not all(map(math.isfinite, (a, b, z))):
        raise UnsupportedRegime("non-finite argument")
    if abs(z) > z_max:
        raise UnsupportedRegime(f"|z|={abs(z):g} exceeds Z_MAX={z_max:g}")
    if z == 0.0 or a == 0.0:
        return _LogVal(0.0, 1, 0.0, 1)
    if z > 0:
        return _m_series(a, b, z, tol)
    if a > 0 and b > a and -z > SERIES_SWITCH:
        return _m_integral(a, b, z, tol)
    r = _m_series(b - a, b, -z, tol)
    return _LogVal(r.log_abs + z, r.sign, r.rel_err, r.used)


def kummer_m(a: float, b: float, z: float, tol: float = DEFAULT_TOL, z_max: float = Z_MAX) -> SpecFunResult:
    """M(a, b; z) = sum_k (a)_k z^k / ((b)_k k!)."""
    return _log_kummer_m(float(a), float(b), float(z), tol, z_max).result()


def log_kummer_m(a: float, b: float, z: float, tol: float = DEFAULT_TOL, z_max: float = Z_MAX_LOG):
    r = _log_kummer_m(float(a), float(b), float(z), tol, z_max)
    return r.log_abs, r.sign


def kummer_m_integral(a: float, b: float, z: float, tol: float = DEFAULT_TOL) -> SpecFunResult:
    """M evaluated only through its integral representation (b > a > 0)."""
    return _m_integral(float(a), float(b), float(z), tol).result()


# ---------------------------------------------------------------------------
# Laplace-type integrals shared by U and D
# ---------------------------------------------------------------------------

def _quad(f, lo, hi, tol, **kw):
    val, err, info = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=max(tol, 60 * EPS),
                                    limit=400, full_output=1, **kw)[:3]
    if not math.isfinite(val):
        raise NoConvergence("quadrature produced a non-finite value")
    return val, err, int(info.get("neval", 0))


def _log_laplace(logg, h, dmax, alpha, t_split, t_peak, width, tol):
    """log of  int_0^inf t^alpha exp(logg(t)) dt  for a positive integrand.

    ``h(t) = logg(t) + alpha log t`` and ``dmax(T)`` bounds h' on [T, inf);
    the tail beyond the cut-off T is bounded by exp(h(T)) / (-dmax(T)).
    """
    pieces = []
    errs = []
    used = 0

    ga = np.linspace(0.0, t_split, 65)
    ca = max(logg(t) for t in ga)
    va, ea, na = _quad(lambda t: math.exp(logg(t) - ca), 0.0, t_split, tol,
                       weight="alg", wvar=(alpha, 0.0))
    used += na
    if va > 0:
        pieces.append(ca + math.log(va))
        errs.append((ca + math.log(va), ea / va))

    T = max(2.0 * t_split, t_peak + 12.0 * width)
    grid = np.unique(np.concatenate([np.linspace(t_split, T, 129), [min(max(t_peak, t_split), T)]]))
    cb = max(h(t) for t in grid)
    log_sofar = max(pieces) if pieces else cb
    for _ in range(200):
        d = dmax(T)
        if d < 0 and h(T) - math.log(-d) < log_sofar + math.log(tol * 0.25):
            break
        T *= 1.5
    else:
        raise NoConvergence("could not bound the integral tail")
    pts = [p for p in (t_peak,) if t_split < p < T]
    vb, eb, nb = _quad(lambda t: math.exp(h(t) - cb), t_split, T, tol, points=pts or None)
    used += nb
    if vb > 0:
        pieces.append(cb + math.log(vb))
        errs.append((cb + math.log(vb), eb / vb))
    d = dmax(T)
    tail_log = h(T) - math.log(-d)

    total = float(np.logaddexp.reduce(pieces))
    rel = sum(math.exp(lp - total) * e for lp, e in errs) + math.exp(tail_log - total) + 4 * EPS
    return total, rel, used


# ---------------------------------------------------------------------------
# Tricomi U
# ---------------------------------------------------------------------------

def _log_tricomi_u(a: float, b: float, z: float, tol: float) -> _LogVal:
    if not (a > 0 and z > 0):
        raise UnsupportedRegime("U(a, b; z) is only evaluated for a > 0 and z > 0")
    if not all(map(math.isfinite, (a, b, z))):
        raise UnsupportedRegime("non-finite argument")
    # s = z t:  U = z^-a / Gamma(a) * int e^-s s^(a-1) (1 + s/z)^(b-a-1) ds
    p = b - a - 1.0

    def logg(s):
        return -s + p * math.log1p(s / z)

    def h(s):
        return logg(s) + (a - 1.0) * math.log(s)

    def dmax(T):
        return -1.0 + max(a - 1.0, 0.0) / T + max(p, 0.0) / (z + T)

    # stationary point of h: -1 + (a-1)/s + p/(z+s) = 0
    A, B, C = 1.0, z - (a - 1.0) - p, -(a - 1.0) * z
    disc = B * B - 4 * A * C
    s_peak = max((-B + math.sqrt(disc)) / 2.0, 0.0) if disc >= 0 else 0.0
    width = math.sqrt(max(a, 1.0)) + 1.0
    split = 1.0 if s_peak > 2.0 or a < 1.0 else min(1.0, max(s_peak, 0.5))
    lI, rel, used = _log_laplace(logg, h, dmax, a - 1.0, split, s_peak, width, tol)
    return _LogVal(-a * math.log(z) - math.lgamma(a) + lI, 1, rel, used)


def tricomi_u(a: float, b: float, z: float, tol: float = DEFAULT_TOL) -> SpecFunResult:
    """U(a, b; z) = (1/Gamma(a)) int_0^inf e^{-zt} t^{a-1} (1+t)^{b-a-1} dt."""
    return _log_tricomi_u(float(a), float(b), float(z), tol).result()


def log_tricomi_u(a: float, b: float, z: float, tol: float = DEFAULT_TOL):
    r = _log_tricomi_u(float(a), float(b), float(z), tol)
    return r.log_abs, r.sign


# ---------------------------------------------------------------------------
# Parabolic cylinder D_{-lambda}
# ---------------------------------------------------------------------------

def _log_pcfd(lam: float, z: float, tol: float) -> _LogVal:
    if not lam > 0:
        raise UnsupportedRegime("D_{-lambda}(z) is only evaluated for lambda > 0")
    if not (math.isfinite(lam) and math.isfinite(z)):
        raise UnsupportedRegime("non-finite argument")

    def logg(t):
        return -z * t - 0.5 * t * t

    def h(t):
        return logg(t) + (lam - 1.0) * math.log(t)

    def dmax(T):
        return -z - T + max(lam - 1.0, 0.0) / T

    t_peak = max((-z + math.sqrt(z * z + 4.0 * max(lam - 1.0, 0.0))) / 2.0, 0.0)
    width = 1.0 / math.sqrt(1.0 + max(z, 0.0) ** 2) * max(1.0, math.sqrt(lam))
    split = 1.0 if t_peak > 2.0 or lam < 1.0 else min(1.0, max(t_peak, 0.5))
    lI, rel, used = _log_laplace(logg, h, dmax, lam - 1.0, split, t_peak, width, tol)
    return _LogVal(-0.25 * z * z - math.lgamma(lam) + lI, 1, rel, used)


def parabolic_cylinder_d(lam: float, z: float, tol: float = DEFAULT_TOL) -> SpecFunResult:
    """D_{-lam}(z) = e^{-z^2/4} / Gamma(lam) int_0^inf e^{-zt - t^2/2} t^{lam-1} dt."""
    return _log_pcfd(float(lam), float(z), tol).result()


def log_parabolic_cylinder_d(lam: float, z: float, tol: float = DEFAULT_TOL):
    r = _log_pcfd(float(lam), float(z), tol)
    return r.log_abs, r.sign


# ---------------------------------------------------------------------------
# derivatives by parameter shift
# ---------------------------------------------------------------------------

def _log_combine(terms):
    """log|sum_i s_i e^{l_i}| and its sign for (l_i, s_i) pairs."""
    live = [(l, s) for l, s in terms if s != 0 and l > -math.inf]
    if not live:
        return -math.inf, 0
    m = max(l for l, _ in live)
    acc = math.fsum(s * math.exp(l - m) for l, s in live)
    if acc == 0.0:
        return -math.inf, 0
    return m + math.log(abs(acc)), 1 if acc > 0 else -1


def log_specfun_derivative(which: str, params, z: float, tol: float = DEFAULT_TOL):
    """(log|f'(z)|, sign) for which in {"M", "U", "D"}."""
    z = float(z)
    if which == "M":
        a, b = map(float, params)
        if a == 0.0:
            return -math.inf, 0
        l, s = log_kummer_m(a + 1.0, b + 1.0, z, tol)
        return l + math.log(abs(a / b)), s * (1 if a / b > 0 else -1)
    if which == "U":
        a, b = map(float, params)
        l, s = log_tricomi_u(a + 1.0, b + 1.0, z, tol)
        return l + math.log(a), -s
    if which == "D":
        lam = float(params[0]) if np.ndim(params) else float(params)
        l0, s0 = log_parabolic_cylinder_d(lam, z, tol)
        l1, s1 = log_parabolic_cylinder_d(lam + 1.0, z, tol)
        t0 = (l0 + math.log(abs(z) / 2.0), -s0 * (1 if z > 0 else -1)) if z != 0 else (-math.inf, 0)
        return _log_combine([t0, (l1 + math.log(lam), -s1)])
    raise ValueError(f"unknown function {which!r}")


def specfun_derivative(which: str, params, z: float, tol: float = DEFAULT_TOL) -> float:
    """d/dz of M(a,b;z), U(a,b;z) or D_{-lam}(z) through the shifted-parameter identities."""
    l, s = log_specfun_derivative(which, params, z, tol)
    return 0.0 if s == 0 else s * math.exp(l)
