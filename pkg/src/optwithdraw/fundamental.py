"""Fundamental solutions of the killed generators.

``psi`` is the increasing solution of (L - q)u = 0 with u(0) = 0, u'(0) = 1,
``phi`` the decreasing solution of (L_F - q)u = 0 with u(0) = 1, and
``phi_tilde`` the increasing solution of the Ornstein-Uhlenbeck extension on
the negative half-line with u(0) = 1.  Here L has drift mu and L_F has drift
mu - F, both with diffusion sigma.

Tabulated solutions come from Riccati-type reformulations integrated with an
8th order Runge-Kutta scheme and stored on a uniform grid as quintic Hermite
curves.  Second derivatives are always recovered from the ODE itself.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, optimize

from . import specfun
from .model import ExtendedModel, OutOfDomain

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_DX = 1e-2
_LOG_OVERFLOW = 700.0
# backward Riccati sweeps turn stiff where |drift| is large; LSODA switches to BDF there
ODE_METHOD = "LSODA"


class FundamentalError(ArithmeticError):
    pass


class StepFailure(FundamentalError):
    pass


class RiccatiRootMissing(FundamentalError):
    pass


class DomainTooShort(FundamentalError):
    pass


class NoSignChange(FundamentalError):
    pass


class UnsupportedFamily(FundamentalError):
    pass


class Curve:
    """Tabulated function on a strictly increasing grid.

    Piecewise Hermite interpolation: quintic when second derivatives are
    supplied, cubic otherwise.  Coefficients are built in one vectorized pass.
    """

    def __init__(self, grid, values, derivs, second=None):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        derivs = np.asarray(derivs, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or not np.all(np.diff(grid) > 0):
            raise ValueError("curve grid must be strictly increasing with at least two nodes")
        if values.shape != grid.shape or derivs.shape != grid.shape:
            raise ValueError("curve data must match the grid")
        if second is not None:
            second = np.asarray(second, dtype=float)
        for arr in (values, derivs, second):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError("curve data must be finite")
        self.grid = grid
        self.values = values
        self.derivs = derivs
        self.second = second
        self._h = np.diff(grid)
        self._coef = self._build()
        self._slack = 1e-12 * max(1.0, grid[-1] - grid[0])

    def _build(self) -> np.ndarray:
        h = self._h
        y0, y1 = self.values[:-1], self.values[1:]
        d0, d1 = h * self.derivs[:-1], h * self.derivs[1:]
        if self.second is None:
            A = y1 - y0 - d0
            B = d1 - d0
            return np.stack([y0, d0, 3 * A - B, B - 2 * A], axis=1)
        a2 = 0.5 * h * h * self.second[:-1]
        A = y1 - y0 - d0 - a2
        B = d1 - d0 - 2 * a2
        C = h * h * self.second[1:] - 2 * a2
        return np.stack([y0, d0, a2, 10 * A - 4 * B + 0.5 * C, -15 * A + 7 * B - C,
                         6 * A - 3 * B + 0.5 * C], axis=1)

    @property
    def x_lo(self) -> float:
        return float(self.grid[0])

    @property
    def x_hi(self) -> float:
        return float(self.grid[-1])

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.grid[0] - self._slack) or np.any(x > self.grid[-1] + self._slack):
            raise OutOfDomain(f"curve evaluated outside [{self.grid[0]:g}, {self.grid[-1]:g}]")
        x = np.clip(x, self.grid[0], self.grid[-1])
        i = np.clip(np.searchsorted(self.grid, x, side="right") - 1, 0, self.grid.size - 2)
        h = self._h[i]
        return (x - self.grid[i]) / h, self._coef[i], h

    def _eval(self, x, order):
        t, c, h = self._locate(x)
        n = c.shape[-1]
        acc = np.zeros_like(t)
        for k in range(n - 1, order - 1, -1):
            fac = math.perm(k, order)
            acc = acc * t + fac * c[..., k]
        return acc / h ** order if order else acc

    def __call__(self, x):
        return self._eval(x, 0)

    def deriv(self, x):
        return self._eval(x, 1)

    def second_deriv(self, x):
        return self._eval(x, 2)


def uniform_grid(lo: float, hi: float, dx: float) -> np.ndarray:
    n = max(int(math.ceil((hi - lo) / dx)), 1)
    return np.linspace(lo, hi, n + 1)


# ---------------------------------------------------------------------------
# closed-form kernels
# ---------------------------------------------------------------------------

class _BaseSolution:
    """One explicit solution u of sigma^2/2 u'' + (c0 + c1 x) u' - q u = 0 (or its
    sigma-affine / sigma^2-affine analogue), returned as (log|u|, sign, u'/u)."""

    def __init__(self, family, decreasing, c0, c1, s0, s1, q):
        self.family = family
        self.decreasing = decreasing
        self.c0, self.c1, self.s0, self.s1, self.q = map(float, (c0, c1, s0, s1, q))
        self.params: dict[str, float] = {}
        self.branch = ""
        getattr(self, "_setup_" + family)()

    # --- sigma constant -----------------------------------------------------
    def _setup_sigma_const(self):
        c0, c1, s, q = self.c0, self.c1, self.s0, self.q
        if c1 == 0.0:
            root = math.sqrt(c0 * c0 + 2 * q * s * s)
            self.branch = "exponential"
            self.params["theta"] = (root + c0) / s ** 2 if self.decreasing else (root - c0) / s ** 2
            return
        sgn = 1.0 if c1 > 0 else -1.0
        a = q / abs(c1) + sgn / 2.0
        self.branch = "c1>0" if c1 > 0 else "c1<0"
        self.params.update(a=a, lam=a + 0.5, A=a / 2.0 + 0.25,
                           zscale=sgn * math.sqrt(2.0 / abs(c1)) / s,
                           dz=math.sqrt(2.0 * abs(c1)) / s)

    def _eval_sigma_const(self, x):
        c0, c1, s = self.c0, self.c1, self.s0
        p = self.params
        if self.branch == "exponential":
            th = p["theta"]
            return (-th * x, 1, -th) if self.decreasing else (th * x, 1, th)
        pre = -x * (2 * c0 + c1 * x) / (2 * s * s)
        dpre = -(c0 + c1 * x) / (s * s)
        z = p["zscale"] * (c0 + c1 * x)
        if self.decreasing:
            lam = p["lam"]
            l0, _ = specfun.log_parabolic_cylinder_d(lam, z)
            l1, _ = specfun.log_parabolic_cylinder_d(lam + 1.0, z)
            dlogD = -z / 2.0 - lam * math.exp(l1 - l0)
            return pre + l0, 1, dpre + p["dz"] * dlogD
        if c1 < 0:
            # the even Weber solution is nearly parallel to phi_0 here; use D(-z)
            lam = p["lam"]
            l0, _ = specfun.log_parabolic_cylinder_d(lam, -z)
            l1, _ = specfun.log_parabolic_cylinder_d(lam + 1.0, -z)
            dlogD = z / 2.0 - lam * math.exp(l1 - l0)
            return pre + l0, 1, dpre - p["dz"] * dlogD
        A = p["A"]
        w = z * z / 2.0
        l0, s0 = specfun.log_kummer_m(A, 0.5, w)
        l1, s1 = specfun.log_kummer_m(A + 1.0, 1.5, w)
        dlogy = z * 2.0 * A * s0 * s1 * math.exp(l1 - l0) - z / 2.0
        return pre + l0 - z * z / 4.0, s0, dpre + p["dz"] * dlogy

    # --- sigma affine --------------------------------------------------------
    def _setup_sigma_affine(self):
        c0, c1, s0, s1, q = self.c0, self.c1, self.s0, self.s1, self.q
        if not (s0 > 0 and s1 > 0):
            raise UnsupportedFamily("affine sigma kernel needs sigma0, sigma1 > 0")
        delta = math.sqrt((s1 * s1 - 2 * c1) ** 2 + 8 * q * s1 * s1)
        a = (delta - s1 * s1 + 2 * c1) / (2 * s1 * s1)
        b = 1.0 + delta / (s1 * s1)
        self.branch = "decreasing" if self.decreasing else "increasing"
        self.params.update(Delta=delta, a=a, b=b, wnum=2 * (c0 * s1 - c1 * s0) / (s1 * s1))
        if not self.decreasing and (2.0 - b) <= 0 and (2.0 - b) == math.floor(2.0 - b):
            raise UnsupportedFamily("second Kummer parameter hits a pole")

    def _eval_sigma_affine(self, x):
        s0, s1 = self.s0, self.s1
        p = self.params
        a, b = p["a"], p["b"]
        lin = s0 + s1 * x
        w = p["wnum"] / lin
        dw = -w * s1 / lin
        if self.decreasing:
            l0, sg0 = specfun.log_kummer_m(a, b, w)
            l1, sg1 = specfun.log_kummer_m(a + 1.0, b + 1.0, w)
            pw = -a
            A, B = a, b
        else:
            A, B = 1.0 + a - b, 2.0 - b
            l0, sg0 = specfun.log_kummer_m(A, B, w)
            l1, sg1 = specfun.log_kummer_m(A + 1.0, B + 1.0, w)
            pw = b - a - 1.0
        dlogM = (A / B) * sg0 * sg1 * math.exp(l1 - l0) if A != 0 else 0.0
        logu = pw * math.log1p(s1 * x / s0) + l0
        return logu, sg0, pw * s1 / lin + dw * dlogM

    # --- sigma^2 affine ------------------------------------------------------
    def _setup_sigma2_affine(self):
        c0, c1, s0, s1, q = self.c0, self.c1, self.s0, self.s1, self.q
        if not (s0 > 0 and s1 > 0):
            raise UnsupportedFamily("square-root sigma kernel needs sigma0, sigma1 > 0")
        if c1 == 0.0:
            raise UnsupportedFamily("square-root sigma kernel with zero drift slope is not available")
        a = q / abs(c1)
        b = 1.0 + 2.0 * (c1 * s0 - c0 * s1) / (s1 * s1)
        self.branch = "c1>0" if c1 > 0 else "c1<0"
        self.params.update(a=a, b=b)
        if not self.decreasing:
            B = 1.0 + b
            if B <= 0 and B == math.floor(B):
                raise UnsupportedFamily("second Kummer parameter hits a pole")

    def _eval_sigma2_affine(self, x):
        c1, s0, s1 = self.c1, self.s0, self.s1
        p = self.params
        a, b = p["a"], p["b"]
        lin = s0 + s1 * x
        if self.decreasing:
            if c1 > 0:
                s = 2 * c1 * lin / (s1 * s1)
                ds = 2 * c1 / s1
                l0, _ = specfun.log_tricomi_u(1 + a, 1 + b, s)
                l1, _ = specfun.log_tricomi_u(2 + a, 2 + b, s)
                logu = -2 * c1 * x / s1 + b * math.log1p(s1 * x / s0) + l0
                dlog = -2 * c1 / s1 + b * s1 / lin - ds * (1 + a) * math.exp(l1 - l0)
                return logu, 1, dlog
            s = -2 * c1 * lin / (s1 * s1)
            ds = -2 * c1 / s1
            l0, _ = specfun.log_tricomi_u(a, 1 - b, s)
            l1, _ = specfun.log_tricomi_u(a + 1, 2 - b, s)
            return l0, 1, -ds * a * math.exp(l1 - l0)
        if c1 > 0:
            s = 2 * c1 * lin / (s1 * s1)
            ds = 2 * c1 / s1
            A, B = 1 + a, 1 + b
            l0, sg0 = specfun.log_kummer_m(A, B, s)
            l1, sg1 = specfun.log_kummer_m(A + 1, B + 1, s)
            logu = -2 * c1 * x / s1 + b * math.log1p(s1 * x / s0) + l0
            dlog = -2 * c1 / s1 + b * s1 / lin + ds * (A / B) * sg0 * sg1 * math.exp(l1 - l0)
            return logu, sg0, dlog
        s = -2 * c1 * lin / (s1 * s1)
        ds = -2 * c1 / s1
        A, B = a + b, 1 + b
        l0, sg0 = specfun.log_kummer_m(A, B, s)
        l1, sg1 = specfun.log_kummer_m(A + 1, B + 1, s)
        logu = b * math.log1p(s1 * x / s0) + l0
        dlog = b * s1 / lin + ds * (A / B) * sg0 * sg1 * math.exp(l1 - l0)
        return logu, sg0, dlog

    def __call__(self, x: float):
        return getattr(self, "_eval_" + self.family)(float(x))


@dataclass(frozen=True, eq=False)
class ClosedFormKernel:
    """Normalized explicit fundamental solution.

    ``target`` is ``phi`` (decreasing, value 1 at 0), ``psi`` (value 0 and
    slope 1 at 0, built as kappa * (u1/u1(0) - phi_0)) or ``phi_tilde``
    (the mirrored decreasing solution, increasing on x < 0).
    """

    family: str
    target: str
    c0: float
    c1: float
    sigma0: float
    sigma1: float
    q: float
    base: _BaseSolution = field(repr=False)
    phi0: "_BaseSolution | None" = field(default=None, repr=False)
    kappa: float = math.nan
    branch: str = ""
    params: dict = field(default_factory=dict)

    @cached_property
    def _at_zero(self):
        return self.base(0.0), (self.phi0(0.0) if self.phi0 is not None else None)

    def _phi_like(self, base, x):
        l, sg, d = base(x)
        l0, sg0, _ = self._at_zero[0 if base is self.base else 1]
        v = sg * sg0 * math.exp(l - l0)
        return v, v * d

    def evaluate(self, x: float) -> tuple[float, float]:
        """(value, first derivative) at a scalar point."""
        if self.target == "phi":
            return self._phi_like(self.base, x)
        if self.target == "phi_tilde":
            v, d = self._phi_like(self.base, -x)
            return v, -d
        u, du = self._phi_like(self.base, x)
        f, df = self._phi_like(self.phi0, x)
        return self.kappa * (u - f), self.kappa * (du - df)

    def deriv_at_zero(self) -> float:
        return self.evaluate(0.0)[1]


def make_kernel(family, target, c0, c1, sigma0, sigma1, q) -> ClosedFormKernel:
    """Build a normalized kernel.  For ``psi`` pass the drift (mu0, mu1) as (c0, c1)."""
    if target == "phi":
        base = _BaseSolution(family, True, c0, c1, sigma0, sigma1, q)
        return ClosedFormKernel(family, target, c0, c1, sigma0, sigma1, q, base,
                                branch=base.branch, params=dict(base.params))
    if target == "phi_tilde":
        if family != "sigma_const":
            raise UnsupportedFamily("the negative-axis solution is always an Ornstein-Uhlenbeck kernel")
        base = _BaseSolution(family, True, -c0, c1, sigma0, sigma1, q)
        return ClosedFormKernel(family, target, c0, c1, sigma0, sigma1, q, base,
                                branch=base.branch, params=dict(base.params))
    if target != "psi":
        raise ValueError(f"unknown kernel target {target!r}")
    base = _BaseSolution(family, False, c0, c1, sigma0, sigma1, q)
    phi0 = _BaseSolution(family, True, c0, c1, sigma0, sigma1, q)
    _, _, d1 = base(0.0)
    _, _, d0 = phi0(0.0)
    kappa = 1.0 / (d1 - d0)
    return ClosedFormKernel(family, target, c0, c1, sigma0, sigma1, q, base, phi0, kappa,
                            branch=base.branch, params=dict(base.params))


# ---------------------------------------------------------------------------
# FundamentalSolution
# ---------------------------------------------------------------------------

class FundamentalSolution:
    """Evaluable fundamental solution with first and second derivatives.

    Tabulated ``psi`` stores a curve of psi itself; tabulated ``phi`` stores a
    curve of log(phi) whose derivative is the Riccati variable phi'/phi, so the
    ratio phi/phi' stays accurate where phi underflows.
    """

    def __init__(self, kind, model: ExtendedModel, domain, *, curve: Curve | None = None,
                 log_curve: Curve | None = None, kernel: ClosedFormKernel | None = None):
        self.kind = kind
        self.model = model
        self.domain = (float(domain[0]), float(domain[1]))
        self.curve = curve
        self.log_curve = log_curve
        self.kernel = kernel
        self.backing = "closed_form" if kernel is not None else "tabulated"
        self.with_bound = kind != "psi"
        if kind == "phi_tilde":
            m = model
            self._c = (m.mu_neg[0] - m.F_neg[0], m.mu_neg[1] - m.F_neg[1])
            self._sig2 = m.sigma_neg ** 2

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain
        slack = 1e-12 * max(1.0, hi - lo)
        if np.any(x < lo - slack) or np.any(x > hi + slack):
            raise OutOfDomain(f"{self.kind} evaluated outside [{lo:g}, {hi:g}]")
        return x

    def _kernel_eval(self, x):
        xs = np.atleast_1d(x)
        out = np.array([self.kernel.evaluate(float(t)) for t in xs.ravel()]).reshape(xs.shape + (2,))
        v, d = out[..., 0], out[..., 1]
        if np.ndim(x) == 0:
            return float(v[0]), float(d[0])
        return v, d

    def value_and_deriv(self, x):
        x = self._check(x)
        if self.kernel is not None:
            return self._kernel_eval(x)
        if self.curve is not None:
            return self.curve(x), self.curve.deriv(x)
        lv = np.exp(self.log_curve(x))
        return lv, lv * self.log_curve.deriv(x)

    def value(self, x):
        return self.value_and_deriv(x)[0]

    def deriv(self, x):
        return self.value_and_deriv(x)[1]

    def _coeffs(self, x):
        if self.kind == "phi_tilde":
            return self._c[0] + self._c[1] * x, self._sig2 + 0.0 * x
        m = self.model
        return m.drift(x, self.with_bound), m.sigma(x) ** 2

    def second_deriv(self, x, value=None, deriv=None):
        """u'' from the ODE:  u'' = 2(q u - drift u') / sigma^2."""
        x = self._check(x)
        if value is None or deriv is None:
            value, deriv = self.value_and_deriv(x)
        c, s2 = self._coeffs(x)
        return 2.0 * (self.model.q * value - c * deriv) / s2

    def log_value(self, x):
        """log u; exact for tabulated phi even where u underflows."""
        x = self._check(x)
        if self.log_curve is not None:
            return self.log_curve(x)
        return np.log(self.value(x))

    def log_deriv(self, x):
        """u'/u, taken directly from the Riccati table when available."""
        x = self._check(x)
        if self.log_curve is not None:
            return self.log_curve.deriv(x)
        v, d = self.value_and_deriv(x)
        return d / v

    def ratio(self, x):
        """u/u'."""
        x = self._check(x)
        if self.log_curve is not None:
            return 1.0 / self.log_curve.deriv(x)
        v, d = self.value_and_deriv(x)
        return v / d

    def grid(self) -> np.ndarray:
        c = self.curve if self.curve is not None else self.log_curve
        if c is not None:
            return c.grid
        return uniform_grid(*self.domain, 0.05)


# ---------------------------------------------------------------------------
# ODE solves
# ---------------------------------------------------------------------------

def _integrate(rhs, span, y0, tol, method=ODE_METHOD, dense=True):
    sol = integrate.solve_ivp(rhs, span, y0, method=method, rtol=tol, atol=tol * 1e-3,
                              dense_output=dense)
    if not sol.success:
        raise StepFailure(f"integration failed: {sol.message}")
    return sol


def solve_psi(m: ExtendedModel, x_hi: float | None = None, tol: float = DEFAULT_TOL,
              dx: float = DEFAULT_DX) -> FundamentalSolution:
    """Increasing solution psi with psi(0) = 0, psi'(0) = 1.

    Integrates r = psi/psi' and L = log psi' forward, which never overflows;
    psi itself is tabulated and the domain is cut where exp(L) would overflow.
    """
    x_hi = m.x_hi if x_hi is None else float(x_hi)
    q = m.q
    coef = m.drift_and_var(False)

    def rhs(x, y):
        mu, s2 = coef(x)
        r = y[0]
        g = 2.0 * (q * r - mu) / s2
        return [1.0 - r * g, g]

    def overflow(x, y):
        return y[1] + math.log(max(y[0], 1e-300)) - _LOG_OVERFLOW
    overflow.terminal = True

    sol = integrate.solve_ivp(rhs, (0.0, x_hi), [0.0, 0.0], method="DOP853", rtol=tol,
                              atol=tol * 1e-3, dense_output=True, events=overflow)
    if not sol.success:
        raise StepFailure(f"psi integration failed: {sol.message}")
    end = float(sol.t[-1])
    if end < x_hi * (1 - 1e-12):
        warnings.warn(f"psi overflows beyond x={end:.3f}; domain truncated", RuntimeWarning)
        x_hi = end
    grid = uniform_grid(0.0, x_hi, dx)
    r, L = sol.sol(grid)
    d1 = np.exp(L)
    val = r * d1
    mu = m.mu(grid)
    s2 = m.sigma(grid) ** 2
    d2 = 2.0 * (q * val - mu * d1) / s2
    curve = Curve(grid, val, d1, d2)
    return FundamentalSolution("psi", m, (0.0, x_hi), curve=curve)


def riccati_root(c: float, s2: float, q: float) -> float:
    """Negative root of s2/2 v^2 + c v - q = 0."""
    disc = c * c + 2.0 * q * s2
    if not disc > 0:
        raise RiccatiRootMissing(f"discriminant {disc:g} is not positive")
    # stable form of (-c - sqrt(disc)) / s2
    return -2.0 * q / (math.sqrt(disc) - c) if c < 0 else (-c - math.sqrt(disc)) / s2


def contraction_start(m: ExtendedModel, x_from: float, budget: float, with_bound: bool = True,
                      x_cap: float | None = None) -> float:
    """Smallest x >= x_from with int_{x_from}^x kappa >= budget.

    kappa = 2 sqrt(c^2 + 2 q sigma^2) / sigma^2 is the rate at which backward
    Riccati integration forgets its starting value, so starting there makes
    the start error invisible on [0, x_from].  Stops early at ``x_cap``.
    """
    coef = m.drift_and_var(with_bound)
    q = m.q
    if x_cap is None:
        x_cap = x_from if any(c.kind == "custom" for c in (m.spec.mu, m.spec.sigma, m.spec.bound)) else math.inf
    x = x_from
    acc = 0.0
    while acc < budget:
        if x >= x_cap:
            return float(x_cap)
        h = min(max(0.02, 0.05 * x), x_cap - x)
        c, s2 = coef(x + 0.5 * h)
        acc += 2.0 * math.sqrt(c * c + 2 * q * s2) / s2 * h
        x += h
    return float(x)


def riccati_budget(tol: float) -> float:
    return math.log(1.0 / tol) + 6.0


def _phi_riccati(m: ExtendedModel, x_hi: float, tol: float):
    q = m.q
    coef = m.drift_and_var(True)

    def rhs(x, y):
        c, s2 = coef(x)
        v = y[0]
        return [2.0 * (q - c * v) / s2 - v * v, v]

    x_start = contraction_start(m, x_hi, riccati_budget(tol))
    if x_start < x_hi * (1 + 1e-12) and x_hi > 0:
        c_hi, s2_hi = coef(x_hi)
        kap = 2.0 * math.sqrt(c_hi * c_hi + 2 * q * s2_hi) / s2_hi
        if kap * x_hi < riccati_budget(tol):
            warnings.warn("phi start point could not be moved past the tabulated range; "
                          "boundary error may be visible", RuntimeWarning)
    y = [riccati_root(*coef(x_start), q)]
    if x_start > x_hi:
        pre = _integrate(lambda x, y: rhs(x, [y[0], 0.0])[:1], (x_start, x_hi), y, tol, dense=False)
        y = [float(pre.y[0, -1])]
    return _integrate(rhs, (x_hi, 0.0), [y[0], 0.0], tol)


def solve_phi(m: ExtendedModel, x_hi: float | None = None, tol: float = DEFAULT_TOL,
              dx: float = DEFAULT_DX) -> FundamentalSolution:
    """Decreasing solution phi with phi(0) = 1 by backward Riccati integration."""
    x_hi = m.x_hi if x_hi is None else float(x_hi)
    sol = _phi_riccati(m, x_hi, tol)
    ell0 = float(sol.sol(0.0)[1])
    grid = uniform_grid(0.0, x_hi, dx)
    v, ell = sol.sol(grid)
    ell = ell - ell0
    c = m.drift(grid, True)
    s2 = m.sigma(grid) ** 2
    dv = 2.0 * (m.q - c * v) / s2 - v * v
    log_curve = Curve(grid, ell, v, dv)
    return FundamentalSolution("phi", m, (0.0, x_hi), log_curve=log_curve)


def phi_boundary_sensitivity(m: ExtendedModel, x_hi: float, tol: float = DEFAULT_TOL,
                             probe: float | None = None) -> float:
    """Max relative change of phi on [0, probe] when x_hi is doubled."""
    probe = min(x_hi / 2.0, 20.0) if probe is None else probe
    xs = np.linspace(0.0, probe, 201)
    out = []
    for hi in (x_hi, 2.0 * x_hi):
        sol = _phi_riccati(m, hi, tol)
        ell = sol.sol(xs)[1]
        out.append(ell - ell[0])
    return float(np.max(np.abs(np.expm1(out[1] - out[0]))))


def ou_extension_params(m: ExtendedModel) -> tuple[float, float, float]:
    """(c0, c1, sigma) of the full-withdrawal dynamics on x < 0."""
    return (m.mu_neg[0] - m.F_neg[0], m.mu_neg[1] - m.F_neg[1], m.sigma_neg)


def solve_phi_tilde(m: ExtendedModel, x_lo: float | None = None, tol: float = DEFAULT_TOL) -> FundamentalSolution:
    """Increasing solution on (x_lo, 0] of the extended OU generator, value 1 at 0."""
    x_lo = m.x_lo if x_lo is None else float(x_lo)
    c0, c1, s = ou_extension_params(m)
    kernel = make_kernel("sigma_const", "phi_tilde", c0, c1, s, 0.0, m.q)
    return FundamentalSolution("phi_tilde", m, (x_lo, 0.0), kernel=kernel)


def inflection_point(psi: FundamentalSolution, m: ExtendedModel, xtol: float = 1e-12) -> float:
    """Zero of g = q psi - mu psi', i.e. of q r - mu with r = psi/psi'."""
    q = m.q

    def g(x):
        return q * psi.ratio(x) - m.mu(x)

    grid = psi.grid()
    vals = g(grid)
    idx = np.nonzero((vals[:-1] < 0) & (vals[1:] >= 0))[0]
    if idx.size == 0:
        raise NoSignChange(f"q psi - mu psi' has no sign change on [0, {grid[-1]:g}]; "
                           f"sign at the right end is {np.sign(vals[-1]):+.0f}")
    if idx.size > 1:
        log.warning("psi has %d inflection candidates; using the first", idx.size)
    i = int(idx[0])
    if vals[i + 1] == 0.0:
        return float(grid[i + 1])
    return float(optimize.brentq(lambda x: float(g(x)), grid[i], grid[i + 1], xtol=xtol, rtol=1e-15))


# ---------------------------------------------------------------------------
# explicit families
# ---------------------------------------------------------------------------

def detect_family(m: ExtendedModel) -> tuple[str, float, float, tuple[float, float], tuple[float, float]]:
    """Return (family, sigma0, sigma1, (mu0, mu1), (F0, F1)) or raise UnsupportedFamily."""
    spec = m.spec

    def affine_params(c):
        if c.kind == "affine":
            return c.params["c0"], c.params["c1"]
        if c.kind == "constant":
            return c.params["s0"], 0.0
        raise UnsupportedFamily(f"{c.role} of kind {c.kind!r} has no explicit solution")

    mu = affine_params(spec.mu)
    F = affine_params(spec.bound)
    sg = spec.sigma
    if sg.kind == "constant":
        return "sigma_const", sg.params["s0"], 0.0, mu, F
    if sg.kind == "affine":
        s0, s1 = sg.params["c0"], sg.params["c1"]
        if s1 == 0.0:
            return "sigma_const", s0, 0.0, mu, F
        return "sigma_affine", s0, s1, mu, F
    if sg.kind == "sqrt_affine":
        s0, s1 = sg.params["s0"], sg.params["s1"]
        if s1 == 0.0:
            return "sigma_const", math.sqrt(s0), 0.0, mu, F
        return "sigma2_affine", s0, s1, mu, F
    raise UnsupportedFamily(f"diffusion of kind {sg.kind!r} has no explicit solution")


def closed_form_fundamentals(m: ExtendedModel, x_hi: float | None = None):
    """(psi, phi) backed by special-function kernels."""
    family, s0, s1, (mu0, mu1), (F0, F1) = detect_family(m)
    x_hi = m.x_hi if x_hi is None else float(x_hi)
    if family == "sigma2_affine" and mu1 == 0.0:
        raise UnsupportedFamily("square-root sigma kernel with zero drift slope is not available")
    kpsi = make_kernel(family, "psi", mu0, mu1, s0, s1, m.q)
    kphi = make_kernel(family, "phi", mu0 - F0, mu1 - F1, s0, s1, m.q)
    psi = FundamentalSolution("psi", m, (0.0, x_hi), kernel=kpsi)
    phi = FundamentalSolution("phi", m, (0.0, x_hi), kernel=kphi)
    return psi, phi


def phi_prime_zero_formula(family: str, c0: float, c1: float, s0: float, s1: float, q: float) -> float:
    """phi'(0) from the explicit derivative formulas (with the sign conventions verified here)."""
    if family == "sigma_const":
        if c1 == 0.0:
            return -(math.sqrt(c0 * c0 + 2 * q * s0 * s0) + c0) / s0 ** 2
        a = q / abs(c1) + math.copysign(0.5, c1)
        z0 = math.copysign(1.0, c1) * math.sqrt(2.0) * c0 / (math.sqrt(abs(c1)) * s0)
        ratio = specfun.specfun_derivative("D", (a + 0.5,), z0) / specfun.parabolic_cylinder_d(a + 0.5, z0).value
        return -c0 / s0 ** 2 + math.sqrt(2 * abs(c1)) / s0 * ratio
    if family == "sigma_affine":
        delta = math.sqrt((s1 * s1 - 2 * c1) ** 2 + 8 * q * s1 * s1)
        a = (delta - s1 * s1 + 2 * c1) / (2 * s1 * s1)
        b = 1.0 + delta / (s1 * s1)
        w0 = 2 * (c0 * s1 - c1 * s0) / (s1 * s1 * s0)
        l1, g1 = specfun.log_kummer_m(1 + a, 1 + b, w0)
        l0, g0 = specfun.log_kummer_m(a, b, w0)
        return -a * s1 / s0 + 2 * (c1 * s0 - c0 * s1) * a / (s1 * s0 * s0 * b) * g1 * g0 * math.exp(l1 - l0)
    if family == "sigma2_affine":
        a = q / abs(c1)
        b = 1.0 + 2.0 * (c1 * s0 - c0 * s1) / (s1 * s1)
        if c1 > 0:
            s = 2 * c1 * s0 / (s1 * s1)
            r = math.exp(specfun.log_tricomi_u(2 + a, 2 + b, s)[0] - specfun.log_tricomi_u(1 + a, 1 + b, s)[0])
            return -2 * c1 / s1 + b * s1 / s0 - (2 * c1 / s1) * (1 + a) * r
        s = -2 * c1 * s0 / (s1 * s1)
        r = math.exp(specfun.log_tricomi_u(1 + a, 2 - b, s)[0] - specfun.log_tricomi_u(a, 1 - b, s)[0])
        return -(2 * q / s1) * r
    raise UnsupportedFamily(family)
