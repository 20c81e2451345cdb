"""Regime decision, optimal barrier, refraction performance and value function.

With r = psi/psi' and 1/v = phi/phi' the barrier equation reads

    Delta(b) = (1 - J_0'(b)) / v(b) - r(b) + J_0(b) = 0,

which is the resolvent form with the I_F(0) phi terms cancelled.  Delta is
positive just right of 0 in the positive regime and nonpositive at the
inflection point b_hat of psi, so the smallest sign change in (0, b_hat] is
bracketed and refined with Brent's method.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .fundamental import (Curve, FundamentalSolution, DEFAULT_DX, DEFAULT_TOL, inflection_point,
                          solve_phi, solve_phi_tilde, solve_psi)
from .model import ExtendedModel
from .resolvent import ResolventBundle, build_resolvent, concavity_defect

log = logging.getLogger(__name__)

BARRIER_ZERO = "BarrierZero"
BARRIER_POSITIVE = "BarrierPositive"
BORDERLINE_TOL = 1e-9
SCAN_NODES = 1000


class OptimizerError(ArithmeticError):
    pass


class NoRoot(OptimizerError):
    pass


class DenominatorVanishes(OptimizerError):
    pass


class PiecewiseCurve:
    """Two curves glued at ``split``; the right piece owns the split point."""

    def __init__(self, left: Curve | None, right: Curve, split: float):
        self.left = left
        self.right = right
        self.split = float(split)
        if left is None:
            self.grid, self.values, self.derivs = right.grid, right.values, right.derivs
        else:
            self.grid = np.concatenate([left.grid[:-1], right.grid])
            self.values = np.concatenate([left.values[:-1], right.values])
            self.derivs = np.concatenate([left.derivs[:-1], right.derivs])

    @property
    def x_lo(self) -> float:
        return float(self.grid[0])

    @property
    def x_hi(self) -> float:
        return float(self.grid[-1])

    def _apply(self, name, x):
        x = np.asarray(x, dtype=float)
        if self.left is None:
            return getattr(self.right, name)(x)
        lm = x < self.split
        out = np.empty_like(x)
        if np.any(lm):
            out[lm] = getattr(self.left, name)(x[lm])
        if np.any(~lm):
            out[~lm] = getattr(self.right, name)(x[~lm])
        return out if out.ndim else float(out)

    def __call__(self, x):
        return self._apply("__call__", x)

    def deriv(self, x):
        return self._apply("deriv", x)

    def second_deriv(self, x):
        return self._apply("second_deriv", x)

    def one_sided(self, x: float, side: str):
        """(value, first, second) from the requested piece at x."""
        piece = self.left if side == "left" and self.left is not None else self.right
        return float(piece(x)), float(piece.deriv(x)), float(piece.second_deriv(x))


@dataclass
class Diagnostics:
    smooth_fit_gap: float = 0.0
    value_gap: float = 0.0
    c2_gap: float = 0.0
    hjb_residual_max: float = 0.0
    hjb_residual_interp: float = 0.0
    dominance_margin: float = math.nan
    concavity_defect: float = 0.0
    region_mismatch: float = 0.0
    delta_form_gap: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class Solution:
    regime: str
    b_star: float
    b_hat: float
    value: PiecewiseCurve
    psi: FundamentalSolution
    phi: FundamentalSolution
    phi_tilde: FundamentalSolution
    resolvent: ResolventBundle
    model: ExtendedModel
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    roots: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def j0(self) -> Curve:
        return self.resolvent.j0

    @property
    def if_curve(self) -> Curve | None:
        return self.resolvent.if_curve

    def summary(self) -> dict:
        return {"regime": self.regime, "b_star": self.b_star, "b_hat": self.b_hat,
                "if0": self.resolvent.if0, "j0_prime0": self.resolvent.j0_prime0,
                "roots": list(self.roots), "warnings": list(self.warnings),
                "diagnostics": self.diagnostics.as_dict()}


# ---------------------------------------------------------------------------
# regime and barrier
# ---------------------------------------------------------------------------

def regime(j0: Curve, bundle: ResolventBundle | None = None, phi: FundamentalSolution | None = None) -> str:
    """BarrierPositive iff J_0'(0+) > 1; within 1e-9 of 1 counts as BarrierZero."""
    s = float(j0.deriv(0.0))
    if bundle is not None and phi is not None and bundle.if_curve is not None:
        alt = float(bundle.if_curve.deriv(0.0)) - bundle.if0 * float(phi.deriv(0.0))
        if abs(alt - s) > 1e-9 * max(1.0, abs(s)):
            raise OptimizerError(f"regime tests disagree: J0'(0)={s!r}, I_F'(0)-I_F(0)phi'(0)={alt!r}")
    if abs(s - 1.0) < BORDERLINE_TOL:
        warnings.warn(f"J0'(0+) = {s:.12f} is within {BORDERLINE_TOL:g} of 1; treated as b* = 0",
                      RuntimeWarning)
        return BARRIER_ZERO
    return BARRIER_POSITIVE if s > 1.0 else BARRIER_ZERO


def delta(b, psi: FundamentalSolution, phi: FundamentalSolution, j0: Curve):
    """Barrier function in the J_0 form."""
    return (1.0 - j0.deriv(b)) * phi.ratio(b) - psi.ratio(b) + j0(b)


def delta_if_form(b, psi, phi, if_curve: Curve):
    return (phi.ratio(b) - psi.ratio(b)) - (if_curve.deriv(b) * phi.ratio(b) - if_curve(b))


def barrier_roots(psi, phi, j0: Curve, b_hat: float, nodes: int = SCAN_NODES, xtol: float = 1e-12):
    """All sign changes of Delta on (0, b_hat], each refined by Brent's method."""
    grid = np.linspace(0.0, b_hat, nodes + 1)[1:]
    d = delta(grid, psi, phi, j0)
    roots = []
    if d[0] <= 0:
        roots.append(float(grid[0]) if d[0] == 0 else float(optimize.brentq(
            lambda b: float(delta(b, psi, phi, j0)), 1e-14 * b_hat, grid[0], xtol=xtol)))
    for i in range(d.size - 1):
        if d[i] > 0 >= d[i + 1] or d[i] < 0 <= d[i + 1]:
            if d[i + 1] == 0:
                roots.append(float(grid[i + 1]))
            else:
                roots.append(float(optimize.brentq(lambda b: float(delta(b, psi, phi, j0)),
                                                   grid[i], grid[i + 1], xtol=xtol, rtol=1e-15)))
    return sorted(set(roots)), d


def find_bstar(psi, phi, j0: Curve, b_hat: float, nodes: int = SCAN_NODES) -> tuple[float, list]:
    """Smallest root of Delta in (0, b_hat] and the full list of roots."""
    roots, d = barrier_roots(psi, phi, j0, b_hat, nodes)
    if not roots:
        raise NoRoot(f"barrier equation has no root in (0, {b_hat:g}]; "
                     f"Delta(0+)={d[0]:.3e}, Delta(b_hat)={d[-1]:.3e}")
    if len(roots) > 1:
        log.warning("barrier equation has %d roots in (0, b_hat]: %s", len(roots), roots)
    return roots[0], roots


# ---------------------------------------------------------------------------
# J_b and V
# ---------------------------------------------------------------------------

def _jb_constants(b, psi, phi, if_curve):
    """(K_left, K_right_scaled) with J_b = K_left psi on [0,b] and
    J_b = I_F + K_right_scaled * phi(x)/phi(b) on [b, inf)."""
    I, dI = float(if_curve(b)), float(if_curve.deriv(b))
    p, dp = psi.value_and_deriv(b)
    v = float(phi.log_deriv(b))
    den = dp - p * v              # (psi' phi - psi phi') / phi
    if not den > 0:
        raise DenominatorVanishes(f"psi' phi - psi phi' = {den:g} at b={b:g}")
    return (dI - I * v) / den, (dI * p - I * dp) / den


def _left_piece(m, psi, b, scale, grid):
    g = np.append(grid[grid < b], b)
    val, der = psi.value_and_deriv(g)
    val, der = scale * val, scale * der
    sec = 2.0 * (m.q * val - m.mu(g) * der) / m.sigma(g) ** 2
    return Curve(g, val, der, sec)


def _right_piece(m, phi, if_curve, b, coef, grid):
    g = np.insert(grid[grid > b], 0, b)
    lphi = phi.log_value(g)
    ratio = np.exp(lphi - lphi[0])
    v = phi.log_deriv(g)
    I, dI = if_curve(g), if_curve.deriv(g)
    val = I + coef * ratio
    der = dI + coef * ratio * v
    sec = 2.0 * (m.q * val - m.drift(g, True) * der - m.F(g)) / m.sigma(g) ** 2
    return Curve(g, val, der, sec)


def performance_jb(b: float, psi, phi, if_curve: Curve, m: ExtendedModel | None = None,
                   grid=None, c1_tol: float = 1e-8) -> PiecewiseCurve:
    """J_b on [0, x_hi] for a refraction barrier b >= 0."""
    m = psi.model if m is None else m
    grid = psi.grid() if grid is None else np.asarray(grid)
    x_hi = min(psi.domain[1], phi.domain[1], if_curve.x_hi)
    grid = grid[grid <= x_hi]
    if not (0.0 <= b < x_hi):
        raise ValueError(f"barrier {b} outside [0, {x_hi})")
    kl, kr = _jb_constants(b, psi, phi, if_curve)
    right = _right_piece(m, phi, if_curve, b, kr, grid)
    if b == 0.0:
        return PiecewiseCurve(None, right, 0.0)
    left = _left_piece(m, psi, b, kl, grid)
    gap = abs(left.derivs[-1] - right.derivs[0]) + abs(left.values[-1] - right.values[0])
    if gap > c1_tol * (1.0 + abs(right.values[0])):
        raise OptimizerError(f"J_b is not C^1 at b={b:g} (gap {gap:.3e})")
    return PiecewiseCurve(left, right, b)


def value_function(regime_flag: str, b_star: float, psi, phi, bundle: ResolventBundle,
                   m: ExtendedModel, grid=None, identity_tol: float = 1e-9) -> PiecewiseCurve:
    grid = psi.grid() if grid is None else np.asarray(grid)
    if regime_flag == BARRIER_ZERO:
        j0 = bundle.j0
        return PiecewiseCurve(None, j0, 0.0)
    if bundle.if_curve is None:
        raise OptimizerError("the value function needs the assembled I_F curve")
    ifc = bundle.if_curve
    x_hi = min(psi.domain[1], phi.domain[1], ifc.x_hi)
    grid = grid[grid <= x_hi]
    dpsi = float(psi.deriv(b_star))
    left = _left_piece(m, psi, b_star, 1.0 / dpsi, grid)
    # V = I_F + phi (1 - I_F'(b*)) / phi'(b*) on [b*, inf)
    coef = (1.0 - float(ifc.deriv(b_star))) / float(phi.log_deriv(b_star))
    right = _right_piece(m, phi, ifc, b_star, coef, grid)
    # same curve from J_0 without I_F(0)
    j0 = bundle.j0
    g = right.grid
    lphi = phi.log_value(g)
    alt = j0(g) + (1.0 - float(j0.deriv(b_star))) / float(phi.log_deriv(b_star)) * np.exp(lphi - lphi[0])
    gap = float(np.max(np.abs(alt - right.values) / (1.0 + np.abs(right.values))))
    if gap > identity_tol:
        raise OptimizerError(f"I_F and J_0 forms of V differ by {gap:.3e}")
    return PiecewiseCurve(left, right, b_star)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def _second_from_ode(m, x, val, der, withdrawing):
    c = m.drift(x, True) if withdrawing else m.mu(x)
    src = m.F(x) if withdrawing else 0.0
    return 2.0 * (m.q * val - c * der - src) / m.sigma(x) ** 2


def hjb_residual(sol: Solution, m: ExtendedModel | None = None, grid=None, buffer: float = 5.0,
                 barriers: int = 20) -> Diagnostics:
    m = sol.model if m is None else m
    V = sol.value
    b = sol.b_star
    x_hi = V.x_hi
    grid = V.grid if grid is None else np.asarray(grid)
    grid = grid[grid <= x_hi - buffer] if x_hi - buffer > 0 else grid
    d = Diagnostics()

    val, der = V(grid), V.deriv(grid)
    right = grid >= b if b > 0 else np.ones_like(grid, dtype=bool)
    sec = np.where(right, _second_from_ode(m, grid, val, der, True),
                   _second_from_ode(m, grid, val, der, False))
    F = m.F(grid)
    gen = 0.5 * m.sigma(grid) ** 2 * sec + m.mu(grid) * der - m.q * val
    R = gen + np.maximum(0.0, F * (1.0 - der))
    d.hjb_residual_max = float(np.max(np.abs(R) / (1.0 + F)))

    # same residual at cell midpoints with the interpolant's own second derivative
    xm = 0.5 * (grid[1:] + grid[:-1])
    xm = xm[np.abs(xm - b) > 1e-12]
    vm, dm, sm = V(xm), V.deriv(xm), V.second_deriv(xm)
    Fm = m.F(xm)
    Rm = 0.5 * m.sigma(xm) ** 2 * sm + m.mu(xm) * dm - m.q * vm + np.maximum(0.0, Fm * (1.0 - dm))
    d.hjb_residual_interp = float(np.max(np.abs(Rm) / (1.0 + Fm)))

    if sol.regime == BARRIER_POSITIVE:
        jb = performance_jb(b, sol.psi, sol.phi, sol.if_curve, m)
        vl, dl, _ = jb.one_sided(b, "left")
        vr, dr, _ = jb.one_sided(b, "right")
        d.smooth_fit_gap = max(abs(dl - 1.0), abs(dr - 1.0))
        Vl, Vdl, _ = V.one_sided(b, "left")
        Vr, Vdr, _ = V.one_sided(b, "right")
        d.value_gap = abs(Vl - Vr)
        s_left = float(_second_from_ode(m, np.array(b), Vl, Vdl, False))
        s_right = float(_second_from_ode(m, np.array(b), Vr, Vdr, True))
        d.c2_gap = abs(s_left - s_right) / (1.0 + abs(s_left))
        d.concavity_defect = concavity_defect(V)
        d.delta_form_gap = abs(float(delta(b, sol.psi, sol.phi, sol.j0))
                               - float(delta_if_form(b, sol.psi, sol.phi, sol.if_curve)))
        region = grid[der >= 1.0 - 1e-10]
        edge = float(region.max()) if region.size else 0.0
        contiguous = region.size == 0 or np.all(grid[grid <= edge] == region)
        cell = float(np.max(np.diff(grid)))
        d.region_mismatch = abs(edge - b) / cell if contiguous else math.inf
    else:
        region = grid[der >= 1.0 + 1e-10]
        cell = float(np.max(np.diff(grid)))
        d.region_mismatch = float(region.max()) / cell if region.size else 0.0

    if sol.if_curve is not None:
        d.dominance_margin = dominance_margin(sol, m, barriers)
    return d


def barrier_grid(sol: Solution, n: int = 20) -> np.ndarray:
    top = max(2.0 * sol.b_hat, 3.0 * sol.b_star)
    return np.linspace(0.0, top, n)


def dominance_margin(sol: Solution, m: ExtendedModel, n: int = 20, stride: int = 5) -> float:
    """min over a barrier grid and x of V(x) - J_b(x)."""
    V = sol.value
    xs = V.grid[::stride]
    worst = math.inf
    vals = V(xs)
    for b in barrier_grid(sol, n):
        jb = performance_jb(float(b), sol.psi, sol.phi, sol.if_curve, m)
        worst = min(worst, float(np.min(vals - jb(xs))))
    return worst


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def solve(m: ExtendedModel, x_hi: float | None = None, tol: float = DEFAULT_TOL, dx: float = DEFAULT_DX,
          psi: FundamentalSolution | None = None, diagnostics: bool = True,
          full_curve: bool = True) -> Solution:
    """Full pipeline: fundamentals, resolvent, regime, barrier, value and diagnostics."""
    notes: list[str] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if psi is None:
            psi = solve_psi(m, x_hi, tol, dx)
        x_top = psi.domain[1] if x_hi is None else min(float(x_hi), psi.domain[1])
        phi = solve_phi(m, x_top, tol, dx)
        pt = solve_phi_tilde(m)
        b_hat = inflection_point(psi, m)
        bundle = build_resolvent(m, phi, pt, x_top, tol, dx, full_curve=full_curve)
        flag = regime(bundle.j0, bundle, phi)
        roots: list = []
        if flag == BARRIER_POSITIVE:
            b_star, roots = find_bstar(psi, phi, bundle.j0, b_hat)
        else:
            b_star = 0.0
        value = value_function(flag, b_star, psi, phi, bundle, m) if (full_curve or flag == BARRIER_ZERO) else None
    notes.extend(str(w.message) for w in caught)
    for n in notes:
        log.warning(n)
    sol = Solution(flag, float(b_star), float(b_hat), value, psi, phi, pt, bundle, m,
                   roots=roots, warnings=notes)
    if diagnostics and value is not None:
        sol.diagnostics = hjb_residual(sol, m)
    return sol
