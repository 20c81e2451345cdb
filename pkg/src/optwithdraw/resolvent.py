"""Always-withdraw performance J_0 and the resolvent functional I_F.

J_0 solves (L_F - q)u = -F on (0, inf) with u(0) = 0 and linear growth.  It is
computed by Riccati decoupling: with v = phi'/phi the quantity w = u' - v u
obeys the first-order equation

    w' = -(2 c / sigma^2 + v) w - 2 F / sigma^2,      c = mu - F,

which is stable when integrated backwards from a far start point where u is
replaced by its affine envelope.  u then follows from u = phi * int w / phi.

I_F is J_0 + I_F(0) phi on x >= 0 and alpha_0 + beta_0 x + (I_F(0) - alpha_0)
phi_tilde on x <= 0, with I_F(0) fixed by C^1 matching at the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fundamental import (Curve, FundamentalSolution, _integrate, contraction_start,
                          riccati_budget, riccati_root, uniform_grid, DEFAULT_DX, DEFAULT_TOL)
from .model import ExtendedModel

NEG_DX = 0.025
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class ResolventError(ArithmeticError):
    pass


class MatchingDegenerate(ResolventError):
    pass


class MatchingResidualTooLarge(ResolventError):
    pass


@dataclass(frozen=True)
class Envelope:
    alpha: float
    beta: float
    degenerate: bool = False


def envelope_bounds(m: ExtendedModel, xi: float) -> Envelope:
    """Affine majorant alpha_xi + beta_xi x of I_F.

    For xi < 0 this is (alpha_0, beta_0).  Where F'(xi) = 0 the slope is 0 and
    the level is F(xi)/q, the supremum of F over the path divided by q.
    """
    q = m.q
    if xi < 0:
        xi = 0.0
    F = float(m.F(xi))
    dF = float(m.F_prime(xi))
    mu = float(m.mu(xi))
    dmu = float(m.mu_prime(xi))
    if dF <= 0.0:
        return Envelope(F / q, 0.0, True)
    beta = dF / (q - dmu + dF)
    level = (beta * mu + F * (1.0 - beta)) / q     # alpha + beta * xi
    return Envelope(level - beta * xi, beta)


def origin_constants(m: ExtendedModel) -> tuple[float, float]:
    """(alpha_0, beta_0): the affine particular solution on the negative axis."""
    e = envelope_bounds(m, 0.0)
    return e.alpha, e.beta


@dataclass(frozen=True, eq=False)
class ResolventBundle:
    j0: Curve
    if_curve: Curve | None
    if0: float
    alpha0: float
    beta0: float
    phi_tilde_prime0: float
    j0_prime0: float


def solve_j0(m: ExtendedModel, phi: FundamentalSolution | None = None, x_hi: float | None = None,
             tol: float = DEFAULT_TOL, dx: float = DEFAULT_DX) -> Curve:
    """J_0 on [0, x_hi] as a quintic Hermite curve.

    ``phi`` is accepted for interface symmetry; the Riccati variable is
    re-integrated jointly with w so both share one step sequence.
    """
    if x_hi is None:
        x_hi = phi.domain[1] if phi is not None else m.x_hi
    q = m.q
    mu_f, _ = m.spec.mu.scalar_pair()
    F_f, _ = m.spec.bound.scalar_pair()
    sig_f, _ = m.spec.sigma.scalar_pair()

    def rhs(x, y):
        v, _, w = y
        F = F_f(x)
        c = mu_f(x) - F
        s = sig_f(x)
        s2 = s * s
        return [2.0 * (q - c * v) / s2 - v * v, v, -(2.0 * c / s2 + v) * w - 2.0 * F / s2]

    # J_0' = v u + w cancels where |v| is large, so w gets a tighter tolerance
    itol = max(0.03 * tol, 2.5e-14)
    x_start = contraction_start(m, x_hi, riccati_budget(itol))
    s_st = sig_f(x_start)
    v0 = riccati_root(mu_f(x_start) - F_f(x_start), s_st * s_st, q)
    env = envelope_bounds(m, x_start)
    w0 = env.beta - v0 * (env.alpha + env.beta * x_start)
    y0 = [v0, 0.0, w0]
    if x_start > x_hi:
        pre = _integrate(rhs, (x_start, x_hi), y0, itol, dense=False)
        y0 = list(pre.y[:, -1])
    sol = _integrate(rhs, (x_hi, 0.0), y0, itol)

    grid = uniform_grid(0.0, x_hi, dx)
    v, ell, w = sol.sol(grid)
    # u_{k+1} = e^{l_{k+1} - l_k} u_k + int_{x_k}^{x_{k+1}} w(s) e^{l_{k+1} - l(s)} ds
    h = np.diff(grid)
    nodes = grid[:-1, None] + 0.5 * h[:, None] * (_GL_X[None, :] + 1.0)
    _, ell_n, w_n = sol.sol(nodes.ravel())
    ell_n = ell_n.reshape(nodes.shape)
    w_n = w_n.reshape(nodes.shape)
    cell = 0.5 * h * np.sum(_GL_W[None, :] * w_n * np.exp(ell[1:, None] - ell_n), axis=1)
    growth = np.exp(ell[1:] - ell[:-1])
    u = np.empty_like(grid)
    u[0] = 0.0
    for k in range(grid.size - 1):
        u[k + 1] = growth[k] * u[k] + cell[k]
    du = v * u + w
    c = m.drift(grid, True)
    d2u = 2.0 * (q * u - c * du - m.F(grid)) / m.sigma(grid) ** 2
    return Curve(grid, u, du, d2u)


def compute_if0(j0: Curve, phi: FundamentalSolution, phi_tilde: FundamentalSolution | float,
                alpha0: float, beta0: float) -> float:
    """I_F(0) from C^1 matching of the two half-line representations."""
    dpt = phi_tilde if isinstance(phi_tilde, float) else float(phi_tilde.deriv(0.0))
    dphi = float(phi.deriv(0.0))
    den = dpt - dphi
    if not den > 0:
        raise MatchingDegenerate(f"phi_tilde'(0) - phi'(0) = {den:g} is not positive")
    return (float(j0.deriv(0.0)) - beta0 + alpha0 * dpt) / den


def assemble_if(m: ExtendedModel, j0: Curve, phi: FundamentalSolution, phi_tilde: FundamentalSolution,
                if0: float, alpha0: float, beta0: float, x_lo: float | None = None,
                neg_dx: float = NEG_DX, match_tol: float = 1e-7) -> Curve:
    """I_F on [x_lo, x_hi] joined at 0."""
    x_lo = phi_tilde.domain[0] if x_lo is None else x_lo
    q = m.q
    gp = j0.grid
    phv, phd = phi.value_and_deriv(gp)
    vp = j0.values + if0 * phv
    dp = j0.derivs + if0 * phd

    gn = uniform_grid(x_lo, 0.0, neg_dx)[:-1]
    ptv, ptd = phi_tilde.value_and_deriv(gn)
    vn = alpha0 + beta0 * gn + (if0 - alpha0) * ptv
    dn = beta0 + (if0 - alpha0) * ptd

    grid = np.concatenate([gn, gp])
    val = np.concatenate([vn, vp])
    der = np.concatenate([dn, dp])
    c = m.drift(grid, True)
    sec = 2.0 * (q * val - c * der - m.F(grid)) / m.sigma(grid) ** 2

    dpt0 = float(phi_tilde.deriv(0.0))
    left = beta0 + (if0 - alpha0) * dpt0
    gap = abs(left - dp[0])
    if gap > match_tol * (1.0 + abs(dp[0])):
        raise MatchingResidualTooLarge(f"I_F' jumps by {gap:.3e} at 0")
    return Curve(grid, val, der, sec)


def build_resolvent(m: ExtendedModel, phi: FundamentalSolution, phi_tilde: FundamentalSolution,
                    x_hi: float | None = None, tol: float = DEFAULT_TOL, dx: float = DEFAULT_DX,
                    full_curve: bool = True, neg_dx: float = NEG_DX) -> ResolventBundle:
    j0 = solve_j0(m, phi, x_hi, tol, dx)
    alpha0, beta0 = origin_constants(m)
    dpt = float(phi_tilde.deriv(0.0))
    if0 = compute_if0(j0, phi, dpt, alpha0, beta0)
    curve = assemble_if(m, j0, phi, phi_tilde, if0, alpha0, beta0, neg_dx=neg_dx) if full_curve else None
    return ResolventBundle(j0, curve, if0, alpha0, beta0, dpt, float(j0.deriv(0.0)))


def affine_if(m: ExtendedModel, x):
    """Closed form of I_F when mu and F are affine: F0/q + F1 (q x + c0) / (q (q - c1))."""
    mu0, mu1 = m.mu_neg
    F0, F1 = m.F_neg
    c0, c1 = mu0 - F0, mu1 - F1
    q = m.q
    x = np.asarray(x, dtype=float)
    return F0 / q + F1 * (q * x + c0) / (q * (q - c1))


# ---------------------------------------------------------------------------
# property measurements (used by checks and tests)
# ---------------------------------------------------------------------------

def ode_residual(m: ExtendedModel, curve: Curve, with_source: bool = True) -> float:
    """max |(L_F - q)u + F| / (1 + |F|) at cell midpoints, using the interpolant."""
    g = curve.grid
    xm = 0.5 * (g[1:] + g[:-1])
    u, du, d2u = curve(xm), curve.deriv(xm), curve.second_deriv(xm)
    F = m.F(xm)
    r = 0.5 * m.sigma(xm) ** 2 * d2u + m.drift(xm, True) * du - m.q * u
    if with_source:
        r = r + F
    return float(np.max(np.abs(r) / (1.0 + np.abs(F))))


def concavity_defect(curve: Curve) -> float:
    """Largest positive discrete second difference, scaled to a second derivative."""
    g, v = curve.grid, curve.values
    h1 = g[1:-1] - g[:-2]
    h2 = g[2:] - g[1:-1]
    d2 = 2.0 * ((v[2:] - v[1:-1]) / h2 - (v[1:-1] - v[:-2]) / h1) / (h1 + h2)
    scale = 1.0 + np.abs(v[1:-1])
    return float(max(0.0, np.max(d2 / scale)))


def envelope_violation(m: ExtendedModel, curve: Curve, xis=(-1.0, 0.0, 0.5, 1.0, 2.0, 5.0)) -> float:
    """max over xi (with F'(xi) > 0) and grid x of I_F(x) - (alpha_xi + beta_xi x)."""
    worst = -math.inf
    for xi in xis:
        if xi >= 0 and float(m.F_prime(xi)) <= 0:
            continue
        e = envelope_bounds(m, xi)
        worst = max(worst, float(np.max(curve.values - (e.alpha + e.beta * curve.grid))))
    return worst
