"""Monte Carlo for the controlled diffusion: refraction payoffs, general
policies, first-passage transforms and the discounted-state decay.

Euler-Maruyama with Philox streams keyed by (seed, path, step).  Per-path
results land in arrays and are reduced with ``math.fsum``, so estimates are
bitwise reproducible whatever the number of numba threads.

Barrier crossings between grid times are caught with the Brownian-bridge
probability exp(-2 d_k d_{k+1} / (sigma^2 dt)) when ``bridge`` is on; with
``bridge=False`` only the step endpoints are checked.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from numba import njit, prange

from . import rng
from .model import ExtendedModel

TAIL_LOG = 13.8
MAX_DT = 1e-2

K_AFFINE, K_LOGISTIC, K_SQRT, K_CONSTANT, K_CUSTOM = 0, 1, 2, 3, 4
_KIND_CODE = {"affine": K_AFFINE, "logistic": K_LOGISTIC, "sqrt_affine": K_SQRT,
              "constant": K_CONSTANT, "custom": K_CUSTOM}


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    n_paths: int = 100_000
    t_max: float | None = None
    seed: int = 0
    x0: float = 1.0
    bridge: bool = True

    def horizon(self, q: float) -> float:
        return float(math.ceil(TAIL_LOG / q)) if self.t_max is None else float(self.t_max)

    def check(self, q: float) -> "SimConfig":
        if not (self.dt > 0 and self.dt <= MAX_DT):
            raise ConfigInvalid(f"dt={self.dt} must lie in (0, {MAX_DT}]")
        if int(self.n_paths) < 2:
            raise ConfigInvalid("n_paths must be at least 2")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ConfigInvalid("seed must be a 64-bit unsigned integer")
        if q * self.horizon(q) < TAIL_LOG - 1e-12:
            raise ConfigInvalid(f"q * t_max = {q * self.horizon(q):.3g} is below {TAIL_LOG}")
        if not math.isfinite(self.x0):
            raise ConfigInvalid("x0 must be finite")
        return self

    def replace(self, **kw) -> "SimConfig":
        d = asdict(self)
        d.update(kw)
        return SimConfig(**d)


@dataclass(frozen=True)
class PayoffEstimate:
    mean: float
    std_error: float
    n_paths: int
    absorbed_fraction: float
    mean_absorption_time: float
    tail_bound: float = 0.0
    violations: int = 0

    def z_score(self, reference: float) -> float:
        diff = self.mean - reference
        if self.std_error == 0.0:
            return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        return diff / self.std_error

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Policy:
    """Withdrawal rate c(x); must satisfy 0 <= c(x) <= F(x).  ``rate`` is vectorized."""
    rate: Callable[[np.ndarray], np.ndarray]
    name: str = "policy"


# ---------------------------------------------------------------------------
# coefficients inside numba
# ---------------------------------------------------------------------------

def _pack(coef):
    p = np.zeros(3)
    if coef.kind == "custom":
        pp = coef._interp
        return _KIND_CODE["custom"], p, np.ascontiguousarray(pp.x), np.ascontiguousarray(pp.c)
    names = {"affine": ("c0", "c1"), "logistic": ("m0", "m1", "K"),
             "sqrt_affine": ("s0", "s1"), "constant": ("s0",)}[coef.kind]
    for i, n in enumerate(names):
        p[i] = coef.params[n]
    return _KIND_CODE[coef.kind], p, np.zeros(2), np.zeros((4, 1))


def pack_model(m: ExtendedModel):
    """Flat tuple handed to every kernel."""
    s = m.spec
    mk, mp, mx, mc = _pack(s.mu)
    sk, sp, sx, sc = _pack(s.sigma)
    fk, fp, fx, fc = _pack(s.bound)
    neg = np.array([m.mu_neg[0], m.mu_neg[1], m.F_neg[0], m.F_neg[1], m.sigma_neg])
    return (mk, mp, mx, mc, sk, sp, sx, sc, fk, fp, fx, fc, neg)


@njit(cache=True, inline="always")
def _coef(kind, p, bx, bc, x):
    if kind == K_AFFINE:
        return p[0] + p[1] * x
    if kind == K_LOGISTIC:
        return p[0] + p[1] * x * (1.0 - x / p[2])
    if kind == K_SQRT:
        return math.sqrt(max(p[0] + p[1] * x, 0.0))
    if kind == K_CONSTANT:
        return p[0]
    # piecewise cubic in local coordinates, clamped to the table
    n = bx.size - 1
    if x <= bx[0]:
        i = 0
        x = bx[0]
    elif x >= bx[n]:
        i = n - 1
        x = bx[n]
    else:
        lo, hi = 0, n
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if bx[mid] <= x:
                lo = mid
            else:
                hi = mid
        i = lo
    t = x - bx[i]
    return ((bc[0, i] * t + bc[1, i]) * t + bc[2, i]) * t + bc[3, i]


@njit(cache=True, inline="always")
def _coeffs(pk, x):
    """(mu, sigma, F) at x; tangent-line / frozen continuation for x < 0."""
    if x < 0.0:
        neg = pk[12]
        return neg[0] + neg[1] * x, neg[4], neg[2] + neg[3] * x
    return (_coef(pk[0], pk[1], pk[2], pk[3], x),
            _coef(pk[4], pk[5], pk[6], pk[7], x),
            _coef(pk[8], pk[9], pk[10], pk[11], x))


@njit(cache=True, inline="always")
def _bridge_p(d0, d1, s, dt):
    """Probability that a Brownian bridge from distance d0 to d1 touches 0."""
    if d0 <= 0.0 or d1 <= 0.0:
        return 1.0
    return math.exp(-2.0 * d0 * d1 / (s * s * dt))


# ---------------------------------------------------------------------------
# kernels (one path per prange iteration, no shared state)
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _refraction_kernel(pk, b, x0, q, dt, n_steps, k0, k1, bridge, sub, pay, tau):
    """``sub`` > 1 builds each increment from ``sub`` finer normals, coupling runs at dt and dt/sub."""
    n = pay.size
    inv_sub = 1.0 / math.sqrt(sub)
    for i in prange(n):
        x = x0
        acc = 0.0
        t_abs = -1.0
        if x <= 0.0:
            pay[i] = 0.0
            tau[i] = 0.0
            continue
        disc = 1.0
        step_disc = math.exp(-q * dt)
        z1 = 0.0
        sq = math.sqrt(dt)
        for k in range(n_steps):
            if sub > 1:
                z = 0.0
                for j in range(sub):
                    z += rng.normal_at(k0, k1, k * sub + j, i)
                z *= inv_sub
            elif (k & 1) == 0:
                z0, z1 = rng.normal_pair(k0, k1, k >> 1, i)
                z = z0
            else:
                z = z1
            mu, s, F = _coeffs(pk, x)
            rate = F if x >= b else 0.0
            acc += disc * rate * dt
            xn = x + (mu - rate) * dt + s * sq * z
            hit = xn <= 0.0
            if not hit and bridge:
                p = _bridge_p(x, xn, s, dt)
                if p > 1e-300 and rng.uniform_at(k0, k1, k, i) < p:
                    hit = True
            disc *= step_disc
            x = xn
            if hit:
                t_abs = (k + 1) * dt
                break
        pay[i] = acc
        tau[i] = t_abs


@njit(cache=True, parallel=True)
def _upcross_kernel(pk, x0, b, q, dt, n_steps, k0, k1, bridge, out):
    """e^{-q kappa_b} 1{kappa_b < kappa_0} for the uncontrolled process."""
    for i in prange(out.size):
        x = x0
        val = 0.0
        if x >= b:
            out[i] = 1.0
            continue
        if x <= 0.0:
            out[i] = 0.0
            continue
        sq = math.sqrt(dt)
        z1 = 0.0
        for k in range(n_steps):
            if (k & 1) == 0:
                z0, z1 = rng.normal_pair(k0, k1, k >> 1, i)
                z = z0
            else:
                z = z1
            mu, s, F = _coeffs(pk, x)
            xn = x + mu * dt + s * sq * z
            up = xn >= b
            down = xn <= 0.0
            if bridge and not up and not down:
                u = rng.uniform_at(k0, k1, k, i)
                p_up = _bridge_p(b - x, b - xn, s, dt)
                p_dn = _bridge_p(x, xn, s, dt)
                # the two crossings are nearly exclusive over one step; up is tested first
                if u < p_up:
                    up = True
                elif u < p_up + p_dn:
                    down = True
            if up:
                val = math.exp(-q * (k + 1) * dt)
                break
            if down:
                break
            x = xn
        out[i] = val


@njit(cache=True, parallel=True)
def _downcross_kernel(pk, x0, b, q, dt, n_steps, k0, k1, bridge, out):
    """e^{-q tau_b} for the full-withdrawal process started above b."""
    for i in prange(out.size):
        x = x0
        val = 0.0
        if x <= b:
            out[i] = 1.0
            continue
        sq = math.sqrt(dt)
        z1 = 0.0
        for k in range(n_steps):
            if (k & 1) == 0:
                z0, z1 = rng.normal_pair(k0, k1, k >> 1, i)
                z = z0
            else:
                z = z1
            mu, s, F = _coeffs(pk, x)
            xn = x + (mu - F) * dt + s * sq * z
            hit = xn <= b
            if not hit and bridge:
                p = _bridge_p(x - b, xn - b, s, dt)
                if p > 1e-300 and rng.uniform_at(k0, k1, k, i) < p:
                    hit = True
            if hit:
                val = math.exp(-q * (k + 1) * dt)
                break
            x = xn
        out[i] = val


@njit(cache=True, parallel=True)
def _free_kernel(pk, x0, dt, marks, k0, k1, out):
    """|X_T| at each step index in ``marks`` for the full-withdrawal process, no absorption."""
    n_steps = marks[-1]
    for i in prange(out.shape[0]):
        x = x0
        j = 0
        sq = math.sqrt(dt)
        z1 = 0.0
        for k in range(n_steps):
            if (k & 1) == 0:
                z0, z1 = rng.normal_pair(k0, k1, k >> 1, i)
                z = z0
            else:
                z = z1
            mu, s, F = _coeffs(pk, x)
            x = x + (mu - F) * dt + s * sq * z
            while j < marks.size and marks[j] == k + 1:
                out[i, j] = abs(x)
                j += 1


@njit(cache=True, parallel=True)
def _dynkin_kernel(pk, x0, q, dt, n_steps, k0, k1, out):
    """Per path: int e^{-qt} F(X) dt and int e^{-qt} (mu(X) - q X) dt, full withdrawal, no absorption."""
    for i in prange(out.shape[0]):
        x = x0
        a = 0.0
        c = 0.0
        disc = 1.0
        step_disc = math.exp(-q * dt)
        sq = math.sqrt(dt)
        z1 = 0.0
        for k in range(n_steps):
            if (k & 1) == 0:
                z0, z1 = rng.normal_pair(k0, k1, k >> 1, i)
                z = z0
            else:
                z = z1
            mu, s, F = _coeffs(pk, x)
            a += disc * F * dt
            c += disc * (mu - q * x) * dt
            x = x + (mu - F) * dt + s * sq * z
            disc *= step_disc
        out[i, 0] = a
        out[i, 1] = c


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def _stats(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = math.fsum(values) / n
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def _tail_bound(m: ExtendedModel, t_max: float) -> float:
    grid = np.linspace(0.0, m.x_hi, 1001)
    return float(np.max(m.F(grid))) / m.q * math.exp(-m.q * t_max)


def _key(cfg: SimConfig):
    k0, k1 = rng.seed_key(cfg.seed)
    return np.uint32(k0), np.uint32(k1)


def _steps(cfg: SimConfig, q: float) -> int:
    return int(round(cfg.horizon(q) / cfg.dt))


def _absorption_summary(tau: np.ndarray) -> tuple[float, float]:
    hit = tau >= 0.0
    frac = float(np.count_nonzero(hit)) / tau.size
    mtime = math.fsum(tau[hit]) / np.count_nonzero(hit) if np.any(hit) else math.nan
    return frac, mtime


def _refraction(m, b, cfg, sub):
    if not b >= 0:
        raise ConfigInvalid(f"barrier must be nonnegative, got {b}")
    cfg.check(m.q)
    n = int(cfg.n_paths)
    pay = np.empty(n)
    tau = np.empty(n)
    k0, k1 = _key(cfg)
    _refraction_kernel(pack_model(m), float(b), float(cfg.x0), m.q, cfg.dt, _steps(cfg, m.q),
                       k0, k1, bool(cfg.bridge), int(sub), pay, tau)
    return pay, tau


def simulate_refraction(m: ExtendedModel, b: float, cfg: SimConfig) -> PayoffEstimate:
    """Discounted withdrawals of the refraction strategy at barrier b, started at cfg.x0."""
    pay, tau = _refraction(m, b, cfg, 1)
    n = pay.size
    mean, se = _stats(pay)
    frac, mtime = _absorption_summary(tau)
    return PayoffEstimate(mean, se, n, frac, mtime, _tail_bound(m, cfg.horizon(m.q)))


def simulate_policy(m: ExtendedModel, p: Policy, cfg: SimConfig) -> PayoffEstimate:
    """Same scheme with withdrawal rate p.rate(x), clamped to [0, F(x)].

    Paths are advanced together in numpy, drawing the same Philox numbers as
    the compiled kernels, so c = F reproduces the b = 0 refraction paths.
    """
    cfg.check(m.q)
    n = int(cfg.n_paths)
    n_steps = _steps(cfg, m.q)
    x = np.full(n, float(cfg.x0))
    alive = np.flatnonzero(x > 0.0)
    acc = np.zeros(n)
    tau = np.full(n, -1.0)
    tau[x <= 0.0] = 0.0
    disc = 1.0
    step_disc = math.exp(-m.q * cfg.dt)
    sq = math.sqrt(cfg.dt)
    violations = 0
    for k in range(n_steps):
        if alive.size == 0:
            break
        xa = x[alive]
        F = m.F(xa)
        c = np.asarray(p.rate(xa), dtype=float) * np.ones_like(xa)
        bad = (c < 0.0) | (c > F) | ~np.isfinite(c)
        if np.any(bad):
            violations += int(np.count_nonzero(bad))
            c = np.clip(np.nan_to_num(c, nan=0.0), 0.0, F)
        s = m.sigma(xa)
        acc[alive] += disc * c * cfg.dt
        z = rng.normals(cfg.seed, k, alive)
        xn = xa + (m.mu(xa) - c) * cfg.dt + s * sq * z
        hit = xn <= 0.0
        if cfg.bridge:
            pb = np.exp(-2.0 * np.maximum(xa, 0.0) * np.maximum(xn, 0.0) / (s * s * cfg.dt))
            cand = ~hit & (pb > 1e-300)
            if np.any(cand):
                u = rng.uniforms(cfg.seed, k, alive[cand])
                hit[np.flatnonzero(cand)[u < pb[cand]]] = True
        disc *= step_disc
        x[alive] = xn
        tau[alive[hit]] = (k + 1) * cfg.dt
        alive = alive[~hit]
    mean, se = _stats(acc)
    frac, mtime = _absorption_summary(tau)
    return PayoffEstimate(mean, se, n, frac, mtime, _tail_bound(m, cfg.horizon(m.q)), violations)


def first_passage_up(m: ExtendedModel, x: float, b: float, cfg: SimConfig) -> PayoffEstimate:
    """E_x[e^{-q kappa_b}; kappa_b < kappa_0] for the uncontrolled process (compare psi(x)/psi(b))."""
    cfg.check(m.q)
    out = np.empty(int(cfg.n_paths))
    k0, k1 = _key(cfg)
    _upcross_kernel(pack_model(m), float(x), float(b), m.q, cfg.dt, _steps(cfg, m.q), k0, k1,
                    bool(cfg.bridge), out)
    mean, se = _stats(out)
    return PayoffEstimate(mean, se, out.size, math.nan, math.nan, math.exp(-m.q * cfg.horizon(m.q)))


def first_passage_down(m: ExtendedModel, x: float, b: float, cfg: SimConfig) -> PayoffEstimate:
    """E_x[e^{-q tau_b}] for the full-withdrawal process (compare phi(x)/phi(b))."""
    cfg.check(m.q)
    out = np.empty(int(cfg.n_paths))
    k0, k1 = _key(cfg)
    _downcross_kernel(pack_model(m), float(x), float(b), m.q, cfg.dt, _steps(cfg, m.q), k0, k1,
                      bool(cfg.bridge), out)
    mean, se = _stats(out)
    return PayoffEstimate(mean, se, out.size, math.nan, math.nan, math.exp(-m.q * cfg.horizon(m.q)))


@dataclass(frozen=True)
class TransversalityReport:
    horizons: tuple
    estimates: tuple            # e^{-qT} E|X_T|
    std_errors: tuple
    rate: float                 # fitted decay exponent
    rate_floor: float           # q - mu'(0+)

    def rows(self):
        return list(zip(self.horizons, self.estimates, self.std_errors))


def transversality_check(m: ExtendedModel, cfg: SimConfig, horizons=(5.0, 10.0, 20.0, 40.0)) -> TransversalityReport:
    """Discounted E|X_T| at several horizons, from common random numbers, and its decay rate.

    The rate is the least-squares slope of -log(e^{-qT}E|X_T|) against T.
    """
    if not (cfg.dt > 0 and cfg.dt <= MAX_DT):
        raise ConfigInvalid(f"dt={cfg.dt} must lie in (0, {MAX_DT}]")
    hs = np.asarray(sorted(float(h) for h in horizons))
    marks = np.asarray(np.round(hs / cfg.dt), dtype=np.int64)
    out = np.empty((int(cfg.n_paths), hs.size))
    k0, k1 = _key(cfg)
    _free_kernel(pack_model(m), float(cfg.x0), cfg.dt, marks, k0, k1, out)
    est, ses = [], []
    for j, T in enumerate(hs):
        mean, se = _stats(out[:, j])
        f = math.exp(-m.q * T)
        est.append(f * mean)
        ses.append(f * se)
    y = -np.log(np.asarray(est))
    rate = float(np.polyfit(hs, y, 1)[0])
    return TransversalityReport(tuple(float(h) for h in hs), tuple(est), tuple(ses), rate, m.q - float(m.mu_neg[1]))


def resolvent_mc(m: ExtendedModel, cfg: SimConfig) -> tuple[PayoffEstimate, PayoffEstimate]:
    """MC estimates at cfg.x0 of I_F(x) directly and of I_F(x) - x through the Dynkin identity."""
    cfg.check(m.q)
    out = np.empty((int(cfg.n_paths), 2))
    k0, k1 = _key(cfg)
    _dynkin_kernel(pack_model(m), float(cfg.x0), m.q, cfg.dt, _steps(cfg, m.q), k0, k1, out)
    res = []
    for j in range(2):
        mean, se = _stats(out[:, j])
        res.append(PayoffEstimate(mean, se, out.shape[0], 0.0, math.nan))
    return res[0], res[1]


def step_halving(m: ExtendedModel, b: float, cfg: SimConfig) -> tuple[float, float, float]:
    """(shift, std_error, std_error of the shift) between dt and dt/2 on coupled Brownian paths.

    The coarse run sums pairs of the fine run's normals, so the shift measures
    discretization bias rather than sampling noise.
    """
    fine, _ = _refraction(m, b, cfg.replace(dt=cfg.dt / 2), 1)
    coarse, _ = _refraction(m, b, cfg, 2)
    mean_f, se_f = _stats(fine)
    mean_c, _ = _stats(coarse)
    _, se_d = _stats(coarse - fine)
    return mean_c - mean_f, se_f, se_d


@dataclass(frozen=True)
class TournamentResult:
    barriers: tuple
    estimates: tuple
    winner: int
    paired_z: tuple       # (mean_i - mean_ref) / se of the paired difference

    def rank_distance(self, ref: int) -> int:
        return abs(self.winner - ref)


def tournament(m: ExtendedModel, barriers, cfg: SimConfig, ref: int | None = None) -> TournamentResult:
    """Refraction payoffs at cfg.x0 for each barrier, on common random numbers.

    ``paired_z`` compares every barrier with barrier ``ref`` (default: the
    middle one) through per-path differences, which cancel most of the noise.
    """
    barriers = [float(b) for b in barriers]
    ref = len(barriers) // 2 if ref is None else ref
    runs = [_refraction(m, b, cfg, 1) for b in barriers]
    ests = []
    for pay, tau in runs:
        mean, se = _stats(pay)
        frac, mtime = _absorption_summary(tau)
        ests.append(PayoffEstimate(mean, se, pay.size, frac, mtime, _tail_bound(m, cfg.horizon(m.q))))
    zs = []
    for j, (pay, _) in enumerate(runs):
        if j == ref:
            zs.append(0.0)
            continue
        d, se = _stats(pay - runs[ref][0])
        zs.append(d / se if se > 0 else 0.0)
    winner = int(np.argmax([e.mean for e in ests]))
    return TournamentResult(tuple(barriers), tuple(ests), winner, tuple(zs))
