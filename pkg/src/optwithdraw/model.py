"""Problem datum: drift, diffusion, bound function and discount rate.

Coefficients are described by :class:`CoefficientSpec` (a small closed set of
parametric families plus tabulated ``custom`` samples).  :func:`validate_model`
checks the standing assumptions numerically and :func:`extend_to_real_line`
attaches the affine/constant continuation used on the negative half-line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

X_MAX = 50.0
SIGMA_EPS = 1e-6
CONCAVITY_TOL = 1e-9
_CHECK_POINTS = 4001

_KIND_PARAMS = {
    "affine": ("c0", "c1"),
    "logistic": ("m0", "m1", "K"),
    "sqrt_affine": ("s0", "s1"),
    "constant": ("s0",),
    "custom": (),
}
_ROLE_KINDS = {
    "drift": {"affine", "logistic", "constant", "custom"},
    "diffusion": {"affine", "sqrt_affine", "constant", "custom"},
    "bound": {"affine", "constant", "custom"},
}


class ModelError(ValueError):
    """Base class for every problem-datum violation."""


class DriftAtZeroNonpositive(ModelError):
    pass


class DiscountTooSmall(ModelError):
    pass


class DiffusionDegenerate(ModelError):
    pass


class BoundNotMonotone(ModelError):
    pass


class NotConcave(ModelError):
    def __init__(self, message: str, x: float | None = None):
        super().__init__(message)
        self.x = x


class NotLipschitz(ModelError):
    pass


class InvalidCoefficient(ModelError):
    pass


class OutOfDomain(ModelError):
    pass


class ValidationError(ModelError):
    """Raised by :func:`validate_model`; carries every violation found."""

    def __init__(self, violations: list[ModelError]):
        self.violations = violations
        lines = "; ".join(f"{type(v).__name__}: {v}" for v in violations)
        super().__init__(lines)


@dataclass(frozen=True, eq=False)
class CoefficientSpec:
    """One coefficient function on [0, x_hi].

    ``params`` holds the named parameters of the family (see ``_KIND_PARAMS``);
    ``table`` is only used by ``custom`` and has rows ``(x, value)`` or
    ``(x, value, derivative)``.
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    role: str = "drift"
    table: Any = None

    def __post_init__(self):
        if self.kind not in _KIND_PARAMS:
            raise InvalidCoefficient(f"unknown coefficient kind {self.kind!r}")
        if self.role not in _ROLE_KINDS:
            raise InvalidCoefficient(f"unknown role {self.role!r}")
        if self.kind not in _ROLE_KINDS[self.role]:
            raise InvalidCoefficient(f"kind {self.kind!r} is not allowed for role {self.role!r}")
        missing = [p for p in _KIND_PARAMS[self.kind] if p not in self.params]
        if missing:
            raise InvalidCoefficient(f"{self.kind} {self.role} is missing parameters {missing}")
        vals = [float(self.params[p]) for p in _KIND_PARAMS[self.kind]]
        if not all(math.isfinite(v) for v in vals):
            raise InvalidCoefficient(f"{self.kind} {self.role} has non-finite parameters")
        object.__setattr__(self, "params", {p: float(self.params[p]) for p in _KIND_PARAMS[self.kind]})
        if self.kind == "logistic" and self.params["K"] <= 0:
            raise InvalidCoefficient("logistic carrying capacity K must be positive")
        if self.kind == "custom":
            tab = np.asarray(self.table, dtype=float)
            if tab.ndim != 2 or tab.shape[1] not in (2, 3) or tab.shape[0] < 2:
                raise InvalidCoefficient("custom table must have rows (x, value[, derivative])")
            if not np.all(np.isfinite(tab)):
                raise InvalidCoefficient("custom table has non-finite entries")
            if not np.all(np.diff(tab[:, 0]) > 0):
                raise InvalidCoefficient("custom table abscissae must be strictly increasing")
            if tab[0, 0] > 0:
                raise InvalidCoefficient("custom table must start at x <= 0")
            if tab.shape[1] == 3:
                interp = CubicHermiteSpline(tab[:, 0], tab[:, 1], tab[:, 2])
            else:
                interp = PchipInterpolator(tab[:, 0], tab[:, 1])
            object.__setattr__(self, "table", tab)
            object.__setattr__(self, "_interp", interp)
            object.__setattr__(self, "_dinterp", interp.derivative())
            object.__setattr__(self, "_d2interp", interp.derivative(2))

    @property
    def x_end(self) -> float:
        return float(self.table[-1, 0]) if self.kind == "custom" else math.inf

    def value(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "affine":
            return p["c0"] + p["c1"] * x
        if self.kind == "logistic":
            return p["m0"] + p["m1"] * x * (1.0 - x / p["K"])
        if self.kind == "sqrt_affine":
            return np.sqrt(np.maximum(p["s0"] + p["s1"] * x, 0.0))
        if self.kind == "constant":
            return p["s0"] + 0.0 * x
        return self._interp(x)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "affine":
            return p["c1"] + 0.0 * x
        if self.kind == "logistic":
            return p["m1"] * (1.0 - 2.0 * x / p["K"])
        if self.kind == "sqrt_affine":
            return 0.5 * p["s1"] / np.sqrt(np.maximum(p["s0"] + p["s1"] * x, 1e-300))
        if self.kind == "constant":
            return 0.0 * x
        return self._dinterp(x)

    def deriv2(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "logistic":
            return -2.0 * p["m1"] / p["K"] + 0.0 * x
        if self.kind == "sqrt_affine":
            return -0.25 * p["s1"] ** 2 / np.maximum(p["s0"] + p["s1"] * x, 1e-300) ** 1.5
        if self.kind == "custom":
            return self._d2interp(x)
        return 0.0 * x

    def scalar_pair(self):
        """Plain-float closures (value, derivative) for ODE right-hand sides."""
        p = self.params
        k = self.kind
        if k == "affine":
            c0, c1 = p["c0"], p["c1"]
            return (lambda x: c0 + c1 * x), (lambda x: c1)
        if k == "constant":
            s0 = p["s0"]
            return (lambda x: s0), (lambda x: 0.0)
        if k == "logistic":
            m0, m1, K = p["m0"], p["m1"], p["K"]
            return (lambda x: m0 + m1 * x * (1.0 - x / K)), (lambda x: m1 * (1.0 - 2.0 * x / K))
        if k == "sqrt_affine":
            s0, s1 = p["s0"], p["s1"]
            return (lambda x: math.sqrt(max(s0 + s1 * x, 0.0))), \
                (lambda x: 0.5 * s1 / math.sqrt(max(s0 + s1 * x, 1e-300)))
        f, df = self._interp, self._dinterp
        return (lambda x: float(f(x))), (lambda x: float(df(x)))

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "custom":
            out["table"] = [list(map(float, row)) for row in self.table]
        else:
            out.update(self.params)
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], role: str) -> "CoefficientSpec":
        d = dict(d)
        try:
            kind = d.pop("kind")
        except KeyError:
            raise InvalidCoefficient(f"{role} coefficient needs a 'kind'") from None
        table = d.pop("table", None)
        unknown = set(d) - set(_KIND_PARAMS.get(kind, ()))
        if unknown:
            raise InvalidCoefficient(f"{role}: unexpected parameters {sorted(unknown)} for kind {kind!r}")
        return cls(kind=kind, params=d, role=role, table=table)


def affine(c0: float, c1: float, role: str = "drift") -> CoefficientSpec:
    return CoefficientSpec("affine", {"c0": c0, "c1": c1}, role)


def constant(s0: float, role: str = "diffusion") -> CoefficientSpec:
    return CoefficientSpec("constant", {"s0": s0}, role)


def sqrt_affine(s0: float, s1: float) -> CoefficientSpec:
    return CoefficientSpec("sqrt_affine", {"s0": s0, "s1": s1}, "diffusion")


def logistic(m0: float, m1: float, K: float) -> CoefficientSpec:
    return CoefficientSpec("logistic", {"m0": m0, "m1": m1, "K": K}, "drift")


def custom(table, role: str) -> CoefficientSpec:
    return CoefficientSpec("custom", {}, role, table=table)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    mu: CoefficientSpec
    sigma: CoefficientSpec
    bound: CoefficientSpec
    q: float

    def to_dict(self) -> dict:
        return {
            "q": float(self.q),
            "mu": self.mu.to_dict(),
            "sigma": self.sigma.to_dict(),
            "bound": self.bound.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelSpec":
        for key in ("mu", "sigma", "bound", "q"):
            if key not in d:
                raise InvalidCoefficient(f"[model] is missing '{key}'")
        return cls(
            mu=CoefficientSpec.from_dict(d["mu"], "drift"),
            sigma=CoefficientSpec.from_dict(d["sigma"], "diffusion"),
            bound=CoefficientSpec.from_dict(d["bound"], "bound"),
            q=float(d["q"]),
        )

    def with_bound(self, bound: CoefficientSpec) -> "ModelSpec":
        return ModelSpec(self.mu, self.sigma, bound, self.q)


@dataclass(frozen=True, eq=False)
class ValidatedModel:
    spec: ModelSpec
    x_lo: float
    x_hi: float
    eps: float = SIGMA_EPS

    @property
    def q(self) -> float:
        return self.spec.q


def default_x_hi(spec: ModelSpec, x_max: float = X_MAX) -> float:
    """Right end of the working domain, capped by any custom table."""
    f_scale = float(spec.bound.value(1.0)) if spec.bound.kind != "custom" else float(spec.bound.table[:, 1].max())
    x_hi = max(x_max, 10.0 * (float(spec.mu.value(0.0)) + abs(f_scale)) / spec.q)
    ends = [c.x_end for c in (spec.mu, spec.sigma, spec.bound)]
    return float(min([x_hi, *ends]))


def model_violations(spec: ModelSpec, x_hi: float | None = None, eps: float = SIGMA_EPS,
                     concavity_tol: float = CONCAVITY_TOL) -> list[ModelError]:
    """Every standing-assumption violation found on a dense grid of [0, x_hi]."""
    out: list[ModelError] = []
    q = spec.q
    if not (math.isfinite(q) and q > 0):
        out.append(DiscountTooSmall(f"discount rate q={q} must be positive"))
        return out
    if x_hi is None:
        x_hi = default_x_hi(spec)
    x = np.linspace(0.0, x_hi, _CHECK_POINTS)
    h = x[1] - x[0]

    mu0 = float(spec.mu.value(0.0))
    mu0p = float(spec.mu.deriv(0.0))
    if not mu0 > 0:
        out.append(DriftAtZeroNonpositive(f"mu(0)={mu0:g} must be > 0"))
    if not mu0p < q:
        out.append(DiscountTooSmall(f"mu'(0+)={mu0p:g} must be < q={q:g}"))

    sig = spec.sigma.value(x)
    if not np.all(np.isfinite(sig)) or sig.min() < eps:
        i = int(np.argmin(np.where(np.isfinite(sig), sig, -np.inf)))
        out.append(DiffusionDegenerate(f"sigma({x[i]:g})={sig[i]:g} is below eps={eps:g}"))
    else:
        slopes = np.abs(np.diff(sig)) / h
        if spec.sigma.kind == "custom" and slopes.max() > 1e6:
            out.append(NotLipschitz(f"sigma difference quotient {slopes.max():g} is unbounded"))

    F = spec.bound.value(x)
    F0 = float(F[0])
    if F0 < 0:
        out.append(BoundNotMonotone(f"F(0)={F0:g} must be >= 0"))
    dF = np.diff(F)
    if dF.min() < -concavity_tol:
        i = int(np.argmin(dF))
        out.append(BoundNotMonotone(f"F decreases near x={x[i]:g}"))
    if spec.bound.kind == "custom" and np.min(spec.bound.deriv(x)) < -concavity_tol:
        out.append(BoundNotMonotone("custom F has a negative derivative"))

    for name, coef, vals in (("mu", spec.mu, spec.mu.value(x)), ("F", spec.bound, F)):
        d2 = vals[:-2] - 2.0 * vals[1:-1] + vals[2:]
        if d2.max() > concavity_tol:
            i = int(np.argmax(d2)) + 1
            out.append(NotConcave(f"{name} is not concave near x={x[i]:g}", x=float(x[i])))
        if coef.kind == "custom":
            tab = coef.table
            s = np.diff(tab[:, 1]) / np.diff(tab[:, 0])
            ds = np.diff(s)
            if ds.size and ds.max() > concavity_tol:
                i = int(np.argmax(ds)) + 1
                out.append(NotConcave(f"{name} samples are not concave near x={tab[i, 0]:g}",
                                      x=float(tab[i, 0])))
    return out


def validate_model(spec: ModelSpec, x_hi: float | None = None, eps: float = SIGMA_EPS,
                   x_max: float = X_MAX, concavity_tol: float = CONCAVITY_TOL) -> ValidatedModel:
    if x_hi is None:
        x_hi = default_x_hi(spec, x_max)
    violations = model_violations(spec, x_hi, eps, concavity_tol)
    if violations:
        raise ValidationError(violations)
    sigma0 = float(spec.sigma.value(0.0))
    x_lo = -10.0 * sigma0 / math.sqrt(spec.q)
    return ValidatedModel(spec, x_lo=x_lo, x_hi=float(x_hi), eps=eps)


@dataclass(frozen=True, eq=False)
class ExtendedModel:
    """Validated model continued to the whole real line.

    For ``x < 0`` the drift and bound continue as their tangent lines at 0 and
    the diffusion is frozen at sigma(0), so the full-withdrawal process is an
    Ornstein-Uhlenbeck process there.
    """

    base: ValidatedModel
    mu_neg: tuple[float, float]
    F_neg: tuple[float, float]
    sigma_neg: float

    @property
    def spec(self) -> ModelSpec:
        return self.base.spec

    @property
    def q(self) -> float:
        return self.base.spec.q

    @property
    def x_lo(self) -> float:
        return self.base.x_lo

    @property
    def x_hi(self) -> float:
        return self.base.x_hi

    def _split(self, x, pos, neg):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        return np.where(x < 0, neg(x), pos(xp))

    def mu(self, x):
        a, b = self.mu_neg
        return self._split(x, self.spec.mu.value, lambda t: a + b * t)

    def mu_prime(self, x):
        b = self.mu_neg[1]
        return self._split(x, self.spec.mu.deriv, lambda t: b + 0.0 * t)

    def F(self, x):
        a, b = self.F_neg
        return self._split(x, self.spec.bound.value, lambda t: a + b * t)

    def F_prime(self, x):
        b = self.F_neg[1]
        return self._split(x, self.spec.bound.deriv, lambda t: b + 0.0 * t)

    def sigma(self, x):
        s = self.sigma_neg
        return self._split(x, self.spec.sigma.value, lambda t: s + 0.0 * t)

    def sigma_prime(self, x):
        return self._split(x, self.spec.sigma.deriv, lambda t: 0.0 * t)

    def drift_and_var(self, with_bound: bool):
        """Scalar closure x -> (drift, sigma^2) with drift mu or mu - F (x >= 0 only)."""
        mu, _ = self.spec.mu.scalar_pair()
        sig, _ = self.spec.sigma.scalar_pair()
        if with_bound:
            F, _ = self.spec.bound.scalar_pair()

            def fn(x):
                s = sig(x)
                return mu(x) - F(x), s * s
        else:
            def fn(x):
                s = sig(x)
                return mu(x), s * s
        return fn

    def drift(self, x, with_bound: bool):
        return self.mu(x) - self.F(x) if with_bound else self.mu(x)


def extend_to_real_line(m: ValidatedModel) -> ExtendedModel:
    spec = m.spec
    mu_neg = (float(spec.mu.value(0.0)), float(spec.mu.deriv(0.0)))
    F_neg = (float(spec.bound.value(0.0)), float(spec.bound.deriv(0.0)))
    return ExtendedModel(m, mu_neg=mu_neg, F_neg=F_neg, sigma_neg=float(spec.sigma.value(0.0)))


def eval_coeffs(m: ExtendedModel, x: float) -> tuple[float, float, float, float, float]:
    """(mu, sigma, F, mu', F') at ``x`` inside the working domain."""
    if not (m.x_lo <= x <= m.x_hi):
        raise OutOfDomain(f"x={x:g} is outside the working domain [{m.x_lo:g}, {m.x_hi:g}]")
    return (float(m.mu(x)), float(m.sigma(x)), float(m.F(x)),
            float(m.mu_prime(x)), float(m.F_prime(x)))


def prepare(spec: ModelSpec, **kw) -> ExtendedModel:
    """Validate and extend in one step."""
    return extend_to_real_line(validate_model(spec, **kw))
