"""b* over a grid of affine bound functions F(x) = F0 + F1 x.

psi does not involve F, so it is solved once per sweep and shared.  Each cell
then needs phi, J_0 and phi_tilde'(0) only on a short interval covering
(0, b_hat]; the far-field start of the backward integrations is pushed out
by the contraction rule, so truncating the reported interval costs nothing.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fundamental import DEFAULT_DX, DEFAULT_TOL, inflection_point, solve_phi, solve_phi_tilde, solve_psi
from .model import ModelSpec, affine, prepare
from .optimizer import BARRIER_POSITIVE, BARRIER_ZERO, find_bstar, regime
from .resolvent import build_resolvent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Cell:
    f0: float
    f1: float
    b_star: float
    regime: str
    b_hat: float
    j0_prime0: float
    n_roots: int
    error: str = ""


def cell_window(b_hat: float) -> float:
    return 1.5 * b_hat + 0.5


def solve_cell(spec: ModelSpec, f0: float, f1: float, psi=None, b_hat: float | None = None,
               tol: float = DEFAULT_TOL, dx: float = DEFAULT_DX) -> Cell:
    """Regime and b* for one bound function; failures become the ``error`` field."""
    try:
        cell_spec = spec.with_bound(affine(f0, f1, role="bound"))
        m = prepare(cell_spec)
        if psi is None:
            psi = solve_psi(m, None, tol, dx)
        if b_hat is None:
            b_hat = inflection_point(psi, m)
        x_hi = min(cell_window(b_hat), m.x_hi)
        if f0 == 0.0 and f1 == 0.0:
            return Cell(f0, f1, 0.0, BARRIER_ZERO, b_hat, 0.0, 0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            phi = solve_phi(m, x_hi, tol, dx)
            pt = solve_phi_tilde(m)
            bundle = build_resolvent(m, phi, pt, x_hi, tol, dx, full_curve=False)
            flag = regime(bundle.j0)
        if flag == BARRIER_POSITIVE:
            b, roots = find_bstar(psi, phi, bundle.j0, b_hat)
            if len(roots) > 1:
                log.warning("cell (%g, %g): %d roots %s", f0, f1, len(roots), roots)
        else:
            b, roots = 0.0, []
        return Cell(f0, f1, float(b), flag, float(b_hat), float(bundle.j0_prime0), len(roots))
    except Exception as exc:  # recorded per cell, the sweep carries on
        return Cell(f0, f1, math.nan, "", math.nan if b_hat is None else float(b_hat), math.nan, 0,
                    f"{type(exc).__name__}: {exc}")


_SHARED: dict = {}


def _init(spec_dict, tol, dx):
    spec = ModelSpec.from_dict(spec_dict)
    # psi only sees mu, sigma and q; any admissible bound validates the domain
    m = prepare(spec.with_bound(affine(0.0, 0.0, role="bound")))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        psi = solve_psi(m, None, tol, dx)
    _SHARED.update(spec=spec, psi=psi, b_hat=inflection_point(psi, m), tol=tol, dx=dx)


def _run(args):
    f0, f1 = args
    s = _SHARED
    return solve_cell(s["spec"], f0, f1, s["psi"], s["b_hat"], s["tol"], s["dx"])


def axis(lo: float, hi: float, resolution: int) -> np.ndarray:
    if resolution < 2:
        raise ValueError("sweep resolution must be at least 2")
    if not hi > lo:
        raise ValueError(f"empty sweep range [{lo}, {hi}]")
    return np.linspace(lo, hi, int(resolution))


def run_sweep(spec: ModelSpec, f0_range=(0.0, 1.0), f1_range=(0.0, 1.0), resolution: int = 20,
              workers: int | None = None, tol: float = DEFAULT_TOL, dx: float = DEFAULT_DX) -> list[Cell]:
    """All cells in row-major order (F0 outer, F1 inner)."""
    f0s = axis(*f0_range, resolution)
    f1s = axis(*f1_range, resolution)
    jobs = [(float(a), float(b)) for a in f0s for b in f1s]
    workers = workers or os.cpu_count() or 1
    if workers == 1:
        _init(spec.to_dict(), tol, dx)
        return [_run(j) for j in jobs]
    with ProcessPoolExecutor(workers, initializer=_init, initargs=(spec.to_dict(), tol, dx)) as ex:
        return list(ex.map(_run, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def as_grid(cells: list[Cell], resolution: int) -> np.ndarray:
    return np.array([c.b_star for c in cells]).reshape(resolution, resolution)


def zero_region_connected(bstar: np.ndarray) -> bool:
    """The set {b* = 0} is a 4-connected region containing the origin cell (or empty)."""
    zero = bstar == 0.0
    if not zero.any():
        return True
    if not zero[0, 0]:
        return False
    seen = np.zeros_like(zero)
    stack = [(0, 0)]
    while stack:
        i, j = stack.pop()
        if seen[i, j] or not zero[i, j]:
            continue
        seen[i, j] = True
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < zero.shape[0] and 0 <= b < zero.shape[1]:
                stack.append((a, b))
    return bool(np.array_equal(seen, zero))


def monotonicity_defect(bstar: np.ndarray) -> tuple[float, float]:
    """Largest decrease of b* along F0 (axis 0) and along F1 (axis 1)."""
    d0 = np.diff(bstar, axis=0)
    d1 = np.diff(bstar, axis=1)
    return float(max(0.0, -np.nanmin(d0))), float(max(0.0, -np.nanmin(d1)))
