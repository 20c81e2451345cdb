import math
import warnings

import numpy as np
import pytest
from scipy import optimize

from optwithdraw import prepare
from optwithdraw.fundamental import Curve, closed_form_fundamentals
from optwithdraw.optimizer import (BARRIER_POSITIVE, BARRIER_ZERO, NoRoot, barrier_roots, delta,
                                   find_bstar, performance_jb, regime, solve)
from optwithdraw.resolvent import affine_if

from conftest import ALL_SPECS, ou_spec

POSITIVE = ["ou_constant", "ou_affine", "ou_variance", "logistic4", "logistic5"]
REFERENCE_BSTAR = {"ou_constant": 0.383296779, "ou_affine": 0.274589954, "ou_variance": 0.172925655,
                   "logistic4": 0.110872055, "logistic5": 0.184559465}


@pytest.mark.parametrize("name", POSITIVE)
def test_regime_and_barrier_location(solutions, name):
    sol = solutions(name)
    assert sol.regime == BARRIER_POSITIVE
    assert 0.0 < sol.b_star <= sol.b_hat
    assert sol.b_star == pytest.approx(REFERENCE_BSTAR[name], abs=1e-8)


@pytest.mark.parametrize("name", POSITIVE)
def test_brute_force_barrier_maximizes_performance(solutions, name):
    # maximize J_b(x) over b directly and compare with the barrier equation
    sol = solutions(name)
    for x in (0.5 * sol.b_star, 1.0, 2.0):
        def neg(b):
            return -float(performance_jb(b, sol.psi, sol.phi, sol.if_curve)(x))
        r = optimize.minimize_scalar(neg, bounds=(1e-6, 2 * sol.b_hat), method="bounded",
                                     options={"xatol": 1e-10})
        assert -r.fun == pytest.approx(float(sol.value(x)), rel=1e-9)
        assert abs(r.x - sol.b_star) < 2e-3


@pytest.mark.parametrize("name", POSITIVE)
def test_value_shape(solutions, name):
    sol = solutions(name)
    V = sol.value
    x = np.linspace(0.0, 10.0, 1001)
    assert V(0.0) == 0.0
    assert np.all(np.diff(V(x)) >= 0)
    assert np.all(V.deriv(x[x >= sol.b_star]) <= 1.0 + 1e-9)
    assert np.all(V.deriv(x[x < sol.b_star]) > 1.0 - 1e-9)
    d = sol.diagnostics
    assert d.smooth_fit_gap < 1e-9 and d.c2_gap < 1e-8 and d.hjb_residual_interp < 1e-7
    assert d.dominance_margin >= -1e-10 and d.region_mismatch <= 1.0


@pytest.mark.parametrize("b", [0.1, 0.3, 0.8])
def test_jb_is_multiple_of_psi_below_barrier(solutions, b):
    sol = solutions("ou_affine")
    jb = performance_jb(b, sol.psi, sol.phi, sol.if_curve)
    x = np.linspace(0.01, b, 25)
    ratio = jb(x) / sol.psi.value(x)
    assert np.ptp(ratio) < 1e-10 * ratio[0]
    assert jb(0.0) == 0.0


def test_zero_barrier_performance_is_j0(solutions):
    sol = solutions("ou_affine")
    jb = performance_jb(0.0, sol.psi, sol.phi, sol.if_curve)
    x = np.linspace(0.0, 8.0, 81)
    np.testing.assert_allclose(jb(x), sol.j0(x), atol=1e-11)
    # closed form for affine coefficients
    _, kphi = closed_form_fundamentals(sol.model, x_hi=8.0)
    ref = affine_if(sol.model, x) - float(affine_if(sol.model, 0.0)) * kphi.value(x)
    np.testing.assert_allclose(jb(x), ref, rtol=1e-9, atol=1e-11)


def test_value_equals_j0_form(solutions):
    sol = solutions("logistic4")
    b = sol.b_star
    x = np.linspace(b, 6.0, 50)
    lphi = sol.phi.log_value(x)
    alt = sol.j0(x) + (1 - float(sol.j0.deriv(b))) / float(sol.phi.log_deriv(b)) * np.exp(lphi - lphi[0])
    np.testing.assert_allclose(sol.value(x), alt, rtol=1e-10)


@pytest.mark.parametrize("name", ["ou_constant_flat_F", "ou_variance_flat_F"])
def test_flat_bound_regimes(solutions, name):
    sol = solutions(name)
    j0p = sol.resolvent.j0_prime0
    assert sol.regime == (BARRIER_POSITIVE if j0p > 1 else BARRIER_ZERO)
    if sol.regime == BARRIER_ZERO:
        assert sol.b_star == 0.0
        x = np.linspace(0, 5, 51)
        np.testing.assert_allclose(sol.value(x), sol.j0(x))
        assert sol.diagnostics.region_mismatch == 0.0


def test_variance_flat_bound_is_zero_regime(solutions):
    assert solutions("ou_variance_flat_F").regime == BARRIER_ZERO


def test_zero_bound_gives_zero_value():
    m = prepare(ou_spec("affine", (0.0, 0.0)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = solve(m)
    assert sol.regime == BARRIER_ZERO
    assert np.max(np.abs(sol.value(np.linspace(0, 5, 11)))) < 1e-12


def _fake_j0(slope):
    x = np.linspace(0, 1, 11)
    return Curve(x, slope * x, np.full_like(x, slope), np.zeros_like(x))


def test_borderline_regime_warns():
    with pytest.warns(RuntimeWarning, match="within"):
        assert regime(_fake_j0(1.0 + 1e-11)) == BARRIER_ZERO
    assert regime(_fake_j0(1.0 + 1e-6)) == BARRIER_POSITIVE
    assert regime(_fake_j0(0.9)) == BARRIER_ZERO


def test_no_root_raises(solutions):
    sol = solutions("ou_affine")
    # restrict the search window to a region where Delta stays positive
    with pytest.raises(NoRoot):
        find_bstar(sol.psi, sol.phi, sol.j0, 0.5 * sol.b_star)


def test_roots_bracket_sign_change(solutions):
    sol = solutions("logistic5")
    roots, d = barrier_roots(sol.psi, sol.phi, sol.j0, sol.b_hat)
    assert d[0] > 0 and d[-1] <= 0
    for r in roots:
        assert abs(float(delta(r, sol.psi, sol.phi, sol.j0))) < 1e-10
    assert math.isclose(roots[0], sol.b_star)
