import warnings

import numpy as np
import pytest

from optwithdraw import prepare
from optwithdraw.fundamental import closed_form_fundamentals, solve_phi, solve_phi_tilde
from optwithdraw.resolvent import (affine_if, build_resolvent, concavity_defect, envelope_bounds,
                                   envelope_violation, ode_residual, solve_j0)

from conftest import FAMILIES, Q, logistic4_spec, logistic5_spec, ou_spec


def _bundle(spec):
    m = prepare(spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        phi = solve_phi(m)
        return m, phi, build_resolvent(m, phi, solve_phi_tilde(m))


def test_constant_bound_gives_constant_resolvent():
    m, _, b = _bundle(ou_spec("constant", (0.3, 0.0)))
    g = b.if_curve.grid
    np.testing.assert_allclose(b.if_curve(g[g < 10]), 0.3 / Q, rtol=1e-9)


@pytest.mark.parametrize("family", FAMILIES)
def test_affine_closed_form(family):
    m, _, b = _bundle(ou_spec(family))
    x = np.linspace(-2.0, 8.0, 101)
    np.testing.assert_allclose(b.if_curve(x), affine_if(m, x), rtol=1e-9, atol=1e-10)
    np.testing.assert_allclose(b.if_curve.deriv(x), 0.3 / (Q - 0.21 + 0.3), rtol=1e-8)


@pytest.mark.parametrize("family", FAMILIES)
def test_j0_against_closed_form_phi(family):
    # J_0 = I_F - I_F(0) phi, with both pieces closed form for affine coefficients
    m, _, b = _bundle(ou_spec(family))
    _, kphi = closed_form_fundamentals(m, x_hi=6.0)
    x = np.linspace(0.0, 6.0, 61)
    ref = affine_if(m, x) - float(affine_if(m, 0.0)) * kphi.value(x)
    np.testing.assert_allclose(b.j0(x), ref, rtol=1e-9, atol=1e-11)
    assert b.j0(0.0) == 0.0


@pytest.mark.parametrize("spec", [logistic4_spec, logistic5_spec], ids=["fig4", "fig5"])
def test_resolvent_properties_nonaffine(spec):
    m, _, b = _bundle(spec())
    c = b.if_curve
    assert ode_residual(m, c) < 1e-7
    assert concavity_defect(c) < 1e-8
    assert envelope_violation(m, c) < 1e-9
    assert np.all(np.diff(c.values) > 0)
    assert 0.0 < b.if0 <= b.alpha0 + 1e-12


def test_envelope_on_negative_axis_is_affine_solution():
    m, _, b = _bundle(logistic4_spec())
    x = np.linspace(-3.0, -0.5, 11)
    e = envelope_bounds(m, -1.0)
    assert e.beta == b.beta0
    assert np.all(b.if_curve(x) <= e.alpha + e.beta * x + 1e-12)


def test_envelope_degenerate_where_bound_is_flat():
    m = prepare(ou_spec("affine", (0.4, 0.0)))
    e = envelope_bounds(m, 1.0)
    assert e.degenerate and e.beta == 0.0 and e.alpha == pytest.approx(0.4 / Q)


def test_beta_monotone_for_concave_coefficients():
    m = prepare(logistic4_spec())
    betas = [envelope_bounds(m, xi).beta for xi in np.linspace(0, 8, 33)]
    assert np.all(np.diff(betas) <= 1e-14)


def test_j0_tolerance_convergence():
    m = prepare(logistic5_spec())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = solve_j0(m, tol=1e-8)
        b = solve_j0(m, tol=1e-11)
    x = np.linspace(0, 5, 51)
    assert np.max(np.abs(a(x) - b(x))) < 1e-6
