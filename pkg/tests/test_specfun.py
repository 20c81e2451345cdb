import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optwithdraw import specfun as sf

mp.mp.dps = 30


def rel(a, b):
    return abs(a - b) / abs(b)


# --- oracle comparisons -------------------------------------------------------

M_CASES = [(0.5, 1.5, 3.0), (1.3, 0.7, 25.0), (2.0, 3.5, -12.0), (0.25, 0.5, -60.0),
           (-1.5, 2.5, 4.0), (3.0, 1.2, 150.0), (0.7, 4.0, -300.0), (1.0, 0.5, 500.0)]


@pytest.mark.parametrize("a,b,z", M_CASES)
def test_kummer_m_matches_mpmath(a, b, z):
    r = sf.kummer_m(a, b, z)
    ref = float(mp.hyp1f1(a, b, z))
    assert rel(r.value, ref) < 1e-11
    assert r.abs_error_estimate <= 1e-9 * abs(ref)


@pytest.mark.parametrize("a,b,z", [(0.5, 0.5, 900.0), (1.2, 1.5, 2500.0), (2.0, 5.0, -3000.0)])
def test_log_kummer_m_beyond_double_range(a, b, z):
    la, s = sf.log_kummer_m(a, b, z)
    ref = mp.hyp1f1(a, b, z)
    assert s == (1 if ref > 0 else -1)
    assert abs(la - float(mp.log(abs(ref)))) < 1e-10 * max(1.0, abs(la))


@pytest.mark.parametrize("a,b,z", [(0.5, 1.5, 0.2), (1.0, 2.0, 3.0), (2.5, -0.5, 7.0),
                                   (0.3, 0.8, 40.0), (4.0, 1.0, 0.05), (1.7, 6.0, 120.0)])
def test_tricomi_u_matches_mpmath(a, b, z):
    r = sf.tricomi_u(a, b, z)
    assert rel(r.value, float(mp.hyperu(a, b, z))) < 1e-10


@pytest.mark.parametrize("lam,z", [(0.5, 0.0), (1.0, 2.0), (2.7, -3.0), (0.2, 8.0), (6.0, -1.5), (1.5, 25.0)])
def test_parabolic_cylinder_matches_mpmath(lam, z):
    r = sf.parabolic_cylinder_d(lam, z)
    assert rel(r.value, float(mp.pcfd(-lam, z))) < 1e-10


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.1, 4.0), db=st.floats(0.1, 4.0), z=st.floats(-80.0, 80.0))
def test_m_series_and_integral_agree(a, db, z):
    b = a + db
    s = sf.kummer_m(a, b, z).value
    i = sf.kummer_m_integral(a, b, z).value
    assert rel(s, i) < 1e-9


# --- identities -----------------------------------------------------------

@pytest.mark.parametrize("z", [-20.0, -1.0, 0.5, 3.0, 30.0])
def test_m_1_1_is_exponential(z):
    assert rel(sf.kummer_m(1, 1, z).value, math.exp(z)) < 1e-13


@pytest.mark.parametrize("a,b", [(0.5, 1.5), (-2.0, 3.0), (7.0, 0.2)])
def test_m_at_zero(a, b):
    assert sf.kummer_m(a, b, 0.0).value == 1.0


@pytest.mark.parametrize("z", [0.01, 0.7, 5.0, 90.0])
def test_u_1_2_is_reciprocal(z):
    assert rel(sf.tricomi_u(1, 2, z).value, 1 / z) < 1e-12


def test_d_minus_one_at_zero():
    assert rel(sf.parabolic_cylinder_d(1.0, 0.0).value, math.sqrt(math.pi / 2)) < 1e-13


def test_m_terminates_for_negative_integer_a():
    # M(-2, b; z) = 1 - 2z/b + z^2/(b(b+1))
    b, z = 1.5, 3.0
    assert rel(sf.kummer_m(-2, b, z).value, 1 - 2 * z / b + z * z / (b * (b + 1))) < 1e-14


# --- derivatives -------------------------------------------------------------

@pytest.mark.parametrize("which,params,z", [("M", (0.7, 1.9), -4.0), ("M", (2.0, 0.6), 5.0),
                                            ("U", (0.8, 1.7), 2.0), ("U", (2.5, -0.3), 0.4),
                                            ("D", (0.6,), -2.0), ("D", (3.0,), 1.5), ("D", (1.0,), 0.0)])
def test_derivative_relations_match_mpmath(which, params, z):
    f = {"M": lambda t: mp.hyp1f1(*params, t), "U": lambda t: mp.hyperu(*params, t),
         "D": lambda t: mp.pcfd(-params[0], t)}[which]
    ref = float(mp.diff(f, z))
    assert rel(sf.specfun_derivative(which, params, z), ref) < 1e-9


def test_derivative_relations_match_finite_differences():
    h = 1e-4
    for which, params, z in [("M", (1.2, 2.2), 1.0), ("U", (1.1, 0.4), 3.0), ("D", (2.0,), 0.7)]:
        fn = {"M": sf.kummer_m, "U": sf.tricomi_u, "D": sf.parabolic_cylinder_d}[which]
        f = lambda t: fn(*params, t).value
        fd = (f(z + h) - f(z - h)) / (2 * h)
        assert rel(sf.specfun_derivative(which, params, z), fd) < 1e-6


def test_weber_equation_residual():
    lam, h = 1.7, 1e-3
    for z in np.linspace(-3, 5, 9):
        d = lambda t: sf.parabolic_cylinder_d(lam, t).value
        u2 = (d(z + h) - 2 * d(z) + d(z - h)) / h ** 2
        assert abs(u2 - (lam - 0.5 + z * z / 4) * d(z)) <= 1e-4 * (abs(u2) + 1e-3)


# --- errors -------------------------------------------------------------------

def test_pole_in_b():
    with pytest.raises(sf.ParameterPole):
        sf.kummer_m(1.0, -2.0, 1.0)


def test_unsupported_regimes():
    with pytest.raises(sf.UnsupportedRegime):
        sf.tricomi_u(-0.5, 1.0, 2.0)
    with pytest.raises(sf.UnsupportedRegime):
        sf.parabolic_cylinder_d(-1.0, 0.5)
    with pytest.raises(sf.UnsupportedRegime):
        sf.kummer_m(1.0, 2.0, 1e5)


def test_u_positive_and_decreasing():
    for a, b in [(0.4, 0.1), (1.5, 3.0), (2.0, -1.0)]:
        v = [sf.tricomi_u(a, b, z).value for z in np.linspace(0.1, 15, 30)]
        assert min(v) > 0 and np.all(np.diff(v) < 0)
