import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optwithdraw import (CoefficientSpec, ModelSpec, affine, constant, custom, extend_to_real_line,
                         logistic, prepare, sqrt_affine, validate_model)
from optwithdraw.model import (BoundNotMonotone, DiffusionDegenerate, DiscountTooSmall,
                               DriftAtZeroNonpositive, InvalidCoefficient, NotConcave, OutOfDomain,
                               ValidationError, eval_coeffs)

from conftest import ou_spec, logistic4_spec


def _kinds(exc):
    return {type(v) for v in exc.value.violations}


def test_reference_models_validate():
    for fam in ("constant", "affine", "variance"):
        m = validate_model(ou_spec(fam))
        assert m.x_lo < 0 < m.x_hi
    validate_model(logistic4_spec())


def test_drift_at_zero_must_be_positive():
    spec = ModelSpec(affine(0.0, 0.1), constant(0.3), affine(0.1, 0.1, role="bound"), 0.33)
    with pytest.raises(ValidationError) as e:
        validate_model(spec)
    assert DriftAtZeroNonpositive in _kinds(e)


def test_discount_above_drift_slope():
    spec = ModelSpec(affine(0.1, 0.4), constant(0.3), affine(0.1, 0.1, role="bound"), 0.33)
    with pytest.raises(ValidationError) as e:
        validate_model(spec)
    assert DiscountTooSmall in _kinds(e)


def test_degenerate_diffusion():
    spec = ModelSpec(affine(0.1, 0.1), affine(0.3, -0.1, role="diffusion"), affine(0.1, 0.1, role="bound"), 0.33)
    with pytest.raises(ValidationError) as e:
        validate_model(spec)
    assert DiffusionDegenerate in _kinds(e)


def test_decreasing_bound_and_convex_drift_collected_together():
    mu = custom([[0, 0.1], [1, 0.2], [2, 0.5], [60, 20.0]], "drift")
    spec = ModelSpec(mu, constant(0.3), affine(0.5, -0.1, role="bound"), 0.33)
    with pytest.raises(ValidationError) as e:
        validate_model(spec)
    kinds = _kinds(e)
    assert BoundNotMonotone in kinds and NotConcave in kinds


def test_not_concave_reports_location():
    F = custom([[0, 0.1], [1, 0.2], [2, 0.5], [3, 0.6], [60, 1.0]], "bound")
    spec = ModelSpec(affine(0.1, 0.1), constant(0.3), F, 0.33)
    with pytest.raises(ValidationError) as e:
        validate_model(spec)
    nc = [v for v in e.value.violations if isinstance(v, NotConcave)]
    assert nc and 0.5 <= nc[0].x <= 2.5


def test_invalid_coefficient_kinds():
    with pytest.raises(InvalidCoefficient):
        CoefficientSpec("logistic", {"m0": 1, "m1": 1, "K": 2}, role="bound")
    with pytest.raises(InvalidCoefficient):
        affine(float("nan"), 1.0)
    with pytest.raises(InvalidCoefficient):
        CoefficientSpec.from_dict({"kind": "affine", "c0": 1}, "drift")
    with pytest.raises(InvalidCoefficient):
        custom([[0.5, 1.0], [1.0, 2.0]], "drift")


def test_extension_is_tangent_line_and_frozen_sigma():
    m = prepare(logistic4_spec())
    assert m.mu_neg == (pytest.approx(0.15, abs=0), pytest.approx(0.21, abs=0))
    x = np.array([-2.0, -0.5])
    np.testing.assert_allclose(m.mu(x), 0.15 + 0.21 * x)
    np.testing.assert_allclose(m.sigma(x), math.sqrt(0.75))
    np.testing.assert_allclose(m.F(x), 0.3 + 0.3 * x)
    assert float(m.mu(0.0)) == 0.15


def test_eval_coeffs_domain():
    m = prepare(ou_spec("affine"))
    mu, s, F, dmu, dF = eval_coeffs(m, 1.0)
    assert (mu, s, F, dmu, dF) == pytest.approx((0.3, 0.8, 0.6, 0.21, 0.3))
    with pytest.raises(OutOfDomain):
        eval_coeffs(m, m.x_hi + 1)


def test_custom_table_matches_parametric():
    x = np.linspace(0, 60, 241)
    tab = np.column_stack([x, 0.2 + 0.1 * x, np.full_like(x, 0.1)])
    c = custom(tab, "bound")
    np.testing.assert_allclose(c.value([0.3, 7.7]), [0.23, 0.97], rtol=1e-12)
    np.testing.assert_allclose(c.deriv([0.3, 7.7]), 0.1, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(mu0=st.floats(0.01, 1.0), mu1=st.floats(-0.5, 0.3), s0=st.floats(0.05, 1.0),
       F0=st.floats(0.0, 1.0), F1=st.floats(0.0, 1.0))
def test_spec_dict_roundtrip(mu0, mu1, s0, F0, F1):
    spec = ModelSpec(affine(mu0, mu1), constant(s0), affine(F0, F1, role="bound"), 0.33)
    again = ModelSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()


@settings(max_examples=40, deadline=None)
@given(mu0=st.floats(0.01, 1.0), mu1=st.floats(-0.5, 0.32), F0=st.floats(0.0, 1.0), F1=st.floats(0.0, 1.0))
def test_affine_models_with_admissible_parameters_validate(mu0, mu1, F0, F1):
    m = prepare(ModelSpec(affine(mu0, mu1), sqrt_affine(0.3, 0.5), affine(F0, F1, role="bound"), 0.33))
    x = np.linspace(0, m.x_hi, 501)
    assert np.all(np.diff(m.F(x)) >= -1e-12)
