import math
import warnings

import numpy as np
import pytest

from optwithdraw import prepare
from optwithdraw.optimizer import BARRIER_ZERO, solve
from optwithdraw.sweep import (as_grid, axis, monotonicity_defect, run_sweep, solve_cell,
                               zero_region_connected)

from conftest import logistic4_spec, ou_spec


@pytest.mark.parametrize("f0,f1", [(0.3, 0.3), (0.6, 0.1), (0.1, 0.9)])
def test_cell_matches_full_solve(f0, f1):
    # the truncated window must not move b*
    spec = logistic4_spec((f0, f1))
    cell = solve_cell(spec, f0, f1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = solve(prepare(spec), diagnostics=False)
    assert cell.regime == sol.regime
    assert cell.b_star == pytest.approx(sol.b_star, abs=1e-9)
    assert cell.b_hat == pytest.approx(sol.b_hat, abs=1e-12)


def test_origin_cell_is_zero():
    c = solve_cell(ou_spec("affine"), 0.0, 0.0)
    assert c.regime == BARRIER_ZERO and c.b_star == 0.0 and not c.error


def test_sweep_structure():
    res = 5
    cells = run_sweep(logistic4_spec(), (0.0, 1.0), (0.0, 1.0), res, workers=1)
    assert [(c.f0, c.f1) for c in cells[:2]] == [(0.0, 0.0), (0.0, 0.25)]
    assert not any(c.error for c in cells)
    g = as_grid(cells, res)
    assert g.shape == (res, res)
    assert np.all(g <= np.array([c.b_hat for c in cells]).reshape(res, res) + 1e-12)
    assert zero_region_connected(g)
    assert monotonicity_defect(g) == (0.0, 0.0)


def test_cell_errors_are_recorded():
    # decreasing bound fails validation inside the cell
    c = solve_cell(ou_spec("affine"), 0.5, -0.2)
    assert c.error and math.isnan(c.b_star)


def test_zero_region_helper():
    a = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    assert not zero_region_connected(a)
    a[2, 2] = 2.0
    assert zero_region_connected(a)
    assert zero_region_connected(np.ones((2, 2)))
    assert not zero_region_connected(np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_monotonicity_helper():
    g = np.array([[0.0, 0.1], [0.2, 0.05]])
    d0, d1 = monotonicity_defect(g)
    assert d0 == pytest.approx(0.05) and d1 == pytest.approx(0.15)


def test_axis_validation():
    with pytest.raises(ValueError):
        axis(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        axis(1.0, 1.0, 5)
