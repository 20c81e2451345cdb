import math

import numpy as np
import pytest

from optwithdraw import ModelSpec, affine, constant, prepare
from optwithdraw.rng import normals, philox_block, seed_key, uniforms
from optwithdraw.simulate import (ConfigInvalid, Policy, SimConfig, first_passage_down, first_passage_up,
                                  simulate_policy, simulate_refraction, step_halving, transversality_check)

from conftest import ou_spec

FAST = SimConfig(dt=1e-2, n_paths=20_000, seed=11)


# --- generator ---------------------------------------------------------------

@pytest.mark.parametrize("ctr,key,expected", [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF, 0xFFFFFFFF), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
])
def test_philox_known_answers(ctr, key, expected):
    assert philox_block(ctr, key) == expected


def test_seed_split():
    assert seed_key(0x0123456789ABCDEF) == (0x89ABCDEF, 0x01234567)


def test_normals_are_standard_and_counter_based():
    paths = np.arange(200_000)
    z = normals(5, 3, paths)
    n = z.size
    assert abs(z.mean()) < 5 / math.sqrt(n)
    assert abs(z.var() - 1) < 5 * math.sqrt(2 / n)
    # any subset of paths sees the same numbers
    np.testing.assert_array_equal(normals(5, 3, paths[1000:1010]), z[1000:1010])
    assert not np.array_equal(normals(6, 3, paths[:10]), z[:10])
    u = uniforms(5, 3, paths[:100_000])
    assert 0 < u.min() and u.max() < 1 and abs(u.mean() - 0.5) < 0.005


# --- configuration -------------------------------------------------------------

def test_config_validation():
    m = prepare(ou_spec("affine"))
    with pytest.raises(ConfigInvalid):
        simulate_refraction(m, 0.3, FAST.replace(dt=0.05))
    with pytest.raises(ConfigInvalid):
        simulate_refraction(m, 0.3, FAST.replace(t_max=10.0))
    with pytest.raises(ConfigInvalid):
        simulate_refraction(m, -0.1, FAST)
    with pytest.raises(ConfigInvalid):
        simulate_refraction(m, 0.3, FAST.replace(n_paths=1))


# --- exact cases -----------------------------------------------------------------

def test_start_at_zero_pays_nothing():
    m = prepare(ou_spec("affine"))
    est = simulate_refraction(m, 0.3, FAST.replace(x0=0.0, n_paths=100))
    assert est.mean == 0.0 and est.std_error == 0.0 and est.absorbed_fraction == 1.0


def test_zero_bound_pays_nothing():
    m = prepare(ou_spec("affine", (0.0, 0.0)))
    est = simulate_refraction(m, 0.0, FAST.replace(n_paths=2000))
    assert est.mean == 0.0


def test_zero_rate_policy_pays_nothing():
    m = prepare(ou_spec("affine"))
    est = simulate_policy(m, Policy(lambda x: 0.0, "none"), FAST.replace(n_paths=2000))
    assert est.mean == 0.0 and est.violations == 0


def test_full_rate_policy_reproduces_zero_barrier():
    m = prepare(ou_spec("affine"))
    cfg = FAST.replace(n_paths=3000)
    a = simulate_refraction(m, 0.0, cfg)
    b = simulate_policy(m, Policy(m.F, "full"), cfg)
    assert b.mean == pytest.approx(a.mean, rel=1e-10)
    assert b.absorbed_fraction == a.absorbed_fraction


def test_policy_violations_counted_and_clamped():
    m = prepare(ou_spec("affine"))
    cfg = FAST.replace(n_paths=500)
    over = simulate_policy(m, Policy(lambda x: 10.0 + 0 * x, "over"), cfg)
    full = simulate_policy(m, Policy(m.F, "full"), cfg)
    assert over.violations > 0
    assert over.mean == pytest.approx(full.mean, rel=1e-12)


def test_reproducible():
    m = prepare(ou_spec("variance"))
    cfg = FAST.replace(n_paths=5000)
    assert simulate_refraction(m, 0.2, cfg) == simulate_refraction(m, 0.2, cfg)
    assert simulate_refraction(m, 0.2, cfg).mean != simulate_refraction(m, 0.2, cfg.replace(seed=12)).mean


# --- statistical ------------------------------------------------------------------

def test_suboptimal_policy_does_not_beat_value(solutions):
    sol = solutions("ou_affine")
    m = sol.model
    est = simulate_policy(m, Policy(lambda x: 0.5 * m.F(x), "half"), FAST.replace(n_paths=5000))
    assert est.mean <= float(sol.value(FAST.x0)) + 3 * est.std_error


def test_refraction_near_value(solutions):
    sol = solutions("ou_affine")
    est = simulate_refraction(sol.model, sol.b_star, FAST)
    # coarse step: allow the O(dt) bias on top of sampling noise
    assert abs(est.mean - float(sol.value(FAST.x0))) < 4 * est.std_error + 5e-3


def test_first_passage_matches_fundamentals(solutions):
    sol = solutions("ou_affine")
    m = sol.model
    cfg = FAST.replace(dt=2e-3)
    up = first_passage_up(m, 0.5, 1.0, cfg)
    assert abs(up.z_score(float(sol.psi.value(0.5) / sol.psi.value(1.0)))) < 4
    down = first_passage_down(m, 1.0, 0.5, cfg)
    ref = math.exp(float(sol.phi.log_value(1.0) - sol.phi.log_value(0.5)))
    assert abs(down.z_score(ref)) < 4


def test_step_halving_shift_small(solutions):
    sol = solutions("ou_affine")
    shift, se, se_d = step_halving(sol.model, sol.b_star, FAST.replace(n_paths=5000))
    assert abs(shift) < se
    assert se_d < se


def test_transversality_constant_drift():
    # with mu' = 0 the discounted first moment decays at rate about q
    m = prepare(ModelSpec(affine(0.2, 0.0), constant(0.3), affine(0.3, 0.0, role="bound"), 0.33))
    r = transversality_check(m, FAST.replace(n_paths=5000), horizons=(5.0, 10.0, 20.0))
    assert r.rate_floor == pytest.approx(0.33)
    assert all(e > 0 for e in r.estimates)
    assert r.rate > 0.5 * r.rate_floor
