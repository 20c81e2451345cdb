import math

import pytest

from optwithdraw import prepare
from optwithdraw.checks import REGISTRY, CheckContext, CheckResult, Inconclusive, run_checks
from optwithdraw.simulate import SimConfig

from conftest import ou_spec

ANALYTIC = {"model", "specfun", "fundamental", "resolvent", "optimizer", "cli"}


@pytest.mark.parametrize("family,F", [("affine", (0.3, 0.3)), ("variance", (0.3, 0.0))],
                         ids=["positive", "zero"])
def test_analytic_checks_pass(family, F):
    ctx = CheckContext(prepare(ou_spec(family, F)), SimConfig(dt=1e-2, n_paths=2000))
    results = run_checks(ctx, ANALYTIC)
    assert {r.module for r in results} == ANALYTIC
    failed = [r.line() for r in results if not r.passed]
    assert not failed, failed


def test_zero_regime_skips_barrier_checks():
    ctx = CheckContext(prepare(ou_spec("variance", (0.3, 0.0))), SimConfig(dt=1e-2, n_paths=2000))
    res = {r.name: r for r in run_checks(ctx, {"optimizer"})}
    assert res["smooth_fit"].passed and res["smooth_fit"].detail.startswith("not applicable")


def test_registry_names_unique():
    keys = [(m, n) for m, n, _, _ in REGISTRY]
    assert len(keys) == len(set(keys))


def test_result_line_and_dict():
    r = CheckResult("simulate", "x", math.inf, 1.0, False, "boom")
    assert r.line().startswith("FAIL simulate.x")
    assert r.as_dict()["measured"] == "inf"


def test_crash_and_inconclusive_reporting(monkeypatch):
    def crash(ctx):
        raise ZeroDivisionError("no")

    def noisy(ctx):
        raise Inconclusive(2.0, "within noise")

    monkeypatch.setattr("optwithdraw.checks.REGISTRY", [("t", "crash", 1.0, crash), ("t", "noisy", 1.0, noisy)])
    ctx = CheckContext(prepare(ou_spec("affine")), SimConfig())
    a, b = run_checks(ctx)
    assert not a.passed and "ZeroDivisionError" in a.detail
    assert b.passed and b.measured == 2.0 and b.detail.startswith("inconclusive")
