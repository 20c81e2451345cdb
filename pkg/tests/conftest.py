import warnings

import pytest

from optwithdraw import ModelSpec, affine, constant, logistic, prepare, sqrt_affine
from optwithdraw.optimizer import solve

MU = (0.09, 0.21)
Q = 0.33
FAMILIES = ("constant", "affine", "variance")


def ou_spec(family: str, F=(0.3, 0.3)) -> ModelSpec:
    sigma = {"constant": constant(0.3),
             "affine": affine(0.3, 0.5, role="diffusion"),
             "variance": sqrt_affine(0.3, 0.5)}[family]
    return ModelSpec(affine(*MU), sigma, affine(*F, role="bound"), Q)


def logistic4_spec(F=(0.3, 0.3)) -> ModelSpec:
    return ModelSpec(logistic(0.15, 0.21, 10.0), sqrt_affine(0.75, 0.5), affine(*F, role="bound"), Q)


def logistic5_spec() -> ModelSpec:
    return ModelSpec(logistic(0.25, 0.3, 5.0), sqrt_affine(0.75, 0.75), affine(0.15, 0.25, role="bound"), Q)


ALL_SPECS = {
    "ou_constant": lambda: ou_spec("constant"),
    "ou_affine": lambda: ou_spec("affine"),
    "ou_variance": lambda: ou_spec("variance"),
    "logistic4": logistic4_spec,
    "logistic5": logistic5_spec,
    "ou_constant_flat_F": lambda: ou_spec("constant", (0.3, 0.0)),
    "ou_variance_flat_F": lambda: ou_spec("variance", (0.3, 0.0)),
}

_CACHE: dict = {}


def solved(name: str):
    """Solution for a named reference model, computed once per session."""
    if name not in _CACHE:
        m = prepare(ALL_SPECS[name]())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _CACHE[name] = solve(m)
    return _CACHE[name]


@pytest.fixture(scope="session")
def solutions():
    return solved


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
