import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bdlim.basis import build_basis
from bdlim.model import BdlimData
from bdlim.simulation import generate_covariates, generate_exposures

settings.register_profile(
    "bdlim", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("bdlim")


@pytest.fixture(scope="session")
def small_design():
    """Two-group synthetic design: exposures, covariates, basis and scores."""
    rng = np.random.default_rng(11)
    n, T = 200, 20
    X = generate_exposures(n, T, rho=0.9, seasonal_amp=1.0, rng=rng)
    Z = generate_covariates(n, 2, 1, rng)
    groups = np.repeat([0, 1], [90, 110])
    basis, scores = build_basis(X, knots=8)
    return {"X": X, "Z": Z, "groups": groups, "basis": basis, "scores": scores, "rng": rng}


@pytest.fixture(scope="session")
def small_data(small_design):
    d = small_design
    rng = np.random.default_rng(12)
    theta = d["basis"].column_sums / np.linalg.norm(d["basis"].column_sums)
    beta = np.array([0.5, -0.3])
    y = (np.array([1.0, -1.0])[d["groups"]] + beta[d["groups"]] * (d["scores"] @ theta)
         + d["Z"] @ np.array([0.5, -0.5, 1.0]) + rng.standard_normal(len(d["groups"])))
    return BdlimData(y, d["scores"], d["groups"], d["Z"], d["basis"].column_sums, ("f", "m"))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    def add(number, name, ok, detail):
        ACCEPTANCE_LINES.append((number, f"[{'PASS' if ok else 'FAIL'}] criterion {number}: "
                                         f"{name}: {detail}"))
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
