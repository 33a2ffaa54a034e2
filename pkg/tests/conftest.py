import numpy as np
import pytest

from bmolab.dyadic import sample_ensemble
from bmolab.functions import DEFAULT_SUITE, make_function
from bmolab.semigroup import build_operator
from bmolab.space import build_grid_space, doubling_fit, enumerate_balls


@pytest.fixture(scope="session")
def path256():
    return build_grid_space(1, 256)


@pytest.fixture(scope="session")
def op256(path256):
    return build_operator(path256, "laplacian")


@pytest.fixture(scope="session")
def balls256(path256):
    return enumerate_balls(path256, 2)


@pytest.fixture(scope="session")
def n_D256(path256, balls256):
    return doubling_fit(path256, balls256).n_D


@pytest.fixture(scope="session")
def ens256(path256):
    return sample_ensemble(path256, 20, seed=5)


@pytest.fixture(scope="session")
def suite256(path256):
    return {expr: make_function(path256, expr) for expr in DEFAULT_SUITE}


@pytest.fixture(scope="session")
def log_f(path256):
    return make_function(path256, "log_singularity(x0=0.5)")


@pytest.fixture(scope="session")
def spike_f(path256):
    x = path256.coords[:, 0]
    return 10.0 * (np.arange(256) == 100) + np.sin(2 * np.pi * x)


@pytest.fixture
def record_criterion(request):
    """Append a one-line acceptance verdict that is echoed in the terminal summary."""
    lines = request.config.__dict__.setdefault("_criterion_lines", [])

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
