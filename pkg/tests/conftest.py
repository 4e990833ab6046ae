import math

import numpy as np
import pytest

from annulus_bem.geometry import circle, discretize, ellipse
from annulus_bem.nonlinearity import constant, polynomial

# 1 + 0.75 log(8/3): makes t = 0 and t = 1 both solve the two-solution radial benchmark.
T_OUTER = 1.0 + 0.75 * math.log(8.0 / 3.0)
CUBIC = polynomial(1.0, 1.0, -2.0, 1.0)          # t^3 - 2t^2 + t + 1
PHI = polynomial(1.0, 0.5, -2.0, 1.0)            # t^3 - 2t^2 + t/2 + 1
ONE = constant(1.0)


@pytest.fixture(scope="session")
def annulus128():
    return discretize(circle(2.0), 128), discretize(circle(0.75), 128)


@pytest.fixture(scope="session")
def ellipse128():
    return discretize(ellipse(1.2, 0.8), 128)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance_record():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
