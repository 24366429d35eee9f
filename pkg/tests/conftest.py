import numpy as np
import pytest

from otmorph.config import SolverConfig
from otmorph.fields import ScalarField2D
from otmorph.mesh import Grid2D


def gaussian_bump(cx, cy, amp=0.8, width=0.1):
    return lambda X, Y: amp * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * width**2))


@pytest.fixture
def small_cfg():
    return SolverConfig(nx=9, ny=9, nt=5, fp_max_iter=5)


@pytest.fixture
def bump_pair(small_cfg):
    g = Grid2D(small_cfg.nx, small_cfg.ny)
    r0 = ScalarField2D.from_function(g, gaussian_bump(0.4, 0.5))
    r1 = ScalarField2D.from_function(g, gaussian_bump(0.6, 0.5))
    return r0, r1


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: (isinstance(k, str), str(k).zfill(3))):
        terminalreporter.write_line(RESULTS[key])
