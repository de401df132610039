"""Session fixtures and the acceptance reporting hook.

The expensive solver sweep (ten profiles at n = 512 plus alternate-init
repeats) runs once per session and is shared by every test that needs a
converged profile family.  Acceptance tests append one line per criterion
to ACCEPTANCE_LINES; the terminal-summary hook prints them after the
test results so the pass/fail ledger is visible in a plain `pytest -v`
run without -s.
"""

import time

import numpy as np
import pytest

from coagprofiles.grids import GridFunction, exp_profile, make_grid
from coagprofiles.kernels import KernelSpec
from coagprofiles.solver import SolverOptions, solve_profile

ACCEPTANCE_LINES = []

SWEEP_EPSILONS = (0.2, 0.1, 0.05, 0.025, 0.0125)
SWEEP_ALPHAS = (0.25, 0.75)
SWEEP_N = 512


def record(line):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid512():
    return make_grid(1e-5, 40.0, SWEEP_N)


@pytest.fixture(scope="session")
def grid1024():
    return make_grid(1e-5, 40.0, 1024)


@pytest.fixture(scope="session")
def sweep(grid512):
    """Profiles for every (alpha, epsilon) pair plus wall time.

    Returns (solutions, elapsed) where solutions maps (alpha, eps) to the
    ProfileSolution obtained from the exponential initial guess.
    """
    init = exp_profile(grid512)
    opts = SolverOptions(damping=0.25, tol=1e-10)
    solutions = {}
    t0 = time.time()
    for alpha in SWEEP_ALPHAS:
        for eps in SWEEP_EPSILONS:
            spec = KernelSpec(epsilon=eps, alpha=alpha)
            solutions[(alpha, eps)] = solve_profile(spec, opts, init=init)
    return solutions, time.time() - t0


@pytest.fixture(scope="session")
def alt_init_solutions(grid512):
    """Sweep repeats from the steeper initial guess 2 e^{-2x}."""
    init = GridFunction(grid512, 2.0 * np.exp(-2.0 * grid512.nodes))
    opts = SolverOptions(damping=0.25, tol=1e-10)
    out = {}
    for alpha in SWEEP_ALPHAS:
        for eps in (0.1, 0.05):
            spec = KernelSpec(epsilon=eps, alpha=alpha)
            out[(alpha, eps)] = solve_profile(spec, opts, init=init)
    return out
