import time

import numpy as np
import pytest

from faithful_mcmc.energy import LogQuadraticEnergy
from faithful_mcmc.exact import enumerate_states, exact_target
from faithful_mcmc.samplers import KernelSpec, make_kernel, random_state, run_chain

BETA = 0.42
LONG_STEPS = 500_000
LONG_SEEDS = (0, 1, 2)
LONG_KERNELS = {
    "pncg+mh": KernelSpec("pncg", alpha=1.0),
    "gwl+mh": KernelSpec("gwl", alpha=1.0),
    "rwm+mh": KernelSpec("rwm"),
    "mucola": KernelSpec("mucola", alpha=1.5, adjusted=False),
}

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy3():
    return LogQuadraticEnergy.cycle(3, BETA)


@pytest.fixture(scope="session")
def toy5():
    return LogQuadraticEnergy.cycle(5, BETA)


@pytest.fixture(scope="session")
def space3(toy3):
    return enumerate_states(toy3.table, 3)


@pytest.fixture(scope="session")
def space5(toy5):
    return enumerate_states(toy5.table, 5)


@pytest.fixture(scope="session")
def pi5(toy5, space5):
    return exact_target(toy5, space5)


@pytest.fixture(scope="session")
def long_traces(toy5):
    """500k-step chains on the N=5 toy for every kernel and seed, with wall time per kernel."""
    traces, seconds = {}, {}
    for label, spec in LONG_KERNELS.items():
        start = time.perf_counter()
        for seed in LONG_SEEDS:
            rng = np.random.default_rng(seed)
            init = random_state(toy5.table, 5, rng)
            traces[label, seed] = run_chain(make_kernel(spec, toy5), init, LONG_STEPS, rng)
        seconds[label] = time.perf_counter() - start
    return traces, seconds
