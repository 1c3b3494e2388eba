import numpy as np
import pytest

from clcalib import copula, harness
from clcalib.posterior import ChainConfig

ACCEPTANCE_LINES = []

STUDY_METHODS = ["none", "curvature-zca", "magnitude-omnibus", "magnitude-targeted"]
STUDY_SEED = 20261016


def record_acceptance(criterion: str, passed: bool, detail: str):
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def clayton_study():
    """200 replications at Clayton tau = 0.9, phase 2, theta' with default harness sizes."""
    sizes = copula.default_sizes(15, 20240601)
    setting = copula.SimSetting("clayton", 0.9, 2, sizes, "prime")
    grid = [harness.GridSetting("clayton-t0.9-p2-prime", setting)]
    records = harness.run_study(grid, STUDY_METHODS, 200, chain=ChainConfig(), master_seed=STUDY_SEED)
    return records
