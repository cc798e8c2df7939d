import numpy as np
import pytest

from cv2x_gbmu.config import ScenarioConfig
from cv2x_gbmu.engine import run_realization
from cv2x_gbmu.regression import fit

# criterion number -> (label, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_run():
    """One default stage-1 realization (seed 7) shared by the whole session."""
    return run_realization(ScenarioConfig())


@pytest.fixture(scope="session")
def fitted_table(default_run):
    samples, _ = default_run
    return fit(samples)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        label, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k}. {label}: {detail}")
