import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from neoseize import eeg_io, pipeline  # noqa: E402


@pytest.fixture(scope="session")
def small_cfg():
    return eeg_io.SynthConfig(n_subjects=3, duration_s=600, seizure_events=(2, 3),
                              seizure_duration_s=(40, 90), rng_seed=11)


@pytest.fixture(scope="session")
def small_subjects(small_cfg):
    return [pipeline.prepare_subject(*eeg_io.generate_synthetic_subject(small_cfg, k))
            for k in range(small_cfg.n_subjects)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    def _report(number, passed, detail):
        line = f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
