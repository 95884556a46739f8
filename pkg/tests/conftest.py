import numpy as np
import pytest


def spd(rng, scale=0.1, rot_scale=None, n=6):
    """Random SPD 6x6 covariance with translation/rotation scales."""
    rot_scale = scale / 3 if rot_scale is None else rot_scale
    A = rng.normal(size=(n, n))
    d = np.array([scale] * 3 + [rot_scale] * 3)
    C = (A @ A.T / n + np.eye(n)) * np.outer(d, d)
    return 0.5 * (C + C.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed after the run
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
