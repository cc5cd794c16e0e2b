import numpy as np
import pytest


def ar_trajectories(coeffs, n_traj=64, length=6, seed=0):
    """Noiseless AR pairs from many short runs started at random windows."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = coeffs.size - 1
    windows, targets = [], []
    for _ in range(n_traj):
        w = list(rng.uniform(-1.0, 1.0, n))
        for _ in range(length):
            t = coeffs[0] + float(np.dot(coeffs[1:], w))
            windows.append(list(w))
            targets.append(t)
            w = [t] + w[:-1]
    return np.array(windows), np.array(targets)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
