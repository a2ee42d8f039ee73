import numpy as np
import pytest

from loadhmm.model import init_model

ACCEPTANCE_LINES = []


def random_spd(rng, n, floor=0.1):
    A = rng.normal(size=(n, n))
    return A @ A.T / n + floor * np.eye(n)


def random_bank(rng, K, R, C=2, scale=1.0):
    """Bank with random means and well-conditioned SPD covariances."""
    bank = init_model(K, R, C)
    for c in range(C):
        M_s = rng.normal(scale=0.5, size=(K, K + 1))
        M_s[:, 1:] *= 0.8 / max(1.0, np.abs(np.linalg.eigvals(M_s[:, 1:])).max())
        bank.transition.M[c] = M_s
        bank.observation.M[c] = rng.normal(size=(K, K * R))
        bank.transition.Sigma[c] = scale * random_spd(rng, K)
        bank.observation.Sigma[c] = scale * random_spd(rng, K)
    return bank


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
