import numpy as np
import pytest

ACCEPTANCE_LINES = []


def random_channels(rng, nt, k, gains=None):
    h = (rng.standard_normal((nt, k)) + 1j * rng.standard_normal((nt, k))) / np.sqrt(2)
    if gains is not None:
        h = h * np.sqrt(gains)
    return h


def random_pd(rng, n):
    b = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return b @ b.conj().T + n * np.eye(n)


def orthogonal_channels(rng, nt, k, scale=None):
    q, _ = np.linalg.qr(random_channels(rng, nt, k))
    scale = np.ones(k) if scale is None else np.asarray(scale)
    return q * scale


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
