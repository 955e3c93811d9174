import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ccf.objective import make_problem, target_matrix  # noqa: E402
from ccf.panel import lag_rows  # noqa: E402


def ar_panel(rng, T, m, phi=0.5):
    """Stationary AR(1) columns with unit-variance innovations."""
    z = np.zeros((T + 50, m))
    e = rng.standard_normal((T + 50, m))
    for t in range(1, T + 50):
        z[t] = phi * z[t - 1] + e[t]
    return z[50:]


def random_problem(rng, T=60, m=3, q=2, c=1, k=1, h=1, loss="g1", lam=0.0):
    z = ar_panel(rng, T, m)
    y = z[:, :1] @ rng.standard_normal((1, q)) + rng.standard_normal((T, q))
    return make_problem(z, target_matrix(y, h), c, k, h=h, loss=loss, lam=lam)


def noiseless(rng, T=120, m=4, q=3, c=1, k=1, h=1):
    """Panel and targets satisfying ``y_{t+h} = Gamma0 F_t(beta0)`` exactly."""
    z = ar_panel(rng, T, m)
    p = m * (c + 1)
    beta0 = rng.standard_normal(p)
    beta0 /= np.linalg.norm(beta0)
    i = np.argmax(np.abs(beta0))
    beta0 *= np.sign(beta0[i])
    gamma0 = rng.standard_normal((q, k + 1))
    f = np.full(T, np.nan)
    f[c:] = lag_rows(z, c, c, T) @ beta0
    y = np.zeros((T, q))
    for t in range(c + k, T - h):
        y[t + h] = gamma0 @ f[t - np.arange(k + 1)]
    return z, y, beta0, gamma0


def angle(a, b):
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return float(np.arccos(min(1.0, abs(float(a @ b)))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------ acceptance reporting

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


class _Criterion:
    def __init__(self, store, number, title):
        self.store, self.number, self.title, self.detail = store, number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        note = self.detail if exc_type is None else f"{self.detail} {exc_type.__name__}: {exc}".strip()
        self.store[self.number] = f"criterion {self.number:>2} {status}: {self.title}" + (f" ({note})" if note else "")
        return False


@pytest.fixture
def criterion(request):
    store = request.config.stash[_RESULTS]

    def make(number, title):
        return _Criterion(store, number, title)
    return make


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key].splitlines()[0][:400])
