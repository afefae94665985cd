import numpy as np
import pytest

from constrained_node import autodiff as ad


def central_fd(fn, x, eps=1e-6):
    """Central finite-difference gradient of a scalar function of a flat array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        g.flat[i] = (fn(xp) - fn(xm)) / (2 * eps)
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


class ConstantField:
    """1-parameter model dy/dt = theta. Solved from y0=0 over (0, 1), y(1) = theta."""

    state_dim = 1
    n_params = 1

    def __init__(self, theta0=0.0):
        self.theta = np.array([float(theta0)])

    def bind(self, params=None):
        params = ad.Tensor(self.theta) if params is None else ad.as_tensor(params)

        def f(t, y):
            return params

        f.state_dim = 1
        return f

    def with_params(self, theta):
        return ConstantField(np.asarray(theta).reshape(-1)[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines, repeated at the end of the pytest run
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split()[0])):
        terminalreporter.write_line(line)
