import numpy as np
import pytest

from ptpi.physics import Eikonal, ADR2D, generate_snapshots
from ptpi.pod import pod_basis
from ptpi.model import Normalization, build_model


def rel_err(a, b, floor=1e-4):
    """Componentwise relative error with an absolute floor on the reference."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))


def central_fd(f, x, h):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2 * step)
    return g


@pytest.fixture(scope="session")
def eikonal_data():
    pr = Eikonal()
    mesh = pr.mesh(30)
    P = 0.1 + 0.01 * np.arange(41)
    return pr, generate_snapshots(pr, P[:, None], [0.0], mesh)


@pytest.fixture(scope="session")
def eikonal_test():
    pr = Eikonal()
    return generate_snapshots(pr, (0.13 + 0.05 * np.arange(18))[:, None], [0.0], pr.mesh(30))


def small_model(problem, n_grid=8, N=3, n=None, hidden=(12, 12), act="elu", seed=0, times=None):
    mesh = problem.mesh(n_grid)
    if problem.stationary:
        params = np.linspace(0.2, 0.6, 6)[:, None]
        times = [0.0]
        lo, hi = [0.1], [1.1]
    else:
        g = np.linspace(1.0, 1.8, 3)
        params = np.array([[a, b] for a in g for b in g])
        times = np.linspace(0.2, 2.0, 4) if times is None else times
        lo, hi = [1.0, 1.0, 0.1], [2.0, 2.0, 2.2]
    data = generate_snapshots(problem, params, times, mesh)
    pod = pod_basis(data.fields, N)
    norm = Normalization(problem.box_lo, problem.box_hi, lo, hi, [np.abs(data.fields).max()])
    n = n if n is not None else problem.p + (0 if problem.stationary else 1)
    model = build_model(pod, mesh, norm, problem.p, problem.stationary, n, list(hidden), list(hidden), act, act, seed)
    return model, data


@pytest.fixture
def eik_small():
    return small_model(Eikonal(), N=2, n=1)


@pytest.fixture
def adr_small():
    return small_model(ADR2D(), N=4)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
