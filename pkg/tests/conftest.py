import numpy as np
import pytest

from statfem.mesh import Mesh, make_bar_mesh


def grid_mesh(nx=3, ny=2, lx=2.0, ly=1.0, jitter=0.0, seed=0, dirichlet="clamp_left", neumann=None):
    """Structured quad mesh of ``[0, lx] x [0, ly]`` with optional interior node jitter."""
    xs, ys = np.linspace(0, lx, nx + 1), np.linspace(0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    if jitter:
        rng = np.random.default_rng(seed)
        interior = (nodes[:, 0] > 0) & (nodes[:, 0] < lx) & (nodes[:, 1] > 0) & (nodes[:, 1] < ly)
        h = min(lx / nx, ly / ny)
        nodes[interior] += rng.uniform(-jitter * h, jitter * h, (interior.sum(), 2))
    nid = lambda i, j: j * (nx + 1) + i
    elements = [[nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)]
                for j in range(ny) for i in range(nx)]
    dir_ = []
    if dirichlet == "clamp_left":
        left = [nid(0, j) for j in range(ny + 1)]
        dir_ = [(n, 0, 0.0) for n in left] + [(nid(0, 0), 1, 0.0)]
    elif dirichlet is not None:
        dir_ = dirichlet
    return Mesh(nodes, elements, dirichlet=dir_, neumann=neumann or [])


def right_edge_traction(nx, ny, tx, ty=0.0):
    """Neumann records loading the ``x = lx`` edge (local edge 1) of a :func:`grid_mesh`."""
    return [(j * nx + nx - 1, 1, (tx, ty)) for j in range(ny)]


@pytest.fixture
def bar_mesh():
    """The reference bar: L = 100 mm, A = 20 mm^2, F = 800 kN, 10 elements."""
    return make_bar_mesh(100.0, 10, area=20.0, tip_traction=800.0 / 20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
