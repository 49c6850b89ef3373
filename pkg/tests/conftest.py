import numpy as np
import pytest

from hybrid_spin import models as md
from hybrid_spin.sphere_grid import SphereGrid

# One "criterion N: PASS|FAIL ..." line per acceptance criterion, echoed in
# the terminal summary.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


def vmf(grid, mu, kappa):
    """von Mises-Fisher density normalized to unit quadrature mass."""
    mu = np.asarray(mu, dtype=float)
    rho = np.exp(kappa * (grid.nodes @ (mu / np.linalg.norm(mu)) - 1.0))
    return rho / grid.integrate(rho)


def smooth_spinor(grid, a=0.8, b=0.5, c=0.7):
    """Normalized spinor field with a smooth, globally defined phase."""
    u = grid.nodes
    th = a * u[..., 0] + b * u[..., 1] * u[..., 2]
    ph = c * u[..., 2]
    return np.stack([np.cos(th / 2), np.sin(th / 2) * np.exp(1j * ph)], axis=-1)


def smooth_density(grid, mu=(1.0, 0.3, 0.2), kappa=2.0):
    return vmf(grid, mu, kappa)


def hybrid_density(grid, **kw):
    return md.density_from_factored(smooth_density(grid), smooth_spinor(grid, **kw))


@pytest.fixture(scope="session")
def grid16():
    return SphereGrid(16, 32)


@pytest.fixture(scope="session")
def grid32():
    return SphereGrid(32, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
