import numpy as np
import pytest

from spatialcox.mcmc.config import PriorConfig
from spatialcox.mcmc.model import ModelState, StageTwoData
from spatialcox.spatial_graph import graph_distance_matrix, lattice_graph
from spatialcox.survival_core import SiteSurvivalData


def random_site(rng, n=12, p=2, ties=True, site_id="s"):
    """Small right-censored site, optionally with tied times."""
    x = rng.normal(size=(n, p))
    t = rng.exponential(1.0, size=n)
    if ties:
        t = np.ceil(t * 4) / 4 + 0.25
    status = (rng.random(n) < 0.75).astype(int)
    status[0] = 1
    return SiteSurvivalData(site_id, t, status, x)


def random_stage_two(rng, n=4, p=3, rows=2, cols=2):
    """Stage-2 data on a small lattice with random SPD stage-1 covariances."""
    g = lattice_graph(rows, cols)
    D = graph_distance_matrix(g)[:n, :n]
    betahat = rng.normal(size=(n, p))
    vhat = np.empty((n, p, p))
    for i in range(n):
        A = rng.normal(size=(p, p)) * 0.3
        vhat[i] = A @ A.T + 0.2 * np.eye(p)
    return StageTwoData(betahat, vhat, D, site_ids=g.site_ids[:n])


def random_state(rng, n, p):
    return ModelState(
        beta=rng.normal(size=(n, p)),
        tau2=float(rng.gamma(2.0, 0.5)),
        lambda2=rng.gamma(2.0, 0.5, size=p),
        nu=rng.gamma(2.0, 0.5, size=p),
        xi=float(rng.gamma(2.0, 0.5)),
        gamma0=rng.gamma(3.0, 0.3, size=p),
        c=rng.integers(0, 2, size=p),
        pi=rng.uniform(0.05, 0.95, size=p),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def loose_prior():
    # a larger nugget keeps the spike covariance well conditioned for
    # density-ratio comparisons at absolute tolerance
    return PriorConfig(nugget=0.05)


# -- acceptance reporting ---------------------------------------------------

_ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
