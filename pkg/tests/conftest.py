import numpy as np
import pytest

import sharegame as sg


@pytest.fixture(scope="session")
def spec16():
    return sg.MpcrSpec.purely_congestive(1.6)


@pytest.fixture(scope="session")
def table2_theta():
    return sg.ThetaParams(5.2368, 20.1884, -6.9893, 24.2407)


def make_random_panel(rng, n=4, q=21, periods=4, treatment_start=3,
                      group_id="g", link_prob=0.4):
    """A valid random panel: Bernoulli links, grid contributions."""
    states = []
    for _ in range(periods):
        adj = (rng.random((n, n)) < link_prob).astype(np.int8)
        np.fill_diagonal(adj, 1)
        c = rng.integers(0, q, size=n) / (q - 1)
        states.append((sg.NetworkState(adj), sg.ContributionProfile(c, q=q)))
    return sg.GroupPanel(group_id, treatment_start, tuple(states))


@pytest.fixture
def random_panel_factory():
    return make_random_panel


def state_from_edges(edges, c, n=4, q=21):
    """Build a cross-section from directed (sharer, recipient) pairs."""
    adj = np.eye(n, dtype=np.int8)
    for u, v in edges:
        adj[v, u] = 1
    return sg.NetworkState(adj), sg.ContributionProfile(np.asarray(c, dtype=float), q=q)
