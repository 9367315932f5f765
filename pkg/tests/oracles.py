"""Brute-force reference implementations used to pin the fast paths.

Everything here enumerates choice sets explicitly and goes through the
scalar ``potential`` function, deliberately avoiding the vectorized
feature machinery it is used to check.
"""

import itertools

import numpy as np

import sharegame as sg
from sharegame.core import contribution_grid, info_sets_from_state


def _decision_context(panel, spec):
    """Yield (info, treat, observed links, observed c, player) per decision."""
    for t in range(2, panel.periods + 1):
        regime = panel.regime(t)
        infos = info_sets_from_state(*panel.state(t - 1), spec, regime)
        treat = 1 if regime is sg.Regime.TREATMENT else 0
        net, contrib = panel.state(t)
        for i in range(panel.n):
            x_i = panel.covariates[i] if panel.covariates is not None else None
            yield infos[i], treat, net.out_links(i), float(contrib.c[i]), x_i


def loglik_oracle(panels, theta, spec, q):
    """Full log-likelihood by independent re-enumeration of every choice set."""
    grid = contribution_grid(q)
    total = 0.0
    for panel in panels:
        n = panel.n
        for info, treat, links, c_obs, x_i in _decision_context(panel, spec):
            phis = np.array([
                sg.potential(list(alt), c, info, treat, theta, spec, x_i)
                for alt in itertools.product([0, 1], repeat=n - 1)
                for c in grid
            ])
            observed = sg.potential(list(links), c_obs, info, treat, theta, spec, x_i)
            peak = phis.max()
            total += observed - (peak + np.log(np.exp(phis - peak).sum()))
    return total


def pseudo_loglik_oracle(panels, theta, spec, q):
    """Pseudolikelihood by direct enumeration of each conditional."""
    grid = contribution_grid(q)
    total = 0.0
    for panel in panels:
        n = panel.n
        for info, treat, links, c_obs, x_i in _decision_context(panel, spec):
            phis_c = np.array([
                sg.potential(list(links), c, info, treat, theta, spec, x_i)
                for c in grid
            ])
            observed = sg.potential(list(links), c_obs, info, treat, theta, spec, x_i)
            peak = phis_c.max()
            total += observed - (peak + np.log(np.exp(phis_c - peak).sum()))
            for j in range(n - 1):
                on = list(links)
                off = list(links)
                on[j], off[j] = 1, 0
                phi_on = sg.potential(on, c_obs, info, treat, theta, spec, x_i)
                phi_off = sg.potential(off, c_obs, info, treat, theta, spec, x_i)
                phi_obs = phi_on if links[j] else phi_off
                total += phi_obs - np.logaddexp(phi_on, phi_off)
    return total


def choice_probabilities_oracle(info, treat, theta, spec, n, q, x_i=None):
    """Exact per-choice probabilities via scalar potential evaluation.

    Rows follow the package's link-set indexing (bit k of the row index is
    the link to other player k).
    """
    grid = contribution_grid(q)
    table = np.empty((2 ** (n - 1), q))
    for alt in itertools.product([0, 1], repeat=n - 1):
        links = list(alt)
        row = sum(bit << k for k, bit in enumerate(links))
        for kk, c in enumerate(grid):
            table[row, kk] = sg.potential(links, c, info, treat, theta, spec, x_i)
    table = np.exp(table - table.max())
    return table / table.sum()
