"""Choice-set enumeration and potential evaluation over full choice sets.

A player's choice set is {0,1}^(n-1) link vectors times the q-point
contribution grid.  Because the potential is linear in the contribution,
phi(L, c) = c * psi(L), where psi collapses the link set to a scalar given
the player's information.  Everything downstream (sampling, likelihoods,
stability) reduces to cheap table lookups over psi.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .core import InfoSet, MpcrSpec, PlayerCovariates, Regime, ThetaParams, \
    contribution_grid, effective_coefficients
from .errors import DomainError, NumericError

MAX_ENUM_OTHERS = 23


@lru_cache(maxsize=None)
def link_table(n_others: int):
    """All 2^n_others link vectors: bit k of row index = link to other k.

    Returns (matrix, degrees): a (2^n_others, n_others) 0/1 float matrix
    and the row-wise link counts.
    """
    if not 1 <= n_others <= MAX_ENUM_OTHERS:
        raise DomainError(f"link enumeration supports 1..{MAX_ENUM_OTHERS} others, got {n_others}")
    count = 1 << n_others
    idx = np.arange(count, dtype=np.uint32)
    matrix = ((idx[:, None] >> np.arange(n_others)) & 1).astype(np.float64)
    degrees = matrix.sum(axis=1).astype(np.int64)
    matrix.setflags(write=False)
    degrees.setflags(write=False)
    return matrix, degrees


def link_index(out_links) -> int:
    """Row of ``link_table`` corresponding to a 0/1 link vector."""
    bits = np.asarray(out_links).astype(np.int64)
    return int(bits @ (1 << np.arange(bits.shape[0], dtype=np.int64)))


def psi_over_link_sets(
    info: InfoSet,
    treat: int,
    theta: ThetaParams,
    spec: MpcrSpec,
    n: int,
    x_i: Optional[PlayerCovariates] = None,
) -> np.ndarray:
    """psi(L) = phi(L, c)/c for every link set L, given one info set."""
    cost_w, gen_w, dir_w = effective_coefficients(theta, treat, x_i)
    matrix, degrees = link_table(n - 1)
    m = spec.m_table(n - 1)[degrees]
    psi = cost_w * (m - 1.0)
    psi += gen_w / (n - 1) ** 2 * degrees * m * info.incoming_total
    if info.incoming_by_sender is not None and dir_w != 0.0:
        psi += dir_w / (n - 1) * m * (matrix @ info.incoming_by_sender)
    return psi


@dataclass(frozen=True)
class ChoiceDistribution:
    """Logit-response probabilities over {0,1}^(n-1) x contribution grid.

    ``probs[b, k]`` is the probability of link-set row ``b`` (see
    ``link_table``) combined with grid point ``k``.
    """

    probs: np.ndarray
    grid: np.ndarray

    @property
    def n_link_sets(self) -> int:
        return self.probs.shape[0]

    @property
    def q(self) -> int:
        return self.probs.shape[1]

    def flat(self) -> np.ndarray:
        return self.probs.reshape(-1)

    def prob_of(self, out_links, c: float) -> float:
        k = int(round(c * (self.q - 1)))
        return float(self.probs[link_index(out_links), k])

    def argmax(self) -> tuple:
        b, k = np.unravel_index(np.argmax(self.probs), self.probs.shape)
        n_others = int(np.log2(self.n_link_sets))
        links = (int(b) >> np.arange(n_others)) & 1
        return links.astype(np.int8), float(self.grid[k])

    def sample(self, rng: np.random.Generator) -> tuple:
        flat = self.flat()
        pick = int(rng.choice(flat.shape[0], p=flat))
        b, k = divmod(pick, self.q)
        n_others = int(np.log2(self.n_link_sets))
        links = (b >> np.arange(n_others)) & 1
        return links.astype(np.int8), float(self.grid[k])


def choice_distribution(
    info: InfoSet,
    treat: int,
    theta: ThetaParams,
    spec: MpcrSpec,
    n: int,
    q: int,
    x_i: Optional[PlayerCovariates] = None,
) -> ChoiceDistribution:
    """Exact per-player logit choice probabilities, max-shifted for safety."""
    if treat and info.regime is not Regime.TREATMENT:
        raise DomainError("treat=1 requires a treatment-regime info set")
    psi = psi_over_link_sets(info, treat, theta, spec, n, x_i)
    grid = contribution_grid(q)
    utilities = psi[:, None] * grid[None, :]
    if not np.isfinite(utilities).all():
        b, k = np.argwhere(~np.isfinite(utilities))[0]
        raise NumericError(
            f"non-finite potential at link set {b:b} and contribution {grid[k]}"
        )
    shifted = utilities - utilities.max()
    weights = np.exp(shifted)
    probs = weights / weights.sum()
    return ChoiceDistribution(probs=probs, grid=grid)
