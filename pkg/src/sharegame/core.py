"""Domain types and payoff machinery for the voluntary resource-sharing game.

Each of ``n`` players simultaneously picks a contribution level on a grid
in [0, 1] and a set of recipients among the other players.  A contributed
unit is scaled by a marginal-per-capita-return (MPCR) factor that depends
on the contributor's out-degree, and the proceeds are split between the
contributor and her chosen recipients.  Utility adds reciprocity terms on
top of the monetary payoff; the *individual potential* strips the part of
the payoff the player cannot influence, and is what the logit-response
dynamics and the likelihoods evaluate.

Orientation convention used throughout: ``adj[i][j] = 1`` means player
``j`` shares with player ``i`` (row = receiver, column = sender), and the
diagonal is fixed to 1.  Player ``i``'s own decision is column ``i``.
For per-player vectors over "the other players", others are ordered by
ascending player index with ``i`` removed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

MAX_PLAYERS = 24

#: Flat parameter vector layout, in the order used by every estimator and
#: report: the four base coefficients followed by the heterogeneity
#: interaction blocks (each block is trust, rec1, rec2).
PARAM_NAMES = (
    "cost_weight",
    "gen_reciprocity",
    "treat_gen_reciprocity",
    "treat_dir_reciprocity",
)
HET_BLOCKS = ("cost", "treat_dir", "gen", "treat_gen")
COVARIATE_NAMES = ("trust", "rec1", "rec2")
HET_PARAM_NAMES = tuple(
    f"het_{block}_{cov}" for block in HET_BLOCKS for cov in COVARIATE_NAMES
)


class Regime(enum.Enum):
    """Information regime of a period."""

    BASELINE = "baseline"
    TREATMENT = "treatment"


def contribution_grid(q: int) -> np.ndarray:
    """Equally spaced contribution grid 0, 1/(q-1), ..., 1."""
    if q < 2:
        raise DomainError(f"contribution grid needs q >= 2, got {q}")
    return np.linspace(0.0, 1.0, q)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NetworkState:
    """An n-by-n binary adjacency snapshot with mandatory self-links.

    ``adj[i][j] = 1`` means sender ``j`` shares with receiver ``i``.
    """

    adj: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adj, dtype=np.int8)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise DomainError(f"adjacency must be square, got shape {adj.shape}")
        n = adj.shape[0]
        if not 2 <= n <= MAX_PLAYERS:
            raise DomainError(f"player count must lie in [2, {MAX_PLAYERS}], got {n}")
        if not np.all(np.diag(adj) == 1):
            raise DomainError("self-links are mandatory: diagonal must be all ones")
        off = adj[~np.eye(n, dtype=bool)]
        if not np.isin(off, (0, 1)).all():
            raise DomainError("off-diagonal adjacency entries must be 0 or 1")
        object.__setattr__(self, "adj", _freeze(adj))

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    def out_degrees(self) -> np.ndarray:
        """Number of recipients each player shares with (self excluded)."""
        return self.adj.sum(axis=0) - 1

    def in_degrees(self) -> np.ndarray:
        return self.adj.sum(axis=1) - 1

    def out_links(self, i: int) -> np.ndarray:
        """Player ``i``'s link choices over the other players, in others-order."""
        col = np.delete(self.adj[:, i], i)
        return col.astype(np.int8)

    @classmethod
    def from_out_links(cls, links: Sequence[Sequence[int]]) -> "NetworkState":
        """Build a state from per-player link vectors (each length n-1)."""
        n = len(links)
        adj = np.eye(n, dtype=np.int8)
        for i, row in enumerate(links):
            row = np.asarray(row)
            if row.shape != (n - 1,):
                raise DomainError(
                    f"player {i}: expected {n - 1} link entries, got {row.shape}"
                )
            others = [j for j in range(n) if j != i]
            adj[others, i] = row
        return cls(adj)

    @classmethod
    def empty(cls, n: int) -> "NetworkState":
        return cls(np.eye(n, dtype=np.int8))

    @classmethod
    def complete(cls, n: int) -> "NetworkState":
        return cls(np.ones((n, n), dtype=np.int8))


@dataclass(frozen=True)
class ContributionProfile:
    """Normalized contributions, each on the grid k/(q-1) for k in 0..q-1."""

    c: np.ndarray
    q: int = 21

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        if c.ndim != 1:
            raise DomainError("contributions must be a 1-d vector")
        if self.q < 2:
            raise DomainError(f"grid size must be >= 2, got {self.q}")
        if np.any(c < 0) or np.any(c > 1):
            raise DomainError("contributions must lie in [0, 1]")
        steps = c * (self.q - 1)
        if not np.allclose(steps, np.round(steps), atol=1e-9):
            raise DomainError("contributions must lie exactly on the grid")
        object.__setattr__(self, "c", _freeze(np.round(steps) / (self.q - 1)))

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def tokens(self) -> np.ndarray:
        """Integer grid indices (0..q-1); equals tokens out of 20 when q=21."""
        return np.round(self.c * (self.q - 1)).astype(int)

    @classmethod
    def from_tokens(cls, tokens: Sequence[int], q: int = 21) -> "ContributionProfile":
        tokens = np.asarray(tokens)
        return cls(tokens / (q - 1), q=q)


@dataclass(frozen=True)
class MpcrSpec:
    """Marginal-per-capita-return family m(d) over out-degrees d.

    ``m(0) = 1`` always, and ``m(d) < 1`` for d >= 1, so efficiency gains
    require sharing with somebody.  ``kind`` selects the congestion class:

    - ``pure``: m(d) = k / (d + 1) with 1 < k < 2 (the experiment uses 1.6)
    - ``sub``: m(d) = k(d) / (d + 1) with k strictly decreasing
    - ``super``: m(d) = k(d) / (d + 1) with k strictly increasing
    - ``flat``: m identically equal to ``k`` (test hook; bypasses the
      m(0) = 1 requirement so likelihood factorization can be exercised)
    """

    kind: str = "pure"
    k: float = 1.6
    k_table: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "pure":
            if not 1.0 < self.k < 2.0:
                raise DomainError(f"purely congestive k must be in (1, 2), got {self.k}")
        elif self.kind in ("sub", "super"):
            if not self.k_table:
                raise DomainError(f"{self.kind}congestive spec needs a k table")
            table = tuple(float(v) for v in self.k_table)
            diffs = np.diff(table)
            if self.kind == "sub":
                if len(table) > 1 and not np.all(diffs < 0):
                    raise DomainError("subcongestive k(d) must be strictly decreasing")
                if not 1.0 < table[0] < 2.0:
                    raise DomainError(f"subcongestive k(1) must be in (1, 2), got {table[0]}")
            else:
                if len(table) > 1 and not np.all(diffs > 0):
                    raise DomainError("supercongestive k(d) must be strictly increasing")
            for d, kd in enumerate(table, start=1):
                if not 1.0 < kd < d + 1:
                    raise DomainError(
                        f"k({d}) = {kd} violates 1 < k(d) < d+1 (needed for m(d) < 1)"
                    )
            object.__setattr__(self, "k_table", table)
        elif self.kind == "flat":
            if not 0.0 < self.k <= 1.0:
                raise DomainError(f"flat MPCR value must be in (0, 1], got {self.k}")
        else:
            raise DomainError(f"unknown MPCR kind {self.kind!r}")

    @classmethod
    def purely_congestive(cls, k: float = 1.6) -> "MpcrSpec":
        return cls(kind="pure", k=k)

    @classmethod
    def subcongestive(cls, k_table: Sequence[float]) -> "MpcrSpec":
        return cls(kind="sub", k=float(k_table[0]), k_table=tuple(k_table))

    @classmethod
    def supercongestive(cls, k_table: Sequence[float]) -> "MpcrSpec":
        return cls(kind="super", k=float(k_table[0]), k_table=tuple(k_table))

    @classmethod
    def flat(cls, value: float) -> "MpcrSpec":
        return cls(kind="flat", k=value)

    def max_degree(self) -> int:
        if self.kind in ("sub", "super"):
            return len(self.k_table)
        return MAX_PLAYERS - 1

    def m(self, d: int) -> float:
        """Return fraction per recipient (and contributor) at out-degree d."""
        if d < 0 or d > self.max_degree():
            raise DomainError(f"out-degree {d} outside [0, {self.max_degree()}]")
        if self.kind == "flat":
            return self.k
        if d == 0:
            return 1.0
        if self.kind == "pure":
            return self.k / (d + 1)
        return self.k_table[d - 1] / (d + 1)

    def m_table(self, max_d: int) -> np.ndarray:
        """m(0..max_d) as a vector, for vectorized evaluation."""
        return np.array([self.m(d) for d in range(max_d + 1)])

    def k_effective(self, d: int) -> float:
        """Total efficiency multiplier m(d) * (d + 1) of a contributed unit."""
        return self.m(d) * (d + 1)


@dataclass(frozen=True)
class ThetaParams:
    """Structural preference parameters.

    The four base coefficients weight the contribution cost, generalized
    reciprocity, its treatment shift, and treatment-only direct
    reciprocity.  Optional heterogeneity blocks add per-covariate shifts
    to each of those effects (covariate order: trust, rec1, rec2).
    """

    cost_weight: float = 0.0
    gen_reciprocity: float = 0.0
    treat_gen_reciprocity: float = 0.0
    treat_dir_reciprocity: float = 0.0
    het_cost: Optional[np.ndarray] = None
    het_treat_dir: Optional[np.ndarray] = None
    het_gen: Optional[np.ndarray] = None
    het_treat_gen: Optional[np.ndarray] = None

    def __post_init__(self):
        base = [self.cost_weight, self.gen_reciprocity,
                self.treat_gen_reciprocity, self.treat_dir_reciprocity]
        if not all(math.isfinite(v) for v in base):
            raise DomainError("theta components must be finite")
        blocks = [self.het_cost, self.het_treat_dir, self.het_gen, self.het_treat_gen]
        present = [b is not None for b in blocks]
        if any(present) and not all(present):
            raise ConfigurationError("heterogeneity block must be absent or complete")
        if all(present):
            for name, block in zip(HET_BLOCKS, blocks):
                block = np.asarray(block, dtype=np.float64)
                if block.shape != (3,):
                    raise DomainError(f"het_{name} must have 3 entries (trust, rec1, rec2)")
                if not np.isfinite(block).all():
                    raise DomainError(f"het_{name} must be finite")
                object.__setattr__(self, f"het_{name}", _freeze(block))

    @property
    def has_het(self) -> bool:
        return self.het_cost is not None

    def flat(self) -> np.ndarray:
        """Parameter vector in PARAM_NAMES (+ HET_PARAM_NAMES) order."""
        base = [self.cost_weight, self.gen_reciprocity,
                self.treat_gen_reciprocity, self.treat_dir_reciprocity]
        if not self.has_het:
            return np.array(base)
        return np.concatenate([base, self.het_cost, self.het_treat_dir,
                               self.het_gen, self.het_treat_gen])

    @classmethod
    def from_flat(cls, vec: Sequence[float]) -> "ThetaParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape == (4,):
            return cls(*vec)
        if vec.shape == (16,):
            return cls(*vec[:4], het_cost=vec[4:7], het_treat_dir=vec[7:10],
                       het_gen=vec[10:13], het_treat_gen=vec[13:16])
        raise DomainError(f"expected 4 or 16 parameters, got {vec.shape}")

    def names(self) -> tuple:
        return PARAM_NAMES + HET_PARAM_NAMES if self.has_het else PARAM_NAMES


@dataclass(frozen=True)
class PlayerCovariates:
    """Observed heterogeneity: trust score and two reciprocity PC scores."""

    trust: float
    rec1: float
    rec2: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.trust, self.rec1, self.rec2)):
            raise DomainError("covariates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.trust, self.rec1, self.rec2])


@dataclass(frozen=True)
class InfoSet:
    """What one player observed about the previous period.

    Under the baseline regime only the total incoming benefit is known;
    under the treatment regime the per-sender decomposition (in
    others-order) is also available and must sum to the total.
    """

    regime: Regime
    incoming_total: float
    incoming_by_sender: Optional[np.ndarray] = None

    def __post_init__(self):
        if not math.isfinite(self.incoming_total) or self.incoming_total < 0:
            raise DomainError("incoming_total must be finite and non-negative")
        if self.regime is Regime.TREATMENT:
            if self.incoming_by_sender is None:
                raise DomainError("treatment info set requires incoming_by_sender")
            v = np.asarray(self.incoming_by_sender, dtype=np.float64)
            if not np.isfinite(v).all() or np.any(v < 0):
                raise DomainError("incoming_by_sender must be finite and non-negative")
            if abs(v.sum() - self.incoming_total) > 1e-12:
                raise DomainError(
                    "incoming_by_sender must sum to incoming_total within 1e-12"
                )
            object.__setattr__(self, "incoming_by_sender", _freeze(v))
        elif self.incoming_by_sender is not None:
            raise DomainError("baseline info set must not carry per-sender amounts")


def mpcr(spec: MpcrSpec, d: int) -> float:
    """Return fraction m(d) for out-degree d under the given MPCR family."""
    return spec.m(d)


def payoff(net: NetworkState, contrib: ContributionProfile, spec: MpcrSpec, i: int) -> float:
    """Net monetary payoff of player i: incoming benefits minus contribution.

    The own-contribution return is included (the diagonal self-link), so
    total earnings equal the endowment plus this value.
    """
    _check_player(net, contrib, i)
    m = spec.m_table(net.n - 1)
    out_deg = net.out_degrees()
    return float(net.adj[i] @ (contrib.c * m[out_deg]) - contrib.c[i])


def externality(net: NetworkState, contrib: ContributionProfile, spec: MpcrSpec, i: int) -> float:
    """Incoming benefit from others only; the part i's own choice cannot move."""
    _check_player(net, contrib, i)
    m = spec.m_table(net.n - 1)
    out_deg = net.out_degrees()
    flows = net.adj[i] * contrib.c * m[out_deg]
    return float(flows.sum() - flows[i])


def _check_player(net: NetworkState, contrib: ContributionProfile, i: int):
    if contrib.n != net.n:
        raise DomainError("network and contribution sizes disagree")
    if not 0 <= i < net.n:
        raise DomainError(f"player index {i} out of range for n={net.n}")


def effective_coefficients(
    theta: ThetaParams, treat: int, x_i: Optional[PlayerCovariates]
) -> tuple:
    """(cost, generalized, direct) coefficient triple for one player.

    Heterogeneity enters as additive shifts; the treatment dummy folds the
    treatment interactions into the generalized and direct coefficients.
    """
    if theta.has_het:
        if x_i is None:
            raise ConfigurationError(
                "theta carries heterogeneity blocks but player covariates are missing"
            )
        x = x_i.as_array()
        cost = theta.cost_weight + float(theta.het_cost @ x)
        gen = theta.gen_reciprocity + float(theta.het_gen @ x)
        tgen = theta.treat_gen_reciprocity + float(theta.het_treat_gen @ x)
        tdir = theta.treat_dir_reciprocity + float(theta.het_treat_dir @ x)
    else:
        cost, gen = theta.cost_weight, theta.gen_reciprocity
        tgen, tdir = theta.treat_gen_reciprocity, theta.treat_dir_reciprocity
    t = 1 if treat else 0
    return cost, gen + t * tgen, t * tdir


def behavioral_beta(
    out_links: Sequence[int],
    c_i: float,
    info: InfoSet,
    treat: int,
    theta: ThetaParams,
    spec: MpcrSpec,
    x_i: Optional[PlayerCovariates] = None,
) -> float:
    """Reciprocity utility of one player's (links, contribution) choice.

    Generalized part: current total benefit dispensed to others times the
    lagged total benefit received, scaled by 1/(n-1)^2.  Direct part
    (treatment only): the dispensed per-recipient benefit times the lagged
    per-sender inflow, summed over currently chosen recipients, scaled by
    1/(n-1).
    """
    links = np.asarray(out_links)
    n = links.shape[0] + 1
    if treat and info.regime is not Regime.TREATMENT:
        raise DomainError("treat=1 requires a treatment-regime info set")
    _, gen_w, dir_w = effective_coefficients(theta, treat, x_i)
    d = int(links.sum())
    m_d = spec.m(d)
    out_total = d * m_d * c_i
    gen = gen_w / (n - 1) ** 2 * out_total * info.incoming_total
    if info.incoming_by_sender is None:
        return gen
    reciprocated = float(links @ info.incoming_by_sender)
    direct = dir_w / (n - 1) * m_d * c_i * reciprocated
    return gen + direct


def potential(
    out_links: Sequence[int],
    c_i: float,
    info: InfoSet,
    treat: int,
    theta: ThetaParams,
    spec: MpcrSpec,
    x_i: Optional[PlayerCovariates] = None,
) -> float:
    """Individual potential: cost-weighted net own return plus reciprocity.

    Equals the utility with the uncontrollable externality stripped out;
    linear in ``c_i`` holding links and information fixed.
    """
    links = np.asarray(out_links)
    cost_w, _, _ = effective_coefficients(theta, treat, x_i)
    d = int(links.sum())
    own = cost_w * (spec.m(d) - 1.0) * c_i
    return own + behavioral_beta(out_links, c_i, info, treat, theta, spec, x_i)


def incoming_flows(net: NetworkState, contrib: ContributionProfile, spec: MpcrSpec) -> np.ndarray:
    """Matrix of benefit flows: entry (i, j) is what j sends to i (j != i)."""
    m = spec.m_table(net.n - 1)
    rates = contrib.c * m[net.out_degrees()]
    flows = net.adj * rates[np.newaxis, :]
    np.fill_diagonal(flows, 0.0)
    return flows


def info_sets_from_state(
    net: NetworkState, contrib: ContributionProfile, spec: MpcrSpec, regime: Regime
) -> list:
    """Per-player info sets derived from one realized cross-section.

    Used with the previous period's state for the play dynamics, or with
    the current state for steady-state stability checks.
    """
    flows = incoming_flows(net, contrib, spec)
    out = []
    for i in range(net.n):
        total = float(flows[i].sum())
        if regime is Regime.TREATMENT:
            by_sender = np.delete(flows[i], i)
            # guard against rounding drift between the sum and its parts
            total = float(by_sender.sum())
            out.append(InfoSet(regime, total, by_sender))
        else:
            out.append(InfoSet(regime, total))
    return out
