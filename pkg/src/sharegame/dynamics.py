"""Forward simulation of the sharing game under logit-response dynamics.

Each revising player draws a (link set, contribution) pair with
probability proportional to exp(potential), conditioning on what she
observed about the previous period.  Small networks use exact enumeration
of the choice set; larger ones use a per-player Metropolis chain targeting
the same distribution.  Group simulations draw from per-group child seeds
so panels are reproducible regardless of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np

from .choices import choice_distribution, link_table
from .core import (
    ContributionProfile,
    InfoSet,
    MpcrSpec,
    NetworkState,
    PlayerCovariates,
    Regime,
    ThetaParams,
    contribution_grid,
    info_sets_from_state,
)
from .errors import ConfigurationError, DomainError

EXACT_SAMPLER_MAX_N = 16
DEFAULT_MH_SWEEPS = 5000


@dataclass(frozen=True)
class GroupPanel:
    """One group's time series of network and contribution snapshots.

    ``states[t-1]`` holds period ``t`` (periods are 1-based throughout).
    ``treatment_start`` is the first treated period, 0 for never-treated
    groups.
    """

    group_id: str
    treatment_start: int
    states: Tuple[Tuple[NetworkState, ContributionProfile], ...]
    covariates: Optional[Tuple[PlayerCovariates, ...]] = None

    def __post_init__(self):
        if not self.states:
            raise DomainError("a panel needs at least one period")
        n = self.states[0][0].n
        q = self.states[0][1].q
        for net, contrib in self.states:
            if net.n != n or contrib.n != n or contrib.q != q:
                raise DomainError("all periods of a panel must share n and q")
        if not 0 <= self.treatment_start <= self.periods + 1:
            raise DomainError(
                f"treatment_start {self.treatment_start} outside [0, T+1]"
            )
        if self.covariates is not None and len(self.covariates) != n:
            raise DomainError("covariates must be given for every player")
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def n(self) -> int:
        return self.states[0][0].n

    @property
    def q(self) -> int:
        return self.states[0][1].q

    @property
    def periods(self) -> int:
        return len(self.states)

    @property
    def is_treatment(self) -> bool:
        return self.treatment_start > 0

    def regime(self, period: int) -> Regime:
        if not 1 <= period <= self.periods:
            raise DomainError(f"period {period} outside 1..{self.periods}")
        if self.is_treatment and period >= self.treatment_start:
            return Regime.TREATMENT
        return Regime.BASELINE

    def state(self, period: int) -> Tuple[NetworkState, ContributionProfile]:
        return self.states[period - 1]


@dataclass(frozen=True)
class GroupDesign:
    """Shape of one group's observation, used to replicate a dataset."""

    group_id: str
    n: int
    periods: int
    treatment_start: int
    covariates: Optional[Tuple[PlayerCovariates, ...]] = None


def design_of(panels: Sequence[GroupPanel]) -> list:
    return [
        GroupDesign(p.group_id, p.n, p.periods, p.treatment_start, p.covariates)
        for p in panels
    ]


@dataclass(frozen=True)
class SimConfig:
    """Configuration of a synthetic experiment."""

    theta: ThetaParams
    n_groups: int = 46
    n_treatment_groups: int = 28
    n: int = 4
    periods: int = 30
    treatment_start: int = 16
    q: int = 21
    spec: MpcrSpec = MpcrSpec.purely_congestive(1.6)
    seed: int = 0
    initial_rule: str = "logit"
    revision: Optional[Tuple[int, ...]] = None
    covariate_rule: str = "none"
    mh_sweeps: int = DEFAULT_MH_SWEEPS

    def __post_init__(self):
        if self.n_treatment_groups > self.n_groups:
            raise ConfigurationError("n_treatment_groups cannot exceed n_groups")
        if self.periods < 1:
            raise ConfigurationError("periods must be >= 1")
        if not 0 <= self.treatment_start <= self.periods + 1:
            raise ConfigurationError("treatment_start must lie in [0, periods + 1]")
        if self.initial_rule not in ("logit", "empty"):
            raise ConfigurationError(f"unknown initial rule {self.initial_rule!r}")
        if self.covariate_rule not in ("none", "standard_normal"):
            raise ConfigurationError(f"unknown covariate rule {self.covariate_rule!r}")
        if self.revision is not None:
            rev = tuple(sorted(set(int(i) for i in self.revision)))
            if rev and (rev[0] < 0 or rev[-1] >= self.n):
                raise ConfigurationError("revision players out of range")
            object.__setattr__(self, "revision", rev)


def _player_coefficients(theta: ThetaParams, n: int, covariates) -> tuple:
    """Per-player (cost, gen, treat_gen, treat_dir) arrays."""
    if theta.has_het:
        if covariates is None:
            raise ConfigurationError(
                "theta carries heterogeneity blocks but covariates are missing"
            )
        x = np.stack([c.as_array() for c in covariates])
        return (
            theta.cost_weight + x @ theta.het_cost,
            theta.gen_reciprocity + x @ theta.het_gen,
            theta.treat_gen_reciprocity + x @ theta.het_treat_gen,
            theta.treat_dir_reciprocity + x @ theta.het_treat_dir,
        )
    ones = np.ones(n)
    return (
        theta.cost_weight * ones,
        theta.gen_reciprocity * ones,
        theta.treat_gen_reciprocity * ones,
        theta.treat_dir_reciprocity * ones,
    )


def _lagged_inflows(adj, c, m):
    """Incoming totals and per-sender (others-order) flows from a raw state."""
    n = adj.shape[0]
    out_deg = adj.sum(axis=0) - 1
    rates = c * m[out_deg]
    flows = adj * rates[np.newaxis, :]
    np.fill_diagonal(flows, 0.0)
    v = flows[~np.eye(n, dtype=bool)].reshape(n, n - 1)
    return v.sum(axis=1), v


def _choice_weights(psi, grid):
    """Per-player normalized probabilities over the flat choice set."""
    utilities = psi[:, :, np.newaxis] * grid
    flat = utilities.reshape(psi.shape[0], -1)
    flat = flat - flat.max(axis=1, keepdims=True)
    np.exp(flat, out=flat)
    flat /= flat.sum(axis=1, keepdims=True)
    return flat


def _raw_psi(in_total, v, treat, coefs, m, n):
    """psi(L) rows for all players at once, (n, 2^(n-1))."""
    cost, gen, tgen, tdir = coefs
    matrix, degrees = link_table(n - 1)
    m_deg = m[degrees]
    gen_w = gen + (tgen if treat else 0.0)
    psi = cost[:, np.newaxis] * (m_deg - 1.0)
    psi += (gen_w * in_total)[:, np.newaxis] * (degrees * m_deg) / (n - 1) ** 2
    if treat:
        psi += tdir[:, np.newaxis] * (v @ matrix.T) * m_deg / (n - 1)
    return psi


def _raw_step_exact(adj, c, treat, coefs, m, grid, rng, revision=None):
    """Advance one period in raw array form; returns new (adj, c)."""
    n = adj.shape[0]
    in_total, v = _lagged_inflows(adj, c, m)
    psi = _raw_psi(in_total, v, treat, coefs, m, n)
    flat = _choice_weights(psi, grid)
    q = grid.shape[0]
    matrix, _ = link_table(n - 1)
    new_adj = adj.copy()
    new_c = c.copy()
    players = range(n) if revision is None else revision
    others_idx = [np.array([j for j in range(n) if j != i]) for i in range(n)]
    for i in players:
        pick = int(np.searchsorted(np.cumsum(flat[i]), rng.random(), side="right"))
        pick = min(pick, flat.shape[1] - 1)
        b, k = divmod(pick, q)
        new_adj[others_idx[i], i] = matrix[b].astype(np.int8)
        new_c[i] = grid[k]
    return new_adj, new_c


def _initial_raw_state(n, treat, coefs, m, grid, rng, rule):
    adj0 = np.eye(n, dtype=np.int8)
    c0 = np.zeros(n)
    if rule == "empty":
        return adj0, c0
    # first period is drawn with an empty history: zero incoming benefits
    psi = _raw_psi(np.zeros(n), np.zeros((n, n - 1)), treat, coefs, m, n)
    flat = _choice_weights(psi, grid)
    q = grid.shape[0]
    matrix, _ = link_table(n - 1)
    for i in range(n):
        pick = int(np.searchsorted(np.cumsum(flat[i]), rng.random(), side="right"))
        pick = min(pick, flat.shape[1] - 1)
        b, k = divmod(pick, q)
        others = [j for j in range(n) if j != i]
        adj0[others, i] = matrix[b].astype(np.int8)
        c0[i] = grid[k]
    return adj0, c0


def step_exact(
    prev_net: NetworkState,
    prev_contrib: ContributionProfile,
    regime: Regime,
    theta: ThetaParams,
    spec: MpcrSpec,
    rng: np.random.Generator,
    revision: Optional[Sequence[int]] = None,
    covariates: Optional[Sequence[PlayerCovariates]] = None,
) -> Tuple[NetworkState, ContributionProfile]:
    """One simultaneous-revision period via exact choice-set enumeration.

    Players in ``revision`` (default all) redraw their action from the
    exact logit distribution given the previous period; everyone else
    repeats their previous action.
    """
    n = prev_net.n
    if n > EXACT_SAMPLER_MAX_N:
        raise DomainError(
            f"exact sampler enumerates 2^(n-1) link sets; n={n} exceeds "
            f"{EXACT_SAMPLER_MAX_N}, use step_mh"
        )
    treat = regime is Regime.TREATMENT
    coefs = _player_coefficients(theta, n, covariates)
    m = spec.m_table(n - 1)
    grid = contribution_grid(prev_contrib.q)
    rev = None if revision is None else tuple(sorted(set(revision)))
    adj, c = _raw_step_exact(
        prev_net.adj.astype(np.int8), np.asarray(prev_contrib.c), treat,
        coefs, m, grid, rng, rev,
    )
    return NetworkState(adj), ContributionProfile(c, q=prev_contrib.q)


def _mh_chain_py(m_tab, grid, v, k_cost, k_gen, k_dir, bits, d, w, c_idx,
                 ptypes, unifs, cprops):
    n_others = v.shape[0]
    for s in range(ptypes.shape[0]):
        p = ptypes[s]
        psi_old = k_cost * (m_tab[d] - 1.0) + k_gen * d * m_tab[d] + k_dir * m_tab[d] * w
        if p < n_others:
            if (bits >> p) & 1:
                d2, w2 = d - 1, w - v[p]
            else:
                d2, w2 = d + 1, w + v[p]
            psi_new = (k_cost * (m_tab[d2] - 1.0) + k_gen * d2 * m_tab[d2]
                       + k_dir * m_tab[d2] * w2)
            delta = grid[c_idx] * (psi_new - psi_old)
            if delta >= 0.0 or unifs[s] < np.exp(delta):
                bits ^= 1 << p
                d, w = d2, w2
        else:
            k_new = cprops[s]
            delta = (grid[k_new] - grid[c_idx]) * psi_old
            if delta >= 0.0 or unifs[s] < np.exp(delta):
                c_idx = k_new
    return bits, c_idx


@lru_cache(maxsize=1)
def _mh_chain_kernel():
    try:
        from numba import njit
    except ImportError:
        return _mh_chain_py
    return njit(cache=True)(_mh_chain_py)


def step_mh(
    prev_net: NetworkState,
    prev_contrib: ContributionProfile,
    regime: Regime,
    theta: ThetaParams,
    spec: MpcrSpec,
    rng: np.random.Generator,
    iters: int,
    revision: Optional[Sequence[int]] = None,
    covariates: Optional[Sequence[PlayerCovariates]] = None,
) -> Tuple[NetworkState, ContributionProfile]:
    """One period advanced by per-player Metropolis chains.

    Each updating player runs ``iters`` sweeps of n elementary proposals
    (toggle one uniformly chosen link, or move the contribution to a
    uniform grid point), accepted with min(1, exp(delta phi)).  The chain
    targets the same per-player distribution the exact sampler draws from.
    ``iters = 0`` returns the previous state unchanged.
    """
    if iters < 0:
        raise DomainError("iters must be >= 0")
    n = prev_net.n
    treat = regime is Regime.TREATMENT
    coefs = _player_coefficients(theta, n, covariates)
    m = spec.m_table(n - 1)
    grid = contribution_grid(prev_contrib.q)
    in_total, v = _lagged_inflows(
        prev_net.adj.astype(np.int8), np.asarray(prev_contrib.c), m
    )
    kernel = _mh_chain_kernel()
    cost, gen, tgen, tdir = coefs
    new_adj = prev_net.adj.astype(np.int8).copy()
    new_c = np.asarray(prev_contrib.c).copy()
    players = range(n) if revision is None else tuple(sorted(set(revision)))
    n_steps = iters * n
    for i in players:
        links = prev_net.out_links(i)
        bits = int(links @ (1 << np.arange(n - 1, dtype=np.int64)))
        d = int(links.sum())
        v_i = v[i] if treat else np.zeros(n - 1)
        w = float(links @ v_i)
        c_idx = int(round(prev_contrib.c[i] * (prev_contrib.q - 1)))
        k_cost = float(cost[i])
        k_gen = float((gen[i] + (tgen[i] if treat else 0.0)) * in_total[i]) / (n - 1) ** 2
        k_dir = float(tdir[i] / (n - 1)) if treat else 0.0
        if n_steps:
            ptypes = rng.integers(0, n, size=n_steps)
            unifs = rng.random(n_steps)
            cprops = rng.integers(0, prev_contrib.q, size=n_steps)
            bits, c_idx = kernel(
                m, grid, v_i, k_cost, k_gen, k_dir,
                np.int64(bits), np.int64(d), float(w), np.int64(c_idx),
                ptypes, unifs, cprops,
            )
        others = [j for j in range(n) if j != i]
        new_adj[others, i] = (int(bits) >> np.arange(n - 1)) & 1
        new_c[i] = grid[int(c_idx)]
    return NetworkState(new_adj), ContributionProfile(new_c, q=prev_contrib.q)


def simulate_design(
    designs: Sequence[GroupDesign],
    theta: ThetaParams,
    spec: MpcrSpec,
    q: int,
    seed: int,
    initial_rule: str = "logit",
    revision: Optional[Tuple[int, ...]] = None,
    mh_sweeps: int = DEFAULT_MH_SWEEPS,
) -> list:
    """Simulate one panel per design, with an independent stream per group."""
    grid = contribution_grid(q)
    children = np.random.SeedSequence(seed).spawn(len(designs))
    panels = []
    for design, child in zip(designs, children):
        rng = np.random.default_rng(child)
        panels.append(
            _simulate_group(design, theta, spec, grid, q, rng, initial_rule,
                            revision, mh_sweeps)
        )
    return panels


def _simulate_group(design, theta, spec, grid, q, rng, initial_rule, revision,
                    mh_sweeps):
    n = design.n
    m = spec.m_table(n - 1)
    coefs = _player_coefficients(theta, n, design.covariates)
    exact = n <= EXACT_SAMPLER_MAX_N
    ts = design.treatment_start

    def treated(period):
        return ts > 0 and period >= ts

    states = []
    if exact:
        adj, c = _initial_raw_state(n, treated(1), coefs, m, grid, rng, initial_rule)
        states.append((adj, c))
        for t in range(2, design.periods + 1):
            adj, c = _raw_step_exact(adj, c, treated(t), coefs, m, grid, rng, revision)
            states.append((adj, c))
        wrapped = tuple(
            (NetworkState(a), ContributionProfile(cv, q=q)) for a, cv in states
        )
    else:
        net = NetworkState.empty(n)
        contrib = ContributionProfile(np.zeros(n), q=q)
        regime1 = Regime.TREATMENT if treated(1) else Regime.BASELINE
        net, contrib = step_mh(net, contrib, regime1, theta, spec, rng,
                               mh_sweeps, revision, design.covariates)
        seq = [(net, contrib)]
        for t in range(2, design.periods + 1):
            regime = Regime.TREATMENT if treated(t) else Regime.BASELINE
            net, contrib = step_mh(net, contrib, regime, theta, spec, rng,
                                   mh_sweeps, revision, design.covariates)
            seq.append((net, contrib))
        wrapped = tuple(seq)
    return GroupPanel(design.group_id, ts, wrapped, design.covariates)


def simulate_panel(cfg: SimConfig) -> list:
    """Simulate the configured number of groups; first ones are treated.

    Deterministic in (cfg, cfg.seed): each group consumes its own child
    seed, so results do not depend on evaluation order.
    """
    rng_cov = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x5EED)))
    designs = []
    for g in range(cfg.n_groups):
        ts = cfg.treatment_start if g < cfg.n_treatment_groups else 0
        covs = None
        if cfg.covariate_rule == "standard_normal":
            draws = rng_cov.standard_normal((cfg.n, 3))
            covs = tuple(PlayerCovariates(*row) for row in draws)
        designs.append(GroupDesign(str(g + 1), cfg.n, cfg.periods, ts, covs))
    return simulate_design(
        designs, cfg.theta, cfg.spec, cfg.q, cfg.seed,
        initial_rule=cfg.initial_rule, revision=cfg.revision,
        mh_sweeps=cfg.mh_sweeps,
    )


def build_info_sets(panel: GroupPanel, period: int, spec: MpcrSpec) -> list:
    """Info sets each player holds when choosing in ``period`` (>= 2)."""
    if period < 2:
        raise DomainError("period 1 has no information set")
    net, contrib = panel.state(period - 1)
    return info_sets_from_state(net, contrib, spec, panel.regime(period))
