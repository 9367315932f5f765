"""Stability tests and motif classification for observed cross-sections.

Topological stability asks whether any player could raise her potential by
changing only her link set, holding all contributions fixed; behavioral
Nash stability additionally requires each contribution to satisfy the
first-order or corner conditions.  Both are static fixed-point notions, so
by default the information set is built from the same cross-section being
tested (steady state); lagged information is available behind a flag for
empirical-stability studies.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .choices import link_index, psi_over_link_sets
from .core import (
    ContributionProfile,
    MpcrSpec,
    NetworkState,
    Regime,
    ThetaParams,
    info_sets_from_state,
)
from .dynamics import GroupPanel
from .errors import DomainError

GAP_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TopologicalStability:
    stable: bool
    gaps: np.ndarray  #: per player, best deviation potential minus observed


@dataclass(frozen=True)
class BehavioralStability:
    stable: bool
    topological: TopologicalStability
    slopes: np.ndarray  #: per player, d(potential)/d(contribution)
    contribution_ok: np.ndarray


def _player_psi(net, contrib, theta, spec, regime, covariates, info_state):
    src_net, src_contrib = info_state if info_state is not None else (net, contrib)
    infos = info_sets_from_state(src_net, src_contrib, spec, regime)
    treat = 1 if regime is Regime.TREATMENT else 0
    psis = []
    for i in range(net.n):
        x_i = covariates[i] if covariates is not None else None
        psis.append(psi_over_link_sets(infos[i], treat, theta, spec, net.n, x_i))
    return np.stack(psis)


def is_topologically_stable(
    net: NetworkState,
    contrib: ContributionProfile,
    theta: ThetaParams,
    spec: MpcrSpec,
    regime: Regime,
    covariates: Optional[Sequence] = None,
    info_state: Optional[tuple] = None,
    tol: float = GAP_TOLERANCE,
) -> TopologicalStability:
    """No player can gain by rewiring her links at the given contributions.

    Enumerates all 2^(n-1) alternative link sets per player.  Ties count
    as stable (the definition uses a weak inequality).
    """
    psi = _player_psi(net, contrib, theta, spec, regime, covariates, info_state)
    gaps = np.empty(net.n)
    for i in range(net.n):
        # phi(L) = c_i * psi(L) and c_i >= 0, so the best deviation is c_i * max psi
        observed = psi[i, link_index(net.out_links(i))]
        gaps[i] = contrib.c[i] * (psi[i].max() - observed)
    return TopologicalStability(stable=bool(np.all(gaps <= tol)), gaps=gaps)


def is_behaviorally_stable(
    net: NetworkState,
    contrib: ContributionProfile,
    theta: ThetaParams,
    spec: MpcrSpec,
    regime: Regime,
    covariates: Optional[Sequence] = None,
    info_state: Optional[tuple] = None,
    tol: float = GAP_TOLERANCE,
) -> BehavioralStability:
    """Topological stability plus first-order or corner optimality of each c_i.

    The potential is linear in the own contribution, so its slope at the
    observed links decides everything: a zero slope satisfies the
    first-order condition at any c, a positive slope requires the full
    endowment, a negative slope requires zero.
    """
    topo = is_topologically_stable(net, contrib, theta, spec, regime,
                                   covariates, info_state, tol)
    psi = _player_psi(net, contrib, theta, spec, regime, covariates, info_state)
    slopes = np.array([psi[i, link_index(net.out_links(i))] for i in range(net.n)])
    at_max = np.isclose(contrib.c, 1.0)
    at_zero = np.isclose(contrib.c, 0.0)
    contribution_ok = (np.abs(slopes) <= tol) \
        | (at_max & (slopes > tol)) \
        | (at_zero & (slopes < -tol))
    return BehavioralStability(
        stable=bool(topo.stable and contribution_ok.all()),
        topological=topo,
        slopes=slopes,
        contribution_ok=contribution_ok,
    )


def is_efficient_structure(net: NetworkState, spec: MpcrSpec) -> bool:
    """Whether the topology can support an efficient outcome.

    Purely congestive: every player shares with someone.  Subcongestive:
    every out-degree is exactly one.  Supercongestive: the network is
    complete.  Contributions are judged separately.
    """
    out_deg = net.out_degrees()
    if spec.kind == "pure":
        return bool(np.all(out_deg >= 1))
    if spec.kind == "sub":
        return bool(np.all(out_deg == 1))
    if spec.kind == "super":
        return bool(np.all(out_deg == net.n - 1))
    raise DomainError(f"efficiency is undefined for MPCR kind {spec.kind!r}")


def is_efficient_outcome(net: NetworkState, contrib: ContributionProfile,
                         spec: MpcrSpec) -> bool:
    """Efficient structure and full contribution by every player."""
    return is_efficient_structure(net, spec) and bool(np.all(contrib.c == 1.0))


_MOTIF_EDGES = {
    "single_pair": {(0, 1), (1, 0)},
    "double_pair": {(0, 1), (1, 0), (2, 3), (3, 2)},
    "triad": {(a, b) for a in range(3) for b in range(3) if a != b},
    "cycle": {(0, 1), (1, 2), (2, 3), (3, 0)},
}


def classify_motif(net: NetworkState) -> str:
    """Label a 4-player digraph up to node relabeling.

    Recognized shapes: the empty network, one mutual pair, two disjoint
    mutual pairs, a fully linked triad with an isolate, and an
    unreciprocated 4-cycle; anything else is "other".
    """
    if net.n != 4:
        raise DomainError("motif taxonomy is defined for n = 4 only")
    edges = {(u, v) for v in range(4) for u in range(4)
             if u != v and net.adj[v, u] == 1}
    if not edges:
        return "empty"
    for label, template in _MOTIF_EDGES.items():
        if len(edges) != len(template):
            continue
        for perm in itertools.permutations(range(4)):
            if {(perm[u], perm[v]) for u, v in edges} == template:
                return label
    return "other"


def stability_census(
    panels: Sequence[GroupPanel],
    theta: ThetaParams,
    spec: MpcrSpec,
    use_lagged_info: bool = False,
    tol: float = GAP_TOLERANCE,
) -> list:
    """Per-cross-section stability flags and motif labels.

    Rows carry (group, period, regime, topo_stable, behav_stable,
    efficient_structure, motif); motif is empty for group sizes other
    than 4.  ``use_lagged_info`` evaluates stability against the previous
    period's information instead of the concurrent fixed-point notion
    (period 1 is skipped in that mode).
    """
    rows = []
    for panel in panels:
        covs = panel.covariates if theta.has_het else None
        for t in range(1, panel.periods + 1):
            if use_lagged_info and t == 1:
                continue
            net, contrib = panel.state(t)
            regime = panel.regime(t)
            info_state = panel.state(t - 1) if use_lagged_info else None
            behav = is_behaviorally_stable(net, contrib, theta, spec, regime,
                                           covs, info_state, tol)
            rows.append({
                "group": panel.group_id,
                "period": t,
                "regime": regime.value,
                "topo_stable": int(behav.topological.stable),
                "behav_stable": int(behav.stable),
                "efficient_structure": int(is_efficient_structure(net, spec)),
                "motif": classify_motif(net) if panel.n == 4 else "",
            })
    return rows


def census_summary(rows: Sequence[dict]) -> dict:
    """Aggregate counts: stable cross-sections by motif and regime."""
    summary = {
        "n_cross_sections": len(rows),
        "n_topo_stable": sum(r["topo_stable"] for r in rows),
        "n_behav_stable": sum(r["behav_stable"] for r in rows),
        "stable_by_motif": {},
        "stable_nonempty": 0,
    }
    for r in rows:
        if not r["topo_stable"]:
            continue
        key = (r["motif"] or "n/a", r["regime"])
        summary["stable_by_motif"][key] = summary["stable_by_motif"].get(key, 0) + 1
        if r["motif"] not in ("empty", ""):
            summary["stable_nonempty"] += 1
    return summary
