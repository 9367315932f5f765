"""Per-cross-section outcome measures and treatment-effect regressions.

The outcome battery mirrors the reduced-form analysis: efficient
structure, mean contribution, mean out-degree, isolated players, direct
sharing cost, a mutual-flow reciprocity index, and HHI centralization of
generated benefits (undefined when nobody contributes).  Treatment
effects come from within-group demeaned OLS with group-clustered
covariance.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import scipy.stats

from .core import ContributionProfile, MpcrSpec, NetworkState
from .dynamics import GroupPanel
from .errors import DataError
from .stability import is_efficient_structure

OUTCOME_NAMES = (
    "efficient_structure",
    "mean_contribution",
    "mean_links",
    "isolated_count",
    "mean_cost",
    "reciprocity_index",
    "hhi",
)


def outcome_row(net: NetworkState, contrib: ContributionProfile,
                spec: MpcrSpec) -> dict:
    """The outcome battery for one cross-section.

    Cost per player is the forgone return (1 - m(d_i)) c_i; the
    reciprocity index sums m_i m_j c_i c_j over ordered mutually linked
    pairs; HHI is the sum of squared shares of generated benefits (the
    efficiency multiplier cancels, and the index is None when total
    contributions are zero).
    """
    n = net.n
    c = np.asarray(contrib.c)
    out_deg = net.out_degrees()
    m = spec.m_table(n - 1)[out_deg]
    mutual = net.adj * net.adj.T
    np.fill_diagonal(mutual, 0)
    weights = np.outer(m * c, m * c)
    reciprocity = float((mutual * weights).sum())
    total = c.sum()
    hhi = float(np.sum((c / total) ** 2)) if total > 0 else None
    return {
        "efficient_structure": int(is_efficient_structure(net, spec)),
        "mean_contribution": float(c.mean()),
        "mean_links": float(out_deg.mean()),
        "isolated_count": int((out_deg == 0).sum()),
        "mean_cost": float(((1.0 - m) * c).mean()),
        "reciprocity_index": reciprocity,
        "hhi": hhi,
    }


def outcomes_table(panels: Sequence[GroupPanel], spec: MpcrSpec) -> list:
    """Outcome rows for every (group, period), with design columns attached."""
    rows = []
    for panel in panels:
        for t in range(1, panel.periods + 1):
            net, contrib = panel.state(t)
            row = outcome_row(net, contrib, spec)
            row.update({
                "group": panel.group_id,
                "period": t,
                "is_treatment_group": int(panel.is_treatment),
                "treatment_start": panel.treatment_start,
            })
            rows.append(row)
    return rows


def did_regression(rows: Sequence[dict], outcome: str,
                   treatment_start: Optional[int] = None) -> dict:
    """Difference-in-differences with group fixed effects.

    Regressors are Period, Treatment (1 in treatment-group periods at or
    after the intervention), and Treatment x (Period - intervention
    period), so the Treatment coefficient reads as the jump at the
    intervention.  Group effects are absorbed by within-group demeaning;
    the covariance is clustered by group with the small-sample factor
    C/(C-1) * (D-1)/(D-K), K counting slopes plus absorbed effects, and
    p-values use a t distribution with C-1 degrees of freedom.
    """
    usable = [r for r in rows if r.get(outcome) is not None]
    if not usable:
        raise DataError(f"no usable observations for outcome {outcome!r}")
    groups = sorted({r["group"] for r in usable}, key=str)
    if len(groups) < 2:
        raise DataError("clustered errors need at least two groups")
    group_code = {g: i for i, g in enumerate(groups)}

    y = np.array([float(r[outcome]) for r in usable])
    period = np.array([float(r["period"]) for r in usable])
    g_idx = np.array([group_code[r["group"]] for r in usable])
    ts = np.array([
        float(treatment_start if treatment_start is not None
              else r["treatment_start"]) for r in usable
    ])
    treated = np.array([
        1.0 if (r["is_treatment_group"] and r["period"] >= t) else 0.0
        for r, t in zip(usable, ts)
    ])
    x = np.column_stack([period, treated, treated * (period - ts)])
    labels = ("period", "treatment", "treatment_x_period")

    def demean(v):
        if v.ndim == 1:
            sums = np.bincount(g_idx, weights=v)
            counts = np.bincount(g_idx)
            return v - (sums / counts)[g_idx]
        return np.column_stack([demean(v[:, j]) for j in range(v.shape[1])])

    x_w = demean(x)
    y_w = demean(y)
    if np.linalg.matrix_rank(x_w) < x_w.shape[1]:
        raise DataError("regressors are collinear after absorbing group effects")

    xtx = x_w.T @ x_w
    beta = np.linalg.solve(xtx, x_w.T @ y_w)
    resid = y_w - x_w @ beta

    n_obs = y.shape[0]
    n_clusters = len(groups)
    k_total = x_w.shape[1] + n_clusters
    meat = np.zeros((3, 3))
    for g in range(n_clusters):
        rows_g = g_idx == g
        s_g = x_w[rows_g].T @ resid[rows_g]
        meat += np.outer(s_g, s_g)
    correction = (n_clusters / (n_clusters - 1)) * ((n_obs - 1) / (n_obs - k_total))
    bread = np.linalg.inv(xtx)
    cov = correction * bread @ meat @ bread
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = np.where(se > 0, beta / np.where(se > 0, se, 1.0), np.inf * np.sign(beta))
    p_values = 2 * scipy.stats.t.sf(np.abs(t_stats), df=n_clusters - 1)

    return {
        "outcome": outcome,
        "n_obs": int(n_obs),
        "n_groups": int(n_clusters),
        "coefficients": {
            label: {"coef": float(b), "se": float(s), "p": float(p)}
            for label, b, s, p in zip(labels, beta, se, p_values)
        },
    }
