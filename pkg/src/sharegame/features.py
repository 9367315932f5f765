"""Vectorized decision features and (pseudo)likelihood kernels.

Every decision observation (group k, period t >= 2, player i) reduces to a
handful of arrays because the potential is linear in the contribution and
in the parameters:

    phi(L, c) = c * psi(L),
    psi(L) = a1 * (m(d) - 1) + a2 * d * m(d) * IN / (n-1)^2
           + a3 * T * m(d) * (L . v) / (n-1)

with per-player coefficients (a1, a2, a3) affine in theta.  The full
likelihood enumerates all 2^(n-1) * q alternatives per observation; the
pseudolikelihood needs only the 2(n-1) toggled link states plus the q-point
contribution conditional, which is what buys its complexity advantage.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .choices import link_table
from .core import MpcrSpec, ThetaParams, contribution_grid
from .dynamics import GroupPanel
from .errors import ConfigurationError, DataError, NumericError

# cap on the number of exp() cells materialized per chunk of the full
# likelihood; keeps peak memory near 300 MB even for n around 20
_CHUNK_CELLS = 20_000_000


@dataclass
class PanelFeatures:
    """Flattened decision observations for a set of same-shaped panels."""

    n: int
    q: int
    grid: np.ndarray          # (q,)
    m: np.ndarray             # (n,) MPCR by out-degree
    in_total: np.ndarray      # (D,) lagged incoming benefit
    v: np.ndarray             # (D, n-1) lagged per-sender inflow, 0 off-treatment
    treat: np.ndarray         # (D,) 0/1
    c_obs: np.ndarray         # (D,)
    link_vec: np.ndarray      # (D, n-1) observed out-links
    link_bits: np.ndarray     # (D,) row index into link_table
    d_obs: np.ndarray         # (D,)
    group_idx: np.ndarray     # (D,) cluster index
    group_ids: tuple
    x: Optional[np.ndarray]   # (D, 3) covariates, or None
    feature_scale: float = 1.0

    @property
    def n_obs(self) -> int:
        return self.in_total.shape[0]

    @property
    def n_groups(self) -> int:
        return len(self.group_ids)

    def n_params(self, heterogeneous: bool) -> int:
        return 16 if heterogeneous else 4

    def scaled(self, alpha: float) -> "PanelFeatures":
        """Copy with every utility feature multiplied by ``alpha``."""
        return replace(self, feature_scale=self.feature_scale * float(alpha))


def build_features(
    panels: Sequence[GroupPanel],
    spec: MpcrSpec,
    q: int,
    require_covariates: bool = False,
    drop_boundary: bool = False,
) -> PanelFeatures:
    """Flatten panels into decision-level arrays.

    Periods t = 2..T contribute one observation per player, carrying the
    information each player saw (period t-1 outcomes at the granularity of
    the period-t regime).  ``drop_boundary`` omits the first treated
    period of treatment groups.
    """
    if not panels:
        raise DataError("no panels given")
    n = panels[0].n
    for p in panels:
        if p.n != n:
            raise DataError(f"group {p.group_id}: player count {p.n} != {n}")
        if p.periods < 2:
            raise DataError(f"group {p.group_id}: need at least 2 periods")
    if require_covariates and any(p.covariates is None for p in panels):
        raise ConfigurationError("heterogeneous estimation requires covariates on every panel")

    grid = contribution_grid(q)
    m = spec.m_table(n - 1)
    powers = 1 << np.arange(n - 1, dtype=np.int64)
    off_diag = ~np.eye(n, dtype=bool)

    in_total, v_rows, treat, c_obs = [], [], [], []
    link_vecs, group_idx, xs = [], [], []
    group_ids = tuple(p.group_id for p in panels)
    for k, panel in enumerate(panels):
        covs = None
        if panel.covariates is not None:
            covs = np.stack([c.as_array() for c in panel.covariates])
        for t in range(2, panel.periods + 1):
            if drop_boundary and panel.is_treatment and t == panel.treatment_start:
                continue
            treated = panel.regime(t).value == "treatment"
            prev_net, prev_contrib = panel.state(t - 1)
            net, contrib = panel.state(t)
            steps = np.asarray(contrib.c) * (q - 1)
            if not np.allclose(steps, np.round(steps), atol=1e-9):
                bad = int(np.argmax(np.abs(steps - np.round(steps)) > 1e-9))
                raise DataError(
                    f"group {panel.group_id}, period {t}, player {bad}: "
                    f"contribution {contrib.c[bad]} is off the {q}-point grid"
                )
            out_deg = prev_net.adj.sum(axis=0) - 1
            rates = np.asarray(prev_contrib.c) * m[out_deg]
            flows = prev_net.adj * rates[np.newaxis, :]
            np.fill_diagonal(flows, 0.0)
            v_all = flows[off_diag].reshape(n, n - 1)
            links = np.stack([net.out_links(i) for i in range(n)])
            in_total.append(v_all.sum(axis=1))
            v_rows.append(v_all if treated else np.zeros((n, n - 1)))
            treat.append(np.full(n, 1.0 if treated else 0.0))
            c_obs.append(np.asarray(contrib.c))
            link_vecs.append(links.astype(np.float64))
            group_idx.append(np.full(n, k, dtype=np.int64))
            if covs is not None:
                xs.append(covs)

    link_vec = np.concatenate(link_vecs)
    return PanelFeatures(
        n=n,
        q=q,
        grid=grid,
        m=m,
        in_total=np.concatenate(in_total),
        v=np.concatenate(v_rows),
        treat=np.concatenate(treat),
        c_obs=np.concatenate(c_obs),
        link_vec=link_vec,
        link_bits=(link_vec @ powers).astype(np.int64),
        d_obs=link_vec.sum(axis=1).astype(np.int64),
        group_idx=np.concatenate(group_idx),
        group_ids=group_ids,
        x=np.concatenate(xs) if xs else None,
    )


def _coefficients(theta_vec: np.ndarray, feats: PanelFeatures):
    """Per-observation (a1, a2, a3) given the flat parameter vector."""
    th = np.asarray(theta_vec, dtype=np.float64)
    if th.shape == (4,):
        a1 = np.full(feats.n_obs, th[0])
        a2 = th[1] + feats.treat * th[2]
        a3 = np.full(feats.n_obs, th[3])
        return a1, a2, a3
    if th.shape == (16,):
        if feats.x is None:
            raise ConfigurationError("16-parameter model needs covariates in the features")
        x = feats.x
        a1 = th[0] + x @ th[4:7]
        a2 = (th[1] + x @ th[10:13]) + feats.treat * (th[2] + x @ th[13:16])
        a3 = th[3] + x @ th[7:10]
        return a1, a2, a3
    raise ConfigurationError(f"parameter vector must have 4 or 16 entries, got {th.shape}")


def _assemble_scores(g1, g2, g3, feats: PanelFeatures, n_params: int) -> np.ndarray:
    """Per-observation score rows from the three base feature scores.

    g1, g2, g3 are the observed-minus-expected values of the cost,
    generalized, and direct features; treatment and covariate interactions
    are products with observation-level multipliers.
    """
    scores = np.empty((feats.n_obs, n_params))
    scores[:, 0] = g1
    scores[:, 1] = g2
    scores[:, 2] = feats.treat * g2
    scores[:, 3] = g3
    if n_params == 16:
        x = feats.x
        scores[:, 4:7] = x * g1[:, np.newaxis]
        scores[:, 7:10] = x * g3[:, np.newaxis]
        scores[:, 10:13] = x * g2[:, np.newaxis]
        scores[:, 13:16] = x * (feats.treat * g2)[:, np.newaxis]
    return scores


def loglik_core(theta_vec: np.ndarray, feats: PanelFeatures, want_scores: bool = False):
    """Full log-likelihood: sum of phi(observed) - log Z over observations.

    Z sums exp(phi) over all 2^(n-1) link sets times q grid points, in
    log-space with max subtraction.  Returns (ll, score_matrix); the score
    matrix rows are per-observation gradients (None unless requested).
    """
    n, q = feats.n, feats.q
    matrix, degrees = link_table(n - 1)
    s = feats.feature_scale
    m_deg = feats.m[degrees]
    f_cost = s * (m_deg - 1.0)                        # (L,)
    f_gen_base = s * degrees * m_deg / (n - 1) ** 2   # (L,)
    a1, a2, a3 = _coefficients(theta_vec, feats)
    n_params = 4 if np.asarray(theta_vec).shape == (4,) else 16

    D = feats.n_obs
    obs_ll = np.empty(D)
    scores = np.empty((D, n_params)) if want_scores else None
    rows_per_chunk = max(1, _CHUNK_CELLS // (matrix.shape[0] * q))
    for start in range(0, D, rows_per_chunk):
        sl = slice(start, min(start + rows_per_chunk, D))
        w = s * (feats.v[sl] @ matrix.T) * m_deg / (n - 1)       # (d, L)
        f_dir = feats.treat[sl, np.newaxis] * w
        f_gen = feats.in_total[sl, np.newaxis] * f_gen_base
        psi = a1[sl, np.newaxis] * f_cost + a2[sl, np.newaxis] * f_gen \
            + a3[sl, np.newaxis] * f_dir
        if not np.isfinite(psi).all():
            o, b = np.argwhere(~np.isfinite(psi))[0]
            raise NumericError(
                f"non-finite potential at observation {start + o}, link set {b:b}"
            )
        util = psi[:, :, np.newaxis] * feats.grid                # (d, L, q)
        peak = util.max(axis=(1, 2))
        np.exp(util - peak[:, np.newaxis, np.newaxis], out=util)
        z = util.sum(axis=(1, 2))
        log_z = peak + np.log(z)
        rows = np.arange(sl.start, sl.stop) - sl.start
        psi_obs = psi[rows, feats.link_bits[sl]]
        obs_ll[sl] = feats.c_obs[sl] * psi_obs - log_z
        if want_scores:
            # model-expected features: sum_L (sum_c c P[L,c]) * f(L)
            cw = (util @ feats.grid) / z[:, np.newaxis]          # (d, L)
            g1 = feats.c_obs[sl] * f_cost[feats.link_bits[sl]] - cw @ f_cost
            g2 = feats.c_obs[sl] * f_gen[rows, feats.link_bits[sl]] \
                - (cw * f_gen).sum(axis=1)
            g3 = feats.c_obs[sl] * f_dir[rows, feats.link_bits[sl]] \
                - (cw * f_dir).sum(axis=1)
            sub = PanelFeatures(
                n=n, q=q, grid=feats.grid, m=feats.m,
                in_total=feats.in_total[sl], v=feats.v[sl],
                treat=feats.treat[sl], c_obs=feats.c_obs[sl],
                link_vec=feats.link_vec[sl], link_bits=feats.link_bits[sl],
                d_obs=feats.d_obs[sl], group_idx=feats.group_idx[sl],
                group_ids=feats.group_ids,
                x=None if feats.x is None else feats.x[sl],
                feature_scale=feats.feature_scale,
            )
            scores[sl] = _assemble_scores(g1, g2, g3, sub, n_params)
    return float(obs_ll.sum()), scores


def pseudo_loglik_core(theta_vec: np.ndarray, feats: PanelFeatures, want_scores: bool = False):
    """Log-pseudolikelihood: contribution conditional plus link conditionals.

    Each link conditional is a two-point logit between the link-off and
    link-on states holding everything else fixed; the contribution
    conditional is a q-point logit at the observed link set.  Costs
    O(D * (n + q)) instead of O(D * 2^n * q).
    """
    n = feats.n
    s = feats.feature_scale
    a1, a2, a3 = _coefficients(theta_vec, feats)
    n_params = 4 if np.asarray(theta_vec).shape == (4,) else 16

    def psi_parts(d, w):
        m_d = feats.m[d]
        f1 = s * (m_d - 1.0)
        f2 = s * feats.in_total * d * m_d / (n - 1) ** 2 if d.ndim == 1 else \
            s * feats.in_total[:, np.newaxis] * d * m_d / (n - 1) ** 2
        f3 = s * feats.treat * m_d * w / (n - 1) if d.ndim == 1 else \
            s * feats.treat[:, np.newaxis] * m_d * w / (n - 1)
        return f1, f2, f3

    def combine(f1, f2, f3):
        if f1.ndim == 1:
            return a1 * f1 + a2 * f2 + a3 * f3
        return a1[:, np.newaxis] * f1 + a2[:, np.newaxis] * f2 + a3[:, np.newaxis] * f3

    w_obs = (feats.link_vec * feats.v).sum(axis=1)
    f1o, f2o, f3o = psi_parts(feats.d_obs, w_obs)
    psi_obs = combine(f1o, f2o, f3o)
    if not np.isfinite(psi_obs).all():
        o = int(np.argmax(~np.isfinite(psi_obs)))
        raise NumericError(f"non-finite potential at observation {o}")

    # contribution conditional at the observed link set
    util_c = psi_obs[:, np.newaxis] * feats.grid
    peak = util_c.max(axis=1)
    wexp = np.exp(util_c - peak[:, np.newaxis])
    z_c = wexp.sum(axis=1)
    ll = feats.c_obs * psi_obs - peak - np.log(z_c)

    # link conditionals: toggle each link with all else held at the data
    bit_on = feats.link_vec.astype(bool)                      # (D, n-1)
    d0 = feats.d_obs[:, np.newaxis] - bit_on                  # degree with link j off
    w0 = w_obs[:, np.newaxis] - bit_on * feats.v
    f1_0, f2_0, f3_0 = psi_parts(d0, w0)
    f1_1, f2_1, f3_1 = psi_parts(d0 + 1, w0 + feats.v)
    psi0 = combine(f1_0, f2_0, f3_0)
    psi1 = combine(f1_1, f2_1, f3_1)
    u0 = feats.c_obs[:, np.newaxis] * psi0
    u1 = feats.c_obs[:, np.newaxis] * psi1
    u_obs = np.where(bit_on, u1, u0)
    ll_links = u_obs - np.logaddexp(u0, u1)
    total = float(ll.sum() + ll_links.sum())
    if not want_scores:
        return total, None

    # scores: observed features minus conditional expectations
    e_c = (wexp @ feats.grid) / z_c
    resid_c = feats.c_obs - e_c
    p1 = 1.0 / (1.0 + np.exp(u0 - u1))
    p0 = 1.0 - p1
    c_col = feats.c_obs[:, np.newaxis]
    g1 = resid_c * f1o + (c_col * (np.where(bit_on, f1_1, f1_0)
                                   - (p0 * f1_0 + p1 * f1_1))).sum(axis=1)
    g2 = resid_c * f2o + (c_col * (np.where(bit_on, f2_1, f2_0)
                                   - (p0 * f2_0 + p1 * f2_1))).sum(axis=1)
    g3 = resid_c * f3o + (c_col * (np.where(bit_on, f3_1, f3_0)
                                   - (p0 * f3_0 + p1 * f3_1))).sum(axis=1)
    return total, _assemble_scores(g1, g2, g3, feats, n_params)


def _multipliers(feats: PanelFeatures, n_params: int) -> tuple:
    """Observation-level multiplier columns and base-feature index per parameter.

    Parameter p's utility feature is mult_p[o] * c * base_{b(p)}(o, L) with
    bases 0 = cost, 1 = generalized, 2 = direct (treatment already folded
    into the direct base).
    """
    D = feats.n_obs
    ones = np.ones(D)
    cols = [ones, ones, feats.treat, ones]
    base_map = [0, 1, 1, 2]
    if n_params == 16:
        x = feats.x
        for j in range(3):
            cols.append(x[:, j])
        base_map += [0, 0, 0]
        for j in range(3):
            cols.append(x[:, j])
        base_map += [2, 2, 2]
        for j in range(3):
            cols.append(x[:, j])
        base_map += [1, 1, 1]
        for j in range(3):
            cols.append(feats.treat * x[:, j])
        base_map += [1, 1, 1]
    return np.column_stack(cols), np.array(base_map)


def _hessian_from_blocks(v2: np.ndarray, feats: PanelFeatures, n_params: int) -> np.ndarray:
    """Assemble the k x k Hessian from per-observation 3 x 3 feature covariances."""
    mult, base_map = _multipliers(feats, n_params)
    hess = np.empty((n_params, n_params))
    for p in range(n_params):
        for r in range(p, n_params):
            val = -np.sum(mult[:, p] * mult[:, r] * v2[:, base_map[p], base_map[r]])
            hess[p, r] = hess[r, p] = val
    return hess


def loglik_hessian(theta_vec: np.ndarray, feats: PanelFeatures) -> np.ndarray:
    """Exact Hessian of the full log-likelihood (negative semidefinite)."""
    n, q = feats.n, feats.q
    matrix, degrees = link_table(n - 1)
    s = feats.feature_scale
    m_deg = feats.m[degrees]
    f_cost = s * (m_deg - 1.0)
    f_gen_base = s * degrees * m_deg / (n - 1) ** 2
    a1, a2, a3 = _coefficients(theta_vec, feats)
    n_params = 4 if np.asarray(theta_vec).shape == (4,) else 16

    D = feats.n_obs
    v2 = np.empty((D, 3, 3))
    grid2 = feats.grid ** 2
    rows_per_chunk = max(1, _CHUNK_CELLS // (matrix.shape[0] * q))
    for start in range(0, D, rows_per_chunk):
        sl = slice(start, min(start + rows_per_chunk, D))
        w = s * (feats.v[sl] @ matrix.T) * m_deg / (n - 1)
        f_dir = feats.treat[sl, np.newaxis] * w
        f_gen = feats.in_total[sl, np.newaxis] * f_gen_base
        psi = a1[sl, np.newaxis] * f_cost + a2[sl, np.newaxis] * f_gen \
            + a3[sl, np.newaxis] * f_dir
        util = psi[:, :, np.newaxis] * feats.grid
        peak = util.max(axis=(1, 2))
        np.exp(util - peak[:, np.newaxis, np.newaxis], out=util)
        z = util.sum(axis=(1, 2))
        cw = (util @ feats.grid) / z[:, np.newaxis]
        cw2 = (util @ grid2) / z[:, np.newaxis]
        m1 = np.stack([cw @ f_cost, (cw * f_gen).sum(axis=1),
                       (cw * f_dir).sum(axis=1)], axis=1)
        m2 = np.empty((cw.shape[0], 3, 3))
        m2[:, 0, 0] = cw2 @ (f_cost ** 2)
        m2[:, 0, 1] = m2[:, 1, 0] = (cw2 * f_gen) @ f_cost
        m2[:, 0, 2] = m2[:, 2, 0] = (cw2 * f_dir) @ f_cost
        m2[:, 1, 1] = (cw2 * f_gen * f_gen).sum(axis=1)
        m2[:, 1, 2] = m2[:, 2, 1] = (cw2 * f_gen * f_dir).sum(axis=1)
        m2[:, 2, 2] = (cw2 * f_dir * f_dir).sum(axis=1)
        v2[sl] = m2 - m1[:, :, np.newaxis] * m1[:, np.newaxis, :]
    return _hessian_from_blocks(v2, feats, n_params)


def pseudo_loglik_hessian(theta_vec: np.ndarray, feats: PanelFeatures) -> np.ndarray:
    """Exact Hessian of the log-pseudolikelihood."""
    n = feats.n
    s = feats.feature_scale
    a1, a2, a3 = _coefficients(theta_vec, feats)
    n_params = 4 if np.asarray(theta_vec).shape == (4,) else 16

    def bases(d, w):
        m_d = feats.m[d]
        f1 = s * (m_d - 1.0)
        if d.ndim == 1:
            f2 = s * feats.in_total * d * m_d / (n - 1) ** 2
            f3 = s * feats.treat * m_d * w / (n - 1)
        else:
            f2 = s * feats.in_total[:, np.newaxis] * d * m_d / (n - 1) ** 2
            f3 = s * feats.treat[:, np.newaxis] * m_d * w / (n - 1)
        return f1, f2, f3

    w_obs = (feats.link_vec * feats.v).sum(axis=1)
    f1o, f2o, f3o = bases(feats.d_obs, w_obs)
    psi_obs = a1 * f1o + a2 * f2o + a3 * f3o

    util_c = psi_obs[:, np.newaxis] * feats.grid
    peak = util_c.max(axis=1)
    wexp = np.exp(util_c - peak[:, np.newaxis])
    z_c = wexp.sum(axis=1)
    e_c = (wexp @ feats.grid) / z_c
    var_c = (wexp @ (feats.grid ** 2)) / z_c - e_c ** 2
    b_obs = np.stack([f1o, f2o, f3o], axis=1)
    v2 = var_c[:, np.newaxis, np.newaxis] * b_obs[:, :, np.newaxis] * b_obs[:, np.newaxis, :]

    bit_on = feats.link_vec.astype(bool)
    d0 = feats.d_obs[:, np.newaxis] - bit_on
    w0 = w_obs[:, np.newaxis] - bit_on * feats.v
    f1_0, f2_0, f3_0 = bases(d0, w0)
    f1_1, f2_1, f3_1 = bases(d0 + 1, w0 + feats.v)
    psi0 = a1[:, np.newaxis] * f1_0 + a2[:, np.newaxis] * f2_0 + a3[:, np.newaxis] * f3_0
    psi1 = a1[:, np.newaxis] * f1_1 + a2[:, np.newaxis] * f2_1 + a3[:, np.newaxis] * f3_1
    u0 = feats.c_obs[:, np.newaxis] * psi0
    u1 = feats.c_obs[:, np.newaxis] * psi1
    p1 = 1.0 / (1.0 + np.exp(u0 - u1))
    weight = feats.c_obs[:, np.newaxis] ** 2 * p1 * (1.0 - p1)
    delta = np.stack([f1_1 - f1_0, f2_1 - f2_0, f3_1 - f3_0], axis=2)  # (D, n-1, 3)
    v2 += np.einsum("oj,oja,ojb->oab", weight, delta, delta)
    return _hessian_from_blocks(v2, feats, n_params)


OBJECTIVES = {
    "loglik": loglik_core,
    "pseudo_loglik": pseudo_loglik_core,
}

HESSIANS = {
    "loglik": loglik_hessian,
    "pseudo_loglik": pseudo_loglik_hessian,
}


def group_scores(score_matrix: np.ndarray, feats: PanelFeatures) -> np.ndarray:
    """Sum per-observation score rows within each group (cluster)."""
    k = score_matrix.shape[1]
    out = np.zeros((feats.n_groups, k))
    np.add.at(out, feats.group_idx, score_matrix)
    return out
