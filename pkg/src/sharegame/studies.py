"""Seeded replication studies: parameter recovery, SE ordering, DiD recovery.

These drive the desk-scale validation of the whole pipeline: simulate at
known parameters, re-estimate, and tally coverage, sign agreement, and
dispersion orderings.  Each study is a pure function of its seeds and runs
its replications in parallel worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import MpcrSpec, ThetaParams
from .dynamics import SimConfig, simulate_panel
from .errors import SingularHessianError
from .estimation import FitOptions, fit
from .metrics import did_regression
from .parallel import parallel_map
from .uncertainty import bootstrap_mc, bootstrap_np, se_asymptotic

EXPERIMENT_THETA = ThetaParams(5.2368, 20.1884, -6.9893, 24.2407)


def experiment_config(theta: ThetaParams = EXPERIMENT_THETA, seed: int = 0,
                      **overrides) -> SimConfig:
    """The laboratory design: 46 groups (28 treated), n=4, 30 periods,
    intervention at period 16, 21-point grid, MPCR 1.6."""
    base = dict(theta=theta, n_groups=46, n_treatment_groups=28, n=4,
                periods=30, treatment_start=16, q=21,
                spec=MpcrSpec.purely_congestive(1.6), seed=seed)
    base.update(overrides)
    return SimConfig(**base)


@dataclass
class RecoveryStudy:
    theta_star: np.ndarray
    mle: np.ndarray            # (R, 4)
    mle_converged: np.ndarray
    se_asym: np.ndarray        # (R, 4)
    mple: np.ndarray           # (R, 4)
    mple_converged: np.ndarray
    seeds: tuple

    @property
    def n_reps(self) -> int:
        return self.mle.shape[0]

    def coverage_counts(self, width: float = 3.0) -> np.ndarray:
        """Per component: replications with |theta_hat - theta*| <= width * SE."""
        inside = np.abs(self.mle - self.theta_star) <= width * self.se_asym
        return inside.sum(axis=0)

    def sign_match_count(self) -> int:
        """Replications where MPLE matches MLE signs on all four components."""
        return int(np.all(np.sign(self.mple) == np.sign(self.mle), axis=1).sum())

    def mple_bias(self, component: int = 1) -> dict:
        """Mean bias of an MPLE component with its Monte-Carlo t statistic."""
        diff = self.mple[:, component] - self.theta_star[component]
        t_stat = diff.mean() / (diff.std(ddof=1) / np.sqrt(self.n_reps))
        paired = self.mple[:, component] - self.mle[:, component]
        t_paired = paired.mean() / (paired.std(ddof=1) / np.sqrt(self.n_reps))
        return {"mean_bias": float(diff.mean()), "t_stat": float(t_stat),
                "mean_gap_vs_mle": float(paired.mean()),
                "t_stat_vs_mle": float(t_paired)}

    def to_dict(self) -> dict:
        return {
            "theta_star": [float(v) for v in self.theta_star],
            "n_reps": self.n_reps,
            "coverage_3se": [int(v) for v in self.coverage_counts()],
            "sign_match": self.sign_match_count(),
            "mle_mean": [float(v) for v in self.mle.mean(axis=0)],
            "mle_sd": [float(v) for v in self.mle.std(axis=0, ddof=1)],
            "mple_mean": [float(v) for v in self.mple.mean(axis=0)],
            "mple_bias_gen": self.mple_bias(1),
            "mle_converged": int(self.mle_converged.sum()),
            "mple_converged": int(self.mple_converged.sum()),
        }


def _recovery_rep(args):
    seed, theta_vec, cfg_overrides, options = args
    theta_star = ThetaParams.from_flat(np.asarray(theta_vec))
    cfg = experiment_config(theta_star, seed=seed, **cfg_overrides)
    panels = simulate_panel(cfg)
    res_mle = fit("mle", panels, options=options, spec=cfg.spec, q=cfg.q)
    try:
        se = se_asymptotic(panels, res_mle.theta, "mle", spec=cfg.spec, q=cfg.q)
    except SingularHessianError:
        se = np.full(4, np.nan)
    res_mple = fit("mple", panels, options=options, spec=cfg.spec, q=cfg.q)
    return (res_mle.theta.flat(), res_mle.converged, se,
            res_mple.theta.flat(), res_mple.converged)


def recovery_study(
    theta_star: ThetaParams = EXPERIMENT_THETA,
    n_reps: int = 100,
    master_seed: int = 20_000,
    options: Optional[FitOptions] = None,
    workers: Optional[int] = None,
    **cfg_overrides,
) -> RecoveryStudy:
    """Simulate-and-re-estimate study at the experiment design.

    Runs MLE and MPLE on each of ``n_reps`` independently seeded synthetic
    datasets and collects estimates, convergence flags, and asymptotic SEs.
    """
    options = options or FitOptions(multistart=0)
    seeds = tuple(int(master_seed) + r for r in range(n_reps))
    tasks = [(s, theta_star.flat(), cfg_overrides, options) for s in seeds]
    rows = parallel_map(_recovery_rep, tasks, workers)
    return RecoveryStudy(
        theta_star=theta_star.flat(),
        mle=np.array([r[0] for r in rows]),
        mle_converged=np.array([r[1] for r in rows]),
        se_asym=np.array([r[2] for r in rows]),
        mple=np.array([r[3] for r in rows]),
        mple_converged=np.array([r[4] for r in rows]),
        seeds=seeds,
    )


@dataclass
class SeOrderingStudy:
    se_asym: np.ndarray     # (S, 4)
    se_mc: np.ndarray       # (S, 4)
    se_np: np.ndarray       # (S, 4)
    gen_persistence: np.ndarray  # (S,) MC fraction with theta2 + theta3 > 0
    mc_dropped: np.ndarray
    np_dropped: np.ndarray
    seeds: tuple

    def medians(self) -> dict:
        return {
            "asymptotic": np.median(self.se_asym, axis=0),
            "mc": np.median(self.se_mc, axis=0),
            "np": np.median(self.se_np, axis=0),
        }

    def to_dict(self) -> dict:
        med = self.medians()
        return {
            "seeds": list(self.seeds),
            "median_se_asymptotic": [float(v) for v in med["asymptotic"]],
            "median_se_mc": [float(v) for v in med["mc"]],
            "median_se_np": [float(v) for v in med["np"]],
            "mc_over_asym": [float(v) for v in med["mc"] / med["asymptotic"]],
            "np_over_mc": [float(v) for v in med["np"] / med["mc"]],
            "gen_persistence": [float(v) for v in self.gen_persistence],
            "mc_dropped": [int(v) for v in self.mc_dropped],
            "np_dropped": [int(v) for v in self.np_dropped],
        }


def se_ordering_study(
    theta_star: ThetaParams = EXPERIMENT_THETA,
    n_seeds: int = 10,
    n_replicates: int = 200,
    master_seed: int = 40_000,
    options: Optional[FitOptions] = None,
    workers: Optional[int] = None,
    **cfg_overrides,
) -> SeOrderingStudy:
    """Three SE families on repeated experiment-scale simulations.

    For each seed: simulate once at theta*, fit the MLE, then compute the
    clustered sandwich, the semi-parametric Monte-Carlo bootstrap, and the
    nonparametric clustered bootstrap (both with ``n_replicates``).
    """
    options = options or FitOptions(multistart=0)
    seeds = tuple(int(master_seed) + 7919 * s for s in range(n_seeds))
    se_a, se_m, se_n, persist, mdrop, ndrop = [], [], [], [], [], []
    for seed in seeds:
        cfg = experiment_config(theta_star, seed=seed, **cfg_overrides)
        panels = simulate_panel(cfg)
        res = fit("mle", panels, options=options, spec=cfg.spec, q=cfg.q)
        se_a.append(se_asymptotic(panels, res.theta, "mle", spec=cfg.spec, q=cfg.q))
        mc = bootstrap_mc(panels, res.theta, n_replicates, "mle", spec=cfg.spec,
                          q=cfg.q, seed=seed + 1, options=options, workers=workers)
        np_rep = bootstrap_np(panels, "mle", n_replicates, spec=cfg.spec, q=cfg.q,
                              seed=seed + 2, options=options, workers=workers)
        se_m.append(mc.se)
        se_n.append(np_rep.se)
        persist.append(mc.sign_persistence["gen_plus_treat_gen"])
        mdrop.append(mc.n_dropped)
        ndrop.append(np_rep.n_dropped)
    return SeOrderingStudy(
        se_asym=np.array(se_a), se_mc=np.array(se_m), se_np=np.array(se_n),
        gen_persistence=np.array(persist),
        mc_dropped=np.array(mdrop), np_dropped=np.array(ndrop),
        seeds=seeds,
    )


@dataclass
class DidRecoveryStudy:
    planted: dict
    estimates: np.ndarray    # (S, 3) period, treatment, treatment_x_period
    ses: np.ndarray          # (S, 3)
    seeds: tuple

    def coverage_counts(self, width: float = 2.0) -> np.ndarray:
        truth = np.array([self.planted["period"], self.planted["treatment"],
                          self.planted["treatment_x_period"]])
        inside = np.abs(self.estimates - truth) <= width * self.ses
        return inside.sum(axis=0)

    def to_dict(self) -> dict:
        return {
            "planted": self.planted,
            "n_seeds": len(self.seeds),
            "coverage_2se": [int(v) for v in self.coverage_counts()],
            "mean_estimates": [float(v) for v in self.estimates.mean(axis=0)],
        }


def _did_rep(args):
    seed, planted, n_groups, n_treatment, periods, ts, noise_sd = args
    rng = np.random.default_rng(seed)
    effects = rng.standard_normal(n_groups)
    rows = []
    for g in range(n_groups):
        is_t = g < n_treatment
        for t in range(1, periods + 1):
            treated = 1.0 if (is_t and t >= ts) else 0.0
            y = (effects[g] + planted["period"] * t + planted["treatment"] * treated
                 + planted["treatment_x_period"] * treated * (t - ts)
                 + noise_sd * rng.standard_normal())
            rows.append({"group": str(g), "period": t,
                         "is_treatment_group": int(is_t), "treatment_start": ts,
                         "y": y})
    res = did_regression(rows, "y")
    coefs = res["coefficients"]
    order = ("period", "treatment", "treatment_x_period")
    return ([coefs[k]["coef"] for k in order], [coefs[k]["se"] for k in order])


def did_recovery_study(
    planted: Optional[dict] = None,
    n_seeds: int = 100,
    master_seed: int = 60_000,
    n_groups: int = 46,
    n_treatment: int = 28,
    periods: int = 30,
    treatment_start: int = 16,
    noise_sd: float = 0.5,
    workers: Optional[int] = None,
) -> DidRecoveryStudy:
    """Planted-coefficient panels with group effects and clustered inference."""
    planted = planted or {"period": -0.03, "treatment": 0.8,
                          "treatment_x_period": 0.01}
    seeds = tuple(int(master_seed) + s for s in range(n_seeds))
    tasks = [(s, planted, n_groups, n_treatment, periods, treatment_start,
              noise_sd) for s in seeds]
    rows = parallel_map(_did_rep, tasks, workers)
    return DidRecoveryStudy(
        planted=planted,
        estimates=np.array([r[0] for r in rows]),
        ses=np.array([r[1] for r in rows]),
        seeds=seeds,
    )
