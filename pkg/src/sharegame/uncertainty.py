"""Standard errors: asymptotic clustered sandwich and two bootstraps.

The sandwich pairs a finite-difference Hessian of the analytic score with
a group-clustered outer product of scores.  The semi-parametric bootstrap
re-simulates whole panels at the point estimate and re-fits; the
nonparametric bootstrap resamples whole groups with replacement within the
treatment and baseline strata, so each group's entire sequence is one
observation.  Replicates are embarrassingly parallel with per-replicate
child seeds, making every report a pure function of (inputs, seed, B).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import MpcrSpec, ThetaParams
from .dynamics import (
    DEFAULT_MH_SWEEPS,
    GroupPanel,
    design_of,
    simulate_design,
)
from .errors import ConfigurationError, SingularHessianError
from .estimation import (
    DEFAULT_SPEC,
    FitOptions,
    _objective_for,
    fit_features,
)
from .features import OBJECTIVES, build_features, group_scores
from .parallel import parallel_map

DEFAULT_FD_STEP = 1e-5


def fd_hessian(objective_name: str, feats, theta_vec: np.ndarray,
               free_idx: np.ndarray, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Hessian of the objective by central differences of the analytic score.

    Steps adapt to coordinate scale: h_p = step * max(1, |theta_p|).
    """
    objective = OBJECTIVES[objective_name]
    k = free_idx.shape[0]
    hess = np.empty((k, k))
    for col, p in enumerate(free_idx):
        h = step * max(1.0, abs(theta_vec[p]))
        plus, minus = theta_vec.copy(), theta_vec.copy()
        plus[p] += h
        minus[p] -= h
        _, s_plus = objective(plus, feats, want_scores=True)
        _, s_minus = objective(minus, feats, want_scores=True)
        hess[:, col] = (s_plus.sum(axis=0)[free_idx]
                        - s_minus.sum(axis=0)[free_idx]) / (2 * h)
    return 0.5 * (hess + hess.T)


def clustered_sandwich(objective_name: str, feats, theta_vec: np.ndarray,
                       free_idx: Optional[np.ndarray] = None,
                       step: float = DEFAULT_FD_STEP) -> dict:
    """H^-1 G H^-1 with H the negative Hessian and G the clustered score outer.

    G carries the small-sample factor C / (C - 1) over C groups.
    """
    if free_idx is None:
        free_idx = np.arange(theta_vec.shape[0])
    neg_hess = -fd_hessian(objective_name, feats, theta_vec, free_idx, step)
    cond = np.linalg.cond(neg_hess)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularHessianError("Hessian is numerically singular", cond)
    _, scores = OBJECTIVES[objective_name](theta_vec, feats, want_scores=True)
    by_group = group_scores(scores, feats)[:, free_idx]
    c_groups = by_group.shape[0]
    meat = by_group.T @ by_group * (c_groups / (c_groups - 1))
    bread = np.linalg.inv(neg_hess)
    cov = bread @ meat @ bread
    return {"cov": cov, "neg_hessian": neg_hess, "meat": meat,
            "n_groups": c_groups, "condition_number": float(cond)}


def se_asymptotic(
    panels: Sequence[GroupPanel],
    theta_hat: ThetaParams,
    method: str,
    spec: MpcrSpec = DEFAULT_SPEC,
    q: int = 21,
    drop_boundary: bool = False,
    free: Optional[tuple] = None,
    fd_step: float = DEFAULT_FD_STEP,
) -> np.ndarray:
    """Group-clustered sandwich standard errors at the point estimate."""
    objective_name = _objective_for(method)
    feats = build_features(panels, spec, q, require_covariates=theta_hat.has_het,
                           drop_boundary=drop_boundary)
    vec = theta_hat.flat()
    names = theta_hat.names()
    if free is None:
        free_idx = np.arange(vec.shape[0])
    else:
        free_idx = np.array([names.index(f) for f in free])
    sandwich = clustered_sandwich(objective_name, feats, vec, free_idx, fd_step)
    return np.sqrt(np.diag(sandwich["cov"]))


@dataclass
class BootstrapReport:
    """Replicate estimates with dispersion summaries.

    ``sign_persistence`` records, per parameter, the fraction of kept
    replicates with a positive estimate, plus the fraction where the
    generalized-reciprocity total (base plus treatment shift) stays
    positive.
    """

    method: str
    fit_method: str
    n_requested: int
    replicates: np.ndarray
    param_names: tuple
    n_dropped: int
    seed: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.replicates = np.atleast_2d(np.asarray(self.replicates, dtype=np.float64))

    @property
    def n_kept(self) -> int:
        return self.replicates.shape[0]

    @property
    def flagged(self) -> bool:
        return self.n_dropped > 0.05 * self.n_requested

    @property
    def se(self) -> np.ndarray:
        if self.n_kept < 2:
            return np.full(self.replicates.shape[1], np.nan)
        return self.replicates.std(axis=0, ddof=1)

    def percentiles(self, lo: float = 2.5, hi: float = 97.5) -> tuple:
        return (np.percentile(self.replicates, lo, axis=0),
                np.percentile(self.replicates, hi, axis=0))

    @property
    def sign_persistence(self) -> dict:
        frac = (self.replicates > 0).mean(axis=0)
        out = {name: float(f) for name, f in zip(self.param_names, frac)}
        names = list(self.param_names)
        if "gen_reciprocity" in names and "treat_gen_reciprocity" in names:
            total = (self.replicates[:, names.index("gen_reciprocity")]
                     + self.replicates[:, names.index("treat_gen_reciprocity")])
            out["gen_plus_treat_gen"] = float((total > 0).mean())
        return out

    def to_dict(self) -> dict:
        lo, hi = self.percentiles()
        return {
            "method": self.method,
            "fit_method": self.fit_method,
            "replicates_requested": self.n_requested,
            "replicates_kept": self.n_kept,
            "replicates_dropped": self.n_dropped,
            "flagged": self.flagged,
            "seed": self.seed,
            "param_names": list(self.param_names),
            "se": [float(v) for v in self.se],
            "percentile_2_5": [float(v) for v in lo],
            "percentile_97_5": [float(v) for v in hi],
            "sign_persistence": self.sign_persistence,
            "config": self.config,
        }

    def to_json(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def replicates_to_csv(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("replicate",) + tuple(self.param_names))
            for b, row in enumerate(self.replicates):
                writer.writerow([b] + [repr(float(v)) for v in row])


def _fit_with_retry(method, feats, theta0_vec, options, retry_starts, retry_seed):
    """Fit; on non-convergence, retry from extra random starts before giving up."""
    best = fit_features(method, feats, theta0_vec, options)
    if best["converged"] or retry_starts <= 0:
        return best
    retry_options = FitOptions(
        max_iters=options.max_iters, grad_tol=options.grad_tol,
        step_tol=options.step_tol, multistart=retry_starts,
        start_range=options.start_range, seed=retry_seed,
        drop_boundary=options.drop_boundary, free=options.free,
    )
    retry = fit_features(method, feats, theta0_vec, retry_options)
    return retry if retry["value"] > best["value"] or retry["converged"] else best


def _mc_replicate(args):
    (seed, designs, theta_vec, method, spec, q, options, theta0_vec,
     initial_rule, mh_sweeps, retry_starts) = args
    theta_hat = ThetaParams.from_flat(np.asarray(theta_vec))
    panels = simulate_design(designs, theta_hat, spec, q, seed,
                             initial_rule=initial_rule, mh_sweeps=mh_sweeps)
    feats = build_features(panels, spec, q,
                           require_covariates=theta_hat.has_het,
                           drop_boundary=options.drop_boundary)
    best = _fit_with_retry(method, feats, np.asarray(theta0_vec), options,
                           retry_starts, seed + 1)
    return best["theta_vec"] if best["converged"] else None


def _np_replicate(args):
    (seed, panels, indices, method, spec, q, options, theta0_vec, retry_starts) = args
    resampled = [panels[i] for i in indices]
    feats = build_features(resampled, spec, q,
                           require_covariates=len(np.asarray(theta0_vec)) > 4,
                           drop_boundary=options.drop_boundary)
    best = _fit_with_retry(method, feats, np.asarray(theta0_vec), options,
                           retry_starts, seed + 1)
    return best["theta_vec"] if best["converged"] else None


def _collect(results, names, method, fit_method, n_requested, seed, config):
    kept = [r for r in results if r is not None]
    replicates = np.array(kept) if kept else np.empty((0, len(names)))
    return BootstrapReport(
        method=method, fit_method=fit_method, n_requested=n_requested,
        replicates=replicates, param_names=names,
        n_dropped=n_requested - len(kept), seed=seed, config=config,
    )


def bootstrap_mc(
    panels: Sequence[GroupPanel],
    theta_hat: ThetaParams,
    n_replicates: int,
    method: str,
    spec: MpcrSpec = DEFAULT_SPEC,
    q: int = 21,
    seed: int = 0,
    options: Optional[FitOptions] = None,
    theta0: Optional[ThetaParams] = None,
    designs=None,
    initial_rule: str = "logit",
    mh_sweeps: int = DEFAULT_MH_SWEEPS,
    retry_starts: int = 3,
    workers: Optional[int] = None,
) -> BootstrapReport:
    """Semi-parametric Monte-Carlo bootstrap.

    Simulates ``n_replicates`` synthetic datasets at the point estimate,
    matching the observed design (group count, treatment assignment,
    period count, covariates), re-estimates each with the same method, and
    summarizes the replicate estimates.  Non-converged replicates are
    retried from ``retry_starts`` extra random starts, then dropped and
    counted; more than 5 percent dropped flags the report.
    """
    if n_replicates < 1:
        raise ConfigurationError("need at least one bootstrap replicate")
    options = options or FitOptions()
    designs = designs if designs is not None else design_of(panels)
    theta0_vec = (theta0.flat() if theta0 is not None
                  else np.zeros_like(theta_hat.flat()))
    seeds = [int(s.generate_state(1, dtype=np.uint64)[0])
             for s in np.random.SeedSequence(seed).spawn(n_replicates)]
    tasks = [
        (s, designs, theta_hat.flat(), method, spec, q, options, theta0_vec,
         initial_rule, mh_sweeps, retry_starts)
        for s in seeds
    ]
    results = parallel_map(_mc_replicate, tasks, workers)
    names = theta_hat.names()
    config = {"q": q, "mpcr": {"kind": spec.kind, "k": spec.k},
              "options": options.to_dict(), "initial_rule": initial_rule,
              "mh_sweeps": mh_sweeps, "n_groups": len(designs)}
    return _collect(results, names, "mc", method.lower(), n_replicates, seed, config)


def bootstrap_np(
    panels: Sequence[GroupPanel],
    method: str,
    n_replicates: int,
    spec: MpcrSpec = DEFAULT_SPEC,
    q: int = 21,
    seed: int = 0,
    options: Optional[FitOptions] = None,
    theta0: Optional[ThetaParams] = None,
    heterogeneous: bool = False,
    retry_starts: int = 3,
    workers: Optional[int] = None,
    identity_resample: bool = False,
) -> BootstrapReport:
    """Nonparametric clustered bootstrap.

    Each replicate draws whole groups with replacement, separately within
    the treatment and baseline strata so the treated proportion is
    preserved exactly; one group's entire sequence counts as a single
    observation.  ``identity_resample`` is a test hook that replays the
    original sample.
    """
    if n_replicates < 1:
        raise ConfigurationError("need at least one bootstrap replicate")
    options = options or FitOptions()
    treat_idx = [i for i, p in enumerate(panels) if p.is_treatment]
    base_idx = [i for i, p in enumerate(panels) if not p.is_treatment]
    n_params = 16 if heterogeneous else 4
    theta0_vec = theta0.flat() if theta0 is not None else np.zeros(n_params)
    children = np.random.SeedSequence(seed).spawn(n_replicates)
    tasks = []
    for child in children:
        rng = np.random.default_rng(child)
        child_seed = int(child.generate_state(1, dtype=np.uint64)[0])
        if identity_resample:
            indices = list(range(len(panels)))
        else:
            indices = ([int(i) for i in rng.choice(treat_idx, size=len(treat_idx))]
                       if treat_idx else [])
            indices += ([int(i) for i in rng.choice(base_idx, size=len(base_idx))]
                        if base_idx else [])
        tasks.append((child_seed, list(panels), indices, method, spec, q,
                      options, theta0_vec, retry_starts))
    results = parallel_map(_np_replicate, tasks, workers)
    names = (ThetaParams.from_flat(theta0_vec)).names()
    config = {"q": q, "mpcr": {"kind": spec.kind, "k": spec.k},
              "options": options.to_dict(),
              "strata": {"treatment": len(treat_idx), "baseline": len(base_idx)},
              "identity_resample": identity_resample}
    return _collect(results, names, "np", method.lower(), n_replicates, seed, config)
