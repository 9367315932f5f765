"""Command-line orchestration: simulate, estimate, analyze, bench.

Exit codes are stable: 0 success, 2 usage error, 3 estimation did not
converge, 4 data error.  Every command echoes its effective configuration
into its outputs: JSON reports carry a ``config`` key, CSV outputs get a
sidecar ``<name>.config.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from typing import Optional

import numpy as np

from . import __version__
from .core import MpcrSpec, ThetaParams
from .data_io import (
    attach_covariates,
    load_config,
    mpcr_to_dict,
    pca_covariates,
    read_covariates,
    read_panel,
    save_json,
    sim_config_from_dict,
    sim_config_to_dict,
    write_panel,
)
from .dynamics import SimConfig, simulate_panel
from .errors import DataError, SharegameError
from .estimation import FitOptions, fit, fit_heterogeneous, theta_from_report
from .features import build_features
from .metrics import OUTCOME_NAMES, did_regression, outcomes_table
from .parallel import THREADS_ENV_VAR, resolve_workers
from .stability import census_summary, stability_census
from .uncertainty import bootstrap_mc, bootstrap_np, se_asymptotic

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NON_CONVERGENCE = 3
EXIT_DATA = 4


def _parse_theta(text: str) -> ThetaParams:
    parts = [float(v) for v in text.split(",")]
    return ThetaParams.from_flat(np.asarray(parts))


def _mpcr_from_args(args) -> MpcrSpec:
    return MpcrSpec.purely_congestive(args.mpcr_k)


def cmd_simulate(args) -> int:
    if args.config:
        cfg = sim_config_from_dict(load_config(args.config))
    else:
        if args.theta is None:
            print("simulate: --theta is required without --config", file=sys.stderr)
            return EXIT_USAGE
        cfg = SimConfig(
            theta=_parse_theta(args.theta),
            n_groups=args.groups,
            n_treatment_groups=args.treatment_groups,
            n=args.n,
            periods=args.periods,
            treatment_start=args.treatment_start,
            q=args.q,
            spec=_mpcr_from_args(args),
            seed=args.seed,
            initial_rule=args.initial_rule,
        )
    panels = simulate_panel(cfg)
    write_panel(panels, args.out)
    save_json({"command": "simulate", "config": sim_config_to_dict(cfg)},
              args.out + ".config.json")
    mean_c = float(np.mean([
        np.mean(contrib.c) for p in panels for _, contrib in p.states
    ]))
    print(f"wrote {args.out}: {len(panels)} groups x {cfg.periods} periods x "
          f"{cfg.n} players, mean contribution {mean_c:.4f}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    panels = read_panel(args.data, q=args.q)
    if args.covariates:
        panels = attach_covariates(panels, read_covariates(args.covariates))
    spec = _mpcr_from_args(args)
    options = FitOptions(multistart=args.multistart, seed=args.seed,
                         drop_boundary=args.drop_boundary)
    workers = args.threads
    if args.heterogeneous:
        result = fit_heterogeneous(args.method, panels, options=options,
                                   spec=spec, q=args.q)
    else:
        result = fit(args.method, panels, options=options, spec=spec, q=args.q)

    want = {"asymptotic", "mc", "np"} if args.se == "all" else \
        {args.se} if args.se else set()
    if "asymptotic" in want:
        result.se_asymptotic = se_asymptotic(
            panels, result.theta, args.method, spec=spec, q=args.q,
            drop_boundary=args.drop_boundary)
    extra = {}
    if "mc" in want:
        report = bootstrap_mc(panels, result.theta, args.replicates, args.method,
                              spec=spec, q=args.q, seed=args.seed, options=options,
                              workers=workers)
        result.se_mc_bootstrap = report.se
        extra["mc_bootstrap"] = report.to_dict()
    if "np" in want:
        report = bootstrap_np(panels, args.method, args.replicates, spec=spec,
                              q=args.q, seed=args.seed, options=options,
                              heterogeneous=args.heterogeneous, workers=workers)
        result.se_np_bootstrap = report.se
        extra["np_bootstrap"] = report.to_dict()

    payload = result.to_dict()
    payload["config"]["data"] = args.data
    payload["config"]["se_requested"] = sorted(want)
    payload["config"]["replicates"] = args.replicates
    payload["config"]["threads"] = resolve_workers(workers)
    payload.update(extra)
    save_json(payload, args.out)
    print(f"{args.method.upper()} loglik {result.loglik:.4f}, "
          f"converged={result.converged}, wrote {args.out}")
    return EXIT_OK if result.converged else EXIT_NON_CONVERGENCE


def _write_csv(path: str, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_analyze(args) -> int:
    what = set(args.what.split(",")) if args.what != "all" else \
        {"stability", "metrics", "regressions"}
    if "pca" in what and not args.covariates:
        print("analyze: --what pca requires --covariates", file=sys.stderr)
        return EXIT_USAGE
    if what & {"stability"} and not args.theta_file:
        print("analyze: stability analysis requires --theta-file", file=sys.stderr)
        return EXIT_USAGE
    os.makedirs(args.out_dir, exist_ok=True)
    spec = _mpcr_from_args(args)
    config = {"command": "analyze", "data": args.data, "q": args.q,
              "mpcr": mpcr_to_dict(spec), "what": sorted(what),
              "theta_file": args.theta_file}
    panels = read_panel(args.data, q=args.q) if args.data else []

    if "stability" in what:
        theta = theta_from_report(args.theta_file)
        if theta.has_het and args.covariates:
            panels = attach_covariates(panels, read_covariates(args.covariates))
        rows = stability_census(panels, theta, spec)
        _write_csv(
            os.path.join(args.out_dir, "census.csv"),
            ("group", "period", "regime", "topo_stable", "behav_stable",
             "efficient_structure", "motif"),
            [(r["group"], r["period"], r["regime"], r["topo_stable"],
              r["behav_stable"], r["efficient_structure"], r["motif"])
             for r in rows],
        )
        summary = census_summary(rows)
        summary["stable_by_motif"] = {
            f"{motif}|{regime}": count
            for (motif, regime), count in summary["stable_by_motif"].items()
        }
        save_json({"config": config, "summary": summary},
                  os.path.join(args.out_dir, "census_summary.json"))
        print(f"census: {summary['n_topo_stable']} topologically stable of "
              f"{summary['n_cross_sections']} cross-sections")

    if "metrics" in what:
        rows = outcomes_table(panels, spec)
        _write_csv(
            os.path.join(args.out_dir, "outcomes.csv"),
            ("group", "period", "is_treatment_group", "treatment_start")
            + OUTCOME_NAMES,
            [(r["group"], r["period"], r["is_treatment_group"],
              r["treatment_start"])
             + tuple("" if r[name] is None else r[name] for name in OUTCOME_NAMES)
             for r in rows],
        )
        save_json({"config": config},
                  os.path.join(args.out_dir, "outcomes.csv.config.json"))
        print(f"outcomes: {len(rows)} cross-sections")

    if "regressions" in what:
        rows = outcomes_table(panels, spec)
        report = {"config": config, "regressions": {}}
        for name in OUTCOME_NAMES:
            try:
                report["regressions"][name] = did_regression(rows, name)
            except DataError as exc:
                report["regressions"][name] = {"error": str(exc)}
        save_json(report, os.path.join(args.out_dir, "regressions.json"))
        print("regressions: wrote regressions.json")

    if "pca" in what:
        with open(args.covariates, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[2] != "trust" or len(header) < 5:
                print("analyze: pca needs a covariate file with survey items",
                      file=sys.stderr)
                return EXIT_USAGE
            items = np.array([[float(v) for v in row[3:]] for row in reader])
        pca = pca_covariates(items, n_components=2)
        ratios = pca.explained_variance_ratios
        _write_csv(
            os.path.join(args.out_dir, "scree.csv"),
            ("component", "variance_ratio", "cumulative_ratio"),
            [(i + 1, repr(float(r)), repr(float(c)))
             for i, (r, c) in enumerate(zip(ratios, np.cumsum(ratios)))],
        )
        save_json({"config": config, "top_two_ratio": float(ratios[:2].sum())},
                  os.path.join(args.out_dir, "scree.csv.config.json"))
        print(f"pca: top two components explain {ratios[:2].sum():.3f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .estimation import loglik as eval_loglik  # local alias for clarity
    from .estimation import pseudo_loglik as eval_pseudo

    try:
        lo, hi = (int(v) for v in args.n_range.split(":"))
    except ValueError:
        print("bench: --n-range must look like 4:12", file=sys.stderr)
        return EXIT_USAGE
    if not 2 <= lo <= hi <= 16:
        print("bench: n range must lie within 2..16", file=sys.stderr)
        return EXIT_USAGE
    theta = ThetaParams(2.0, 5.0, -1.0, 6.0)
    spec = MpcrSpec.purely_congestive(1.6)
    rows = []
    for n in range(lo, hi + 1):
        cfg = SimConfig(theta=theta, n_groups=args.groups,
                        n_treatment_groups=args.groups // 2, n=n,
                        periods=args.periods,
                        treatment_start=max(2, args.periods // 2),
                        q=args.q, seed=args.seed)
        panels = simulate_panel(cfg)
        feats = build_features(panels, spec, args.q)
        timings = {"loglik": [], "pseudo": []}
        for _ in range(args.reps):
            t0 = time.perf_counter()
            eval_loglik(panels, theta, spec, q=args.q)
            timings["loglik"].append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            eval_pseudo(panels, theta, spec, q=args.q)
            timings["pseudo"].append(time.perf_counter() - t0)
        rows.append({
            "n": n,
            "loglik_seconds": float(np.median(timings["loglik"])),
            "pseudo_seconds": float(np.median(timings["pseudo"])),
            "decision_obs": feats.n_obs,
            "full_terms_per_player_period": (2 ** (n - 1)) * args.q,
            "pseudo_terms_per_player_period": 2 * (n - 1) + args.q,
        })
        print(f"n={n}: loglik {rows[-1]['loglik_seconds']:.4f}s, "
              f"pseudo {rows[-1]['pseudo_seconds']:.4f}s")

    ns = np.array([r["n"] for r in rows], dtype=float)
    log2_full = np.log2([r["loglik_seconds"] for r in rows])
    full_slope = np.polyfit(ns, log2_full, 1)[0]
    log_pseudo = np.log([r["pseudo_seconds"] for r in rows])
    pseudo_exp = np.polyfit(np.log(ns), log_pseudo, 1)[0]
    print(f"fitted growth: loglik time doubles every {1.0 / full_slope:.2f} "
          f"players; pseudo time ~ n^{pseudo_exp:.2f}")

    _write_csv(args.out,
               ("n", "loglik_seconds", "pseudo_seconds", "decision_obs",
                "full_terms_per_player_period", "pseudo_terms_per_player_period"),
               [(r["n"], repr(r["loglik_seconds"]), repr(r["pseudo_seconds"]),
                 r["decision_obs"], r["full_terms_per_player_period"],
                 r["pseudo_terms_per_player_period"]) for r in rows])
    save_json({"command": "bench",
               "config": {"n_range": args.n_range, "q": args.q, "reps": args.reps,
                          "groups": args.groups, "periods": args.periods,
                          "seed": args.seed},
               "fitted": {"loglik_log2_slope": float(full_slope),
                          "pseudo_power": float(pseudo_exp)}},
              args.out + ".config.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sharegame",
        description="Voluntary resource-sharing game: simulation, estimation, analysis.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate synthetic panels to CSV")
    sim.add_argument("--config", help="JSON config file (overrides inline flags)")
    sim.add_argument("--groups", type=int, default=46)
    sim.add_argument("--treatment-groups", type=int, default=28)
    sim.add_argument("--n", type=int, default=4)
    sim.add_argument("--periods", type=int, default=30)
    sim.add_argument("--treatment-start", type=int, default=16)
    sim.add_argument("--theta", help="comma-separated parameter values (4 or 16)")
    sim.add_argument("--q", type=int, default=21)
    sim.add_argument("--mpcr-k", type=float, default=1.6)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--initial-rule", choices=("logit", "empty"), default="logit")
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="fit the structural model to a panel CSV")
    est.add_argument("--data", required=True)
    est.add_argument("--method", choices=("mle", "mple"), required=True)
    est.add_argument("--covariates")
    est.add_argument("--heterogeneous", action="store_true")
    est.add_argument("--q", type=int, default=21)
    est.add_argument("--mpcr-k", type=float, default=1.6)
    est.add_argument("--se", choices=("asymptotic", "mc", "np", "all"))
    est.add_argument("--replicates", type=int, default=200)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--multistart", type=int, default=5)
    est.add_argument("--drop-boundary", action="store_true")
    est.add_argument("--threads", type=int, default=None,
                     help=f"worker processes (default: ${THREADS_ENV_VAR} or cores)")
    est.add_argument("--out", required=True)
    est.set_defaults(func=cmd_estimate)

    ana = sub.add_parser("analyze", help="stability census, outcomes, regressions, pca")
    ana.add_argument("--data", required=True)
    ana.add_argument("--theta-file", help="estimation report JSON (for stability)")
    ana.add_argument("--what", default="all",
                     help="comma list of stability,metrics,regressions,pca or 'all'")
    ana.add_argument("--covariates", help="covariate/survey CSV (for pca)")
    ana.add_argument("--q", type=int, default=21)
    ana.add_argument("--mpcr-k", type=float, default=1.6)
    ana.add_argument("--out-dir", default=".")
    ana.set_defaults(func=cmd_analyze)

    ben = sub.add_parser("bench", help="objective-evaluation scaling table")
    ben.add_argument("--n-range", default="4:12")
    ben.add_argument("--q", type=int, default=21)
    ben.add_argument("--reps", type=int, default=3)
    ben.add_argument("--groups", type=int, default=20)
    ben.add_argument("--periods", type=int, default=11)
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--out", required=True)
    ben.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SharegameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
