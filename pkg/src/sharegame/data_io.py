"""Panel CSV ingestion and emission, covariate construction, config files.

Panel schema (UTF-8, LF, header required):

    group_id,period,player_id,treatment,contribution_tokens,targets

with one row per (group, period, player); ``targets`` is a
semicolon-separated list of recipient player ids (empty for none, never
the player herself).  Covariate files are keyed by (group_id, player_id)
and carry either precomputed ``trust,rec1,rec2`` columns or ``trust``
plus raw survey items, in which case the reciprocity scores are the top
two principal components of the items.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ContributionProfile,
    MpcrSpec,
    NetworkState,
    PlayerCovariates,
    ThetaParams,
)
from .dynamics import GroupPanel, SimConfig
from .errors import DataError

PANEL_HEADER = ("group_id", "period", "player_id", "treatment",
                "contribution_tokens", "targets")
COVARIATE_HEADER_PREFIX = ("group_id", "player_id")


def _parse_int(value: str, what: str, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataError(f"line {line}: {what} must be an integer, got {value!r}")


def read_panel(path: str, q: int = 21) -> list:
    """Parse and validate a panel CSV into GroupPanels.

    Treatment must be constant within a (group, period) and weakly
    increasing over periods within a group; periods must run 1..T with a
    fixed player set; tokens must lie in 0..q-1.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise DataError(f"{path}: empty file")
        if header != PANEL_HEADER:
            raise DataError(
                f"{path}: header must be {','.join(PANEL_HEADER)}, got {','.join(header)}"
            )
        groups: Dict[str, dict] = {}
        order = []
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(PANEL_HEADER):
                raise DataError(f"line {line}: expected {len(PANEL_HEADER)} fields, got {len(row)}")
            gid, period_s, player_s, treat_s, tokens_s, targets_s = row
            period = _parse_int(period_s, "period", line)
            player = _parse_int(player_s, "player_id", line)
            treatment = _parse_int(treat_s, "treatment", line)
            tokens = _parse_int(tokens_s, "contribution_tokens", line)
            if treatment not in (0, 1):
                raise DataError(f"line {line}: treatment must be 0 or 1")
            if not 0 <= tokens <= q - 1:
                raise DataError(
                    f"line {line}: contribution_tokens {tokens} outside 0..{q - 1}"
                )
            targets = []
            if targets_s.strip():
                for part in targets_s.split(";"):
                    targets.append(_parse_int(part, "target", line))
            if player in targets:
                raise DataError(f"line {line}: player {player} targets herself "
                                "(self-links are implicit)")
            if len(set(targets)) != len(targets):
                raise DataError(f"line {line}: duplicate target in {targets_s!r}")
            if gid not in groups:
                groups[gid] = {}
                order.append(gid)
            periods = groups[gid]
            slot = periods.setdefault(period, {})
            if player in slot:
                raise DataError(
                    f"line {line}: duplicate row for group {gid}, period {period}, "
                    f"player {player}"
                )
            slot[player] = (treatment, tokens, targets, line)

    panels = []
    for gid in order:
        panels.append(_assemble_group(gid, groups[gid], q))
    return panels


def _assemble_group(gid: str, periods: dict, q: int) -> GroupPanel:
    t_max = max(periods)
    if sorted(periods) != list(range(1, t_max + 1)):
        raise DataError(f"group {gid}: periods must run 1..{t_max} without gaps")
    players = sorted(periods[1])
    n = len(players)
    if not 2 <= n <= 24:
        raise DataError(f"group {gid}: player count {n} outside [2, 24]")
    index = {p: i for i, p in enumerate(players)}
    states = []
    prev_treat = 0
    treatment_start = 0
    for t in range(1, t_max + 1):
        slot = periods[t]
        if sorted(slot) != players:
            raise DataError(f"group {gid}, period {t}: player set differs from period 1")
        treats = {entry[0] for entry in slot.values()}
        if len(treats) != 1:
            raise DataError(f"group {gid}, period {t}: treatment flag not constant")
        treat = treats.pop()
        if treat < prev_treat:
            raise DataError(f"group {gid}, period {t}: treatment switches off "
                            "(must be weakly increasing)")
        if treat and not treatment_start:
            treatment_start = t
        prev_treat = treat
        adj = np.eye(n, dtype=np.int8)
        c = np.zeros(n)
        for player, entry in slot.items():
            _, tokens, targets, line = entry
            i = index[player]
            c[i] = tokens / (q - 1)
            for target in targets:
                if target not in index:
                    raise DataError(
                        f"line {line}: target {target} is not a player of group {gid}"
                    )
                adj[index[target], i] = 1
        states.append((NetworkState(adj), ContributionProfile(c, q=q)))
    return GroupPanel(gid, treatment_start, tuple(states))


def write_panel(panels: Sequence[GroupPanel], path: str):
    """Emit panels in the canonical row order (group, period, player)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PANEL_HEADER)
        for panel in panels:
            for t in range(1, panel.periods + 1):
                net, contrib = panel.state(t)
                tokens = contrib.tokens()
                treat = 1 if (panel.is_treatment and t >= panel.treatment_start) else 0
                for i in range(panel.n):
                    links = net.out_links(i)
                    others = [j for j in range(panel.n) if j != i]
                    targets = ";".join(str(others[k] + 1)
                                       for k in np.flatnonzero(links))
                    writer.writerow([panel.group_id, t, i + 1, treat,
                                     int(tokens[i]), targets])


@dataclass(frozen=True)
class PcaResult:
    """Principal component scores and the full explained-variance profile."""

    scores: np.ndarray
    explained_variance_ratios: np.ndarray
    loadings: np.ndarray


def pca_covariates(survey: np.ndarray, n_components: int = 2) -> PcaResult:
    """Correlation-matrix PCA of survey items.

    Columns are standardized; ratios are eigenvalues over the item count,
    sorted descending (they sum to one); each component's
    largest-magnitude loading is made positive so signs are reproducible.
    """
    survey = np.asarray(survey, dtype=np.float64)
    if survey.ndim != 2 or survey.shape[0] < 2 or survey.shape[1] < 2:
        raise DataError("survey matrix needs at least 2 subjects and 2 items")
    if not np.isfinite(survey).all():
        raise DataError("survey matrix contains missing or non-finite entries")
    if not 1 <= n_components <= survey.shape[1]:
        raise DataError(f"n_components must lie in 1..{survey.shape[1]}")
    sd = survey.std(axis=0)
    dead = np.flatnonzero(sd == 0)
    if dead.size:
        raise DataError(f"survey item {dead[0] + 1} has zero variance")
    z = (survey - survey.mean(axis=0)) / sd
    corr = z.T @ z / survey.shape[0]
    eigvals, eigvecs = np.linalg.eigh(corr)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    for j in range(eigvecs.shape[1]):
        lead = np.argmax(np.abs(eigvecs[:, j]))
        if eigvecs[lead, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    return PcaResult(
        scores=z @ eigvecs[:, :n_components],
        explained_variance_ratios=eigvals / survey.shape[1],
        loadings=eigvecs,
    )


def read_covariates(path: str) -> Dict[Tuple[str, int], PlayerCovariates]:
    """Read a covariate CSV, building reciprocity scores from items if needed.

    All three covariates are standardized to mean 0 and unit variance over
    the subjects in the file.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise DataError(f"{path}: empty file")
        if header[:2] != COVARIATE_HEADER_PREFIX:
            raise DataError(f"{path}: first columns must be group_id,player_id")
        rest = header[2:]
        keys, values = [], []
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(f"line {line}: expected {len(header)} fields")
            keys.append((row[0], _parse_int(row[1], "player_id", line)))
            try:
                values.append([float(v) for v in row[2:]])
            except ValueError:
                raise DataError(f"line {line}: non-numeric covariate value")
        if len(set(keys)) != len(keys):
            raise DataError(f"{path}: duplicate (group_id, player_id) rows")
        data = np.array(values)

    if rest == ("trust", "rec1", "rec2"):
        trust, rec1, rec2 = data[:, 0], data[:, 1], data[:, 2]
    elif rest and rest[0] == "trust" and len(rest) >= 3:
        trust = data[:, 0]
        pca = pca_covariates(data[:, 1:], n_components=2)
        rec1, rec2 = pca.scores[:, 0], pca.scores[:, 1]
    else:
        raise DataError(
            f"{path}: expected columns trust,rec1,rec2 or trust,item_1..item_k after ids"
        )

    def standardize(v):
        sd = v.std()
        if sd == 0:
            raise DataError("a covariate has zero variance across subjects")
        return (v - v.mean()) / sd

    trust, rec1, rec2 = standardize(trust), standardize(rec1), standardize(rec2)
    return {key: PlayerCovariates(float(t), float(r1), float(r2))
            for key, t, r1, r2 in zip(keys, trust, rec1, rec2)}


def attach_covariates(panels: Sequence[GroupPanel],
                      covariates: Dict[Tuple[str, int], PlayerCovariates]) -> list:
    """Return panels with per-player covariates attached (players are 1-based)."""
    out = []
    for panel in panels:
        covs = []
        for i in range(panel.n):
            key = (panel.group_id, i + 1)
            if key not in covariates:
                raise DataError(f"covariates missing for group {panel.group_id}, "
                                f"player {i + 1}")
            covs.append(covariates[key])
        out.append(GroupPanel(panel.group_id, panel.treatment_start,
                              panel.states, tuple(covs)))
    return out


def mpcr_to_dict(spec: MpcrSpec) -> dict:
    return {"kind": spec.kind, "k": spec.k,
            "k_table": None if spec.k_table is None else list(spec.k_table)}


def mpcr_from_dict(d: dict) -> MpcrSpec:
    table = d.get("k_table")
    return MpcrSpec(kind=d.get("kind", "pure"), k=d.get("k", 1.6),
                    k_table=None if table is None else tuple(table))


def sim_config_to_dict(cfg: SimConfig) -> dict:
    return {
        "theta": [float(v) for v in cfg.theta.flat()],
        "n_groups": cfg.n_groups,
        "n_treatment_groups": cfg.n_treatment_groups,
        "n": cfg.n,
        "periods": cfg.periods,
        "treatment_start": cfg.treatment_start,
        "q": cfg.q,
        "mpcr": mpcr_to_dict(cfg.spec),
        "seed": cfg.seed,
        "initial_rule": cfg.initial_rule,
        "revision": None if cfg.revision is None else list(cfg.revision),
        "covariate_rule": cfg.covariate_rule,
        "mh_sweeps": cfg.mh_sweeps,
    }


def sim_config_from_dict(d: dict) -> SimConfig:
    revision = d.get("revision")
    return SimConfig(
        theta=ThetaParams.from_flat(np.asarray(d["theta"], dtype=np.float64)),
        n_groups=d.get("n_groups", 46),
        n_treatment_groups=d.get("n_treatment_groups", 28),
        n=d.get("n", 4),
        periods=d.get("periods", 30),
        treatment_start=d.get("treatment_start", 16),
        q=d.get("q", 21),
        spec=mpcr_from_dict(d.get("mpcr", {})),
        seed=d.get("seed", 0),
        initial_rule=d.get("initial_rule", "logit"),
        revision=None if revision is None else tuple(revision),
        covariate_rule=d.get("covariate_rule", "none"),
        mh_sweeps=d.get("mh_sweeps", 5000),
    )


def load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_json(payload: dict, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
