"""Desk-scale experiment runners with across-replication confidence bands.

Four experiments, each returning an ExperimentReport that serializes to a
CSV of curve points plus a JSON report under a run directory named by the
config hash:

- run_panel_zdom: success probability of covariate-dominance vs exact-match
  pairing as the covariate deficit delta grows, on the correlated-concept
  simulation presets.
- run_panel_pi: concept-vs-covariate separation ratio (kappa) and the
  genuine-minus-spurious candidate count for propensity-matched vs random
  pairs, swept over the covariate-concept coupling c.
- run_budget_curve: cumulative success rate against annotation budget for
  each pairing strategy on a dataset with oracle concept columns.
- run_gap_strata: success rate binned by propensity-gap stratum.

All replication randomness is derived from explicit seeds, and replications
are independent tasks, so results are bit-identical for any worker count.
Wall-clock timing is metadata only and is excluded from determinism
comparisons (the JSON stores it under a separate "timing" key).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .data import Dataset
from .elicitation import kappa as _kappa_stat
from .elicitation import pair_outcomes
from .errors import AcceptanceTooLow, EmptyArm
from .gaussian import cholesky, condition_on_z, is_log_supermodular_gaussian
from .matching import STRATEGY_KINDS, RankedPairs, StrategyConfig, score_pairs, select_budget
from .propensity import cv_predict, true_propensity_batch
from .rng import make_rng, stream_key
from .scm import build_panel_scm, rejection_sample_u, simulate

__all__ = [
    "ExperimentReport",
    "run_panel_zdom",
    "run_panel_pi",
    "run_budget_curve",
    "run_gap_strata",
]

DEFAULT_DELTA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5)
DEFAULT_C_GRID = tuple(float(c) for c in np.linspace(0.0, 0.43, 12).round(6))


def _derived_seed(seed: int, *labels: int | str) -> int:
    """Deterministic child seed for a labeled subtask of a run."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=stream_key(*labels))
    return int(seq.generate_state(1, np.uint64)[0])


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.blake2b(blob.encode("utf-8"), digest_size=8).hexdigest()


def _ci(values) -> tuple[float, float, float, float]:
    """(mean, lo, hi, sd) with a 1.96 * sd/sqrt(reps) half-width."""
    arr = np.asarray(values, dtype=float)
    if arr.size <= 1 or np.all(arr == arr[0]):
        # identical replicates (deterministic curve): collapse the band exactly
        # rather than leaving round-off from the mean in the sd
        first = float(arr[0])
        return first, first, first, 0.0
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1))
    half = 1.96 * sd / math.sqrt(arr.size)
    return mean, mean - half, mean + half, sd


def _run_tasks(worker, tasks: list, jobs: int) -> list:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(worker, tasks, chunksize=1))
    return [worker(task) for task in tasks]


@dataclass(frozen=True)
class ExperimentReport:
    """Curve points with 95% across-replication confidence bands.

    rows/columns form a flat table (one row per grid point and curve); config
    echoes every semantic parameter so the run directory name — the config
    hash — identifies the result. model_hash ties the report to the exact
    simulation preset or dataset it was computed from.
    """

    experiment: str
    config: dict
    model_hash: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    reps: int
    seeds: tuple[int, ...]
    wall_clock: float
    csv_paths: tuple[str, ...] = ()

    @property
    def run_id(self) -> str:
        return _config_hash({"experiment": self.experiment, **self.config})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(list(self.rows), columns=list(self.columns))

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "experiment": self.experiment,
            "run_id": self.run_id,
            "model_hash": self.model_hash,
            "config": self.config,
            "reps": self.reps,
            "seeds": list(self.seeds),
            "columns": list(self.columns),
            "rows": [list(row) for row in self.rows],
            "csv_paths": list(self.csv_paths),
        }
        if include_timing:
            out["timing"] = {"wall_clock_seconds": self.wall_clock}
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing=include_timing), indent=2)

    def save(self, out_dir: str | Path) -> "ExperimentReport":
        """Write results.csv and report.json under <out_dir>/<experiment>-<run_id>."""
        run_dir = Path(out_dir) / f"{self.experiment}-{self.run_id}"
        run_dir.mkdir(parents=True, exist_ok=True)
        csv_path = run_dir / "results.csv"
        self.to_frame().to_csv(csv_path, index=False)
        saved = replace(self, csv_paths=(str(csv_path),))
        (run_dir / "report.json").write_text(saved.to_json(), encoding="utf-8")
        return saved


# ---------------------------------------------------------------------------
# Panel 1/2: covariate-dominance vs exact-match success as the deficit grows


def _zdom_rep_worker(task: dict) -> list[float]:
    scm = build_panel_scm(
        cross_mode="diag",
        rho=task["rho"],
        beta=task["beta"],
        gamma=task["gamma"],
        d=task["d"],
    )
    z_ref = np.zeros(scm.d_z)
    means = []
    for k, delta in enumerate(task["deltas"]):
        seed_t = _derived_seed(task["seed"], "panel_zdom", task["rep"], k, "treated")
        seed_c = _derived_seed(task["seed"], "panel_zdom", task["rep"], k, "untreated")
        u_treated = rejection_sample_u(
            scm,
            -delta * np.ones(scm.d_z),
            x=1,
            n=task["n_pairs"],
            seed=seed_t,
            proposal_cap=task["proposal_cap"],
        )
        u_untreated = rejection_sample_u(
            scm, z_ref, x=0, n=task["n_pairs"], seed=seed_c, proposal_cap=task["proposal_cap"]
        )
        # the treated covariates sit at or below the untreated ones everywhere,
        # so no observed column can be cited and success needs >= 1 concept
        # exceedance
        means.append(float(np.any(u_treated > u_untreated, axis=1).mean()))
    return means


def run_panel_zdom(
    rho: float = 0.05,
    delta_grid: tuple[float, ...] | None = None,
    n_pairs: int = 20_000,
    reps: int = 20,
    seed: int = 0,
    *,
    beta: float = 1.0,
    gamma: float = 1.0,
    d: int = 3,
    proposal_cap: int = 10_000_000,
    jobs: int = 1,
) -> ExperimentReport:
    """Success probability vs covariate deficit, dominance pairing vs exact match.

    For each deficit delta, treated concepts are drawn at covariates
    -delta (all coordinates) with treatment taken, untreated concepts at the
    origin with treatment declined, and a pair succeeds when any treated
    concept strictly exceeds the untreated one. The exact-match curve is the
    delta = 0 point replicated across the grid (matched pairs see no deficit
    by construction).
    """
    deltas = tuple(
        float(x) for x in (DEFAULT_DELTA_GRID if delta_grid is None else delta_grid)
    )
    if not deltas or any(x < 0 for x in deltas):
        raise ValueError("delta_grid must be non-empty and non-negative")
    deltas_eval = tuple(sorted(set(deltas) | {0.0}))
    start = time.perf_counter()
    tasks = [
        {
            "rho": rho,
            "beta": beta,
            "gamma": gamma,
            "d": d,
            "deltas": deltas_eval,
            "n_pairs": n_pairs,
            "seed": seed,
            "rep": rep,
            "proposal_cap": proposal_cap,
        }
        for rep in range(reps)
    ]
    per_rep = np.array(_run_tasks(_zdom_rep_worker, tasks, jobs))  # (reps, n_deltas)
    zero_col = deltas_eval.index(0.0)
    rows = []
    for k, delta in enumerate(deltas_eval):
        if delta not in deltas:
            continue  # delta = 0 was evaluated only to anchor the match curve
        mean, lo, hi, sd = _ci(per_rep[:, k])
        rows.append(("z_dom", delta, mean, lo, hi, sd))
    match_mean, match_lo, match_hi, match_sd = _ci(per_rep[:, zero_col])
    for delta in deltas:
        rows.append(("z_match", delta, match_mean, match_lo, match_hi, match_sd))
    rows.sort(key=lambda r: (r[0], r[1]))
    scm = build_panel_scm(cross_mode="diag", rho=rho, beta=beta, gamma=gamma, d=d)
    config = {
        "rho": rho,
        "delta_grid": list(deltas),
        "n_pairs": n_pairs,
        "reps": reps,
        "seed": seed,
        "beta": beta,
        "gamma": gamma,
        "d": d,
        "proposal_cap": proposal_cap,
    }
    return ExperimentReport(
        experiment="panel_zdom",
        config=config,
        model_hash=scm.spec_hash(),
        columns=("strategy", "delta", "estimate", "lo", "hi", "sd"),
        rows=tuple(tuple(r) for r in rows),
        reps=reps,
        seeds=tuple(_derived_seed(seed, "panel_zdom", rep) for rep in range(reps)),
        wall_clock=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# Panel 3/4: kappa sweep and propensity-matched vs random candidate counts


def _net_candidates(dataset: Dataset, ti: np.ndarray, uj: np.ndarray) -> np.ndarray:
    """Genuine minus spurious candidate count per (treated, untreated) pair."""
    n = (dataset.u[ti] > dataset.u[uj]).sum(axis=1)
    d = (dataset.z[ti] > dataset.z[uj]).sum(axis=1)
    return (n - d).astype(float)


def _pi_rep_worker(task: dict) -> tuple[float, float, float]:
    scm = build_panel_scm(
        cross_mode="dense",
        rho=0.0,
        c=task["c"],
        beta=task["beta"],
        gamma=0.0,
        d=task["d"],
    )
    data_seed = _derived_seed(task["seed"], "panel_pi", task["rep"], task["c_index"], "pop")
    dataset = simulate(scm, task["n_pop"], data_seed)
    treated = dataset.treated_idx
    untreated = dataset.untreated_idx
    if len(treated) == 0 or len(untreated) == 0:
        raise EmptyArm("population draw produced an empty treatment arm")
    kap = _kappa_stat(dataset)

    pz = true_propensity_batch(scm, dataset.z)
    rng = make_rng(data_seed, "pairs")
    target = task["n_match_pairs"]
    matched_i: list[np.ndarray] = []
    matched_j: list[np.ndarray] = []
    collected = 0
    for _ in range(task["max_chunks"]):
        ti = treated[rng.integers(0, len(treated), size=task["chunk"])]
        uj = untreated[rng.integers(0, len(untreated), size=task["chunk"])]
        keep = np.abs(pz[ti] - pz[uj]) < task["gap_tol"]
        matched_i.append(ti[keep])
        matched_j.append(uj[keep])
        collected += int(keep.sum())
        if collected >= target:
            break
    if collected < target:
        raise AcceptanceTooLow(
            f"collected {collected}/{target} propensity-matched pairs within gap "
            f"{task['gap_tol']}"
        )
    mi = np.concatenate(matched_i)[:target]
    mj = np.concatenate(matched_j)[:target]
    ri = treated[rng.integers(0, len(treated), size=target)]
    rj = untreated[rng.integers(0, len(untreated), size=target)]
    net_match = float(_net_candidates(dataset, mi, mj).mean())
    net_marg = float(_net_candidates(dataset, ri, rj).mean())
    return kap, net_match, net_marg


def run_panel_pi(
    c_grid: tuple[float, ...] | None = None,
    n_pop: int = 100_000,
    gap_tol: float = 0.005,
    reps: int = 20,
    seed: int = 0,
    *,
    beta: float = 0.2,
    d: int = 3,
    n_match_pairs: int = 2000,
    jobs: int = 1,
) -> ExperimentReport:
    """Sweep the covariate-concept coupling c with concept-blind treatment.

    Treatment depends on covariates only (gamma = 0), so concepts matter to
    pairing exactly through their coupling to the covariates. Per c the run
    simulates a population, measures the separation ratio kappa, then compares
    the mean net candidate count (genuine minus spurious) between
    propensity-matched pairs (|pi_i - pi_j| < gap_tol by rejection) and
    uniformly random cross pairs.
    """
    grid = tuple(float(c) for c in (DEFAULT_C_GRID if c_grid is None else c_grid))
    if not grid:
        raise ValueError("c_grid must be non-empty")
    scms = []
    for c in grid:
        scm = build_panel_scm(cross_mode="dense", rho=0.0, c=c, beta=beta, gamma=0.0, d=d)
        cholesky(scm.joint.cov)  # positive definiteness of the full joint
        verdict = is_log_supermodular_gaussian(condition_on_z(scm.joint).cov)
        if not verdict.holds:
            raise ValueError(f"c={c} breaks conditional log-supermodularity")
        scms.append(scm)
    start = time.perf_counter()
    tasks = [
        {
            "c": c,
            "c_index": ci,
            "beta": beta,
            "d": d,
            "n_pop": n_pop,
            "gap_tol": gap_tol,
            "n_match_pairs": n_match_pairs,
            "chunk": 200_000,
            "max_chunks": 50,
            "seed": seed,
            "rep": rep,
        }
        for ci, c in enumerate(grid)
        for rep in range(reps)
    ]
    results = _run_tasks(_pi_rep_worker, tasks, jobs)
    rows = []
    for ci, c in enumerate(grid):
        block = results[ci * reps : (ci + 1) * reps]
        kaps = [r[0] for r in block]
        match = [r[1] for r in block]
        marg = [r[2] for r in block]
        diffs = [m - g for m, g in zip(match, marg)]
        k_m, k_lo, k_hi, _ = _ci(kaps)
        m_m, m_lo, m_hi, _ = _ci(match)
        g_m, g_lo, g_hi, _ = _ci(marg)
        d_m, d_lo, d_hi, _ = _ci(diffs)
        rows.append((c, k_m, k_lo, k_hi, m_m, m_lo, m_hi, g_m, g_lo, g_hi, d_m, d_lo, d_hi))
    config = {
        "c_grid": list(grid),
        "n_pop": n_pop,
        "gap_tol": gap_tol,
        "reps": reps,
        "seed": seed,
        "beta": beta,
        "d": d,
        "n_match_pairs": n_match_pairs,
    }
    family_hash = hashlib.blake2b(
        json.dumps([s.spec_hash() for s in scms]).encode(), digest_size=8
    ).hexdigest()
    return ExperimentReport(
        experiment="panel_pi",
        config=config,
        model_hash=family_hash,
        columns=(
            "c",
            "kappa",
            "kappa_lo",
            "kappa_hi",
            "pi_match",
            "pi_match_lo",
            "pi_match_hi",
            "marginal",
            "marginal_lo",
            "marginal_hi",
            "diff",
            "diff_lo",
            "diff_hi",
        ),
        rows=tuple(tuple(r) for r in rows),
        reps=reps,
        seeds=tuple(_derived_seed(seed, "panel_pi", rep) for rep in range(reps)),
        wall_clock=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# Budget curves: cumulative success rate per strategy


def _budget_worker(task: dict) -> np.ndarray:
    dataset: Dataset = task["dataset"]
    config = StrategyConfig(
        kind=task["kind"], seed=task["seed"], max_unit_reuse=task["max_unit_reuse"]
    )
    ranked = score_pairs(dataset, config, propensity=task["propensity"])
    selected = select_budget(ranked, task["b_max"])
    return pair_outcomes(dataset, selected).success


def run_budget_curve(
    dataset: Dataset,
    strategies: tuple[str, ...] | None = None,
    b_max: int = 2000,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    *,
    max_unit_reuse: int = 3,
    propensity: np.ndarray | None = None,
    propensity_seed: int = 0,
    jobs: int = 1,
) -> ExperimentReport:
    """Cumulative mean success rate vs annotation budget for each strategy.

    Requires oracle concept columns on the dataset (success is computed from
    them). Strategies that rank deterministically produce identical curves for
    every seed (their band collapses); the random baseline varies by seed and
    gets a real band. lambda_pair is the per-budget-step success, lambda_cum
    the running mean.
    """
    if dataset.u is None:
        raise ValueError("run_budget_curve needs a dataset with oracle concept columns")
    kinds = tuple(strategies or STRATEGY_KINDS)
    for kind in kinds:
        if kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {kind!r}")
    if b_max < 1:
        raise ValueError("b_max must be >= 1")
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    start = time.perf_counter()
    needs_pi = any(k.startswith("pi_") for k in kinds)
    if propensity is None and needs_pi:
        propensity = cv_predict(dataset, seed=propensity_seed)
    tasks = [
        {
            "dataset": dataset,
            "kind": kind,
            "seed": s,
            "b_max": b_max,
            "max_unit_reuse": max_unit_reuse,
            "propensity": propensity,
        }
        for kind in kinds
        for s in seeds
    ]
    results = _run_tasks(_budget_worker, tasks, jobs)
    rows = []
    for ki, kind in enumerate(kinds):
        curves = results[ki * len(seeds) : (ki + 1) * len(seeds)]
        length = min(len(c) for c in curves)
        if length == 0:
            raise EmptyArm(f"strategy {kind} selected no pairs")
        lam = np.stack([c[:length] for c in curves])  # (seeds, length)
        cum = np.cumsum(lam, axis=1) / np.arange(1, length + 1)
        for b in range(length):
            mean, lo, hi, _ = _ci(cum[:, b])
            rows.append((kind, b + 1, float(lam[:, b].mean()), mean, lo, hi))
    config = {
        "strategies": list(kinds),
        "b_max": b_max,
        "seeds": list(seeds),
        "max_unit_reuse": max_unit_reuse,
        "propensity_seed": propensity_seed,
        "n": dataset.n,
    }
    return ExperimentReport(
        experiment="budget_curve",
        config=config,
        model_hash=dataset.content_hash(),
        columns=("strategy", "budget", "lambda_pair", "lambda_cum", "lo", "hi"),
        rows=tuple(tuple(r) for r in rows),
        reps=len(seeds),
        seeds=seeds,
        wall_clock=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# Gap strata: success rate by propensity-gap bin


def _strata_worker(task: dict) -> tuple[np.ndarray, np.ndarray, float, float]:
    dataset: Dataset = task["dataset"]
    propensity = task["propensity"]
    rng = make_rng(task["seed"], "gap_strata")
    treated = dataset.treated_idx
    untreated = dataset.untreated_idx
    ti = treated[rng.integers(0, len(treated), size=task["n_sample_pairs"])]
    uj = untreated[rng.integers(0, len(untreated), size=task["n_sample_pairs"])]
    gaps = np.abs(propensity[ti] - propensity[uj])
    pairs = RankedPairs(
        i=ti, j=uj, score=gaps,
        config=StrategyConfig(kind="pi_match", seed=task["seed"]),
        dataset_hash=dataset.content_hash(),
    )
    lam = pair_outcomes(dataset, pairs).success
    order = np.argsort(gaps, kind="stable")
    lam_means = np.empty(task["n_bins"])
    gap_means = np.empty(task["n_bins"])
    for b, chunk in enumerate(np.array_split(order, task["n_bins"])):
        lam_means[b] = lam[chunk].mean()
        gap_means[b] = gaps[chunk].mean()
    return lam_means, gap_means, float(lam.mean()), float(gaps.mean())


def run_gap_strata(
    dataset: Dataset,
    n_bins: int = 10,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    *,
    n_sample_pairs: int = 200_000,
    propensity: np.ndarray | None = None,
    propensity_seed: int = 0,
    jobs: int = 1,
) -> ExperimentReport:
    """Success rate per propensity-gap stratum, lowest gap first.

    Samples cross pairs, sorts them by |propensity difference|, splits into
    n_bins equal-count strata, and reports the mean success rate per stratum.
    The final row (stratum -1) is the all-sampled-pairs reference line.
    """
    if dataset.u is None:
        raise ValueError("run_gap_strata needs a dataset with oracle concept columns")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    start = time.perf_counter()
    if propensity is None:
        propensity = cv_predict(dataset, seed=propensity_seed)
    tasks = [
        {
            "dataset": dataset,
            "propensity": propensity,
            "seed": s,
            "n_bins": n_bins,
            "n_sample_pairs": n_sample_pairs,
        }
        for s in seeds
    ]
    results = _run_tasks(_strata_worker, tasks, jobs)
    lam_matrix = np.stack([r[0] for r in results])  # (seeds, n_bins)
    gap_matrix = np.stack([r[1] for r in results])
    overall = [r[2] for r in results]
    overall_gap = [r[3] for r in results]
    rows = []
    for b in range(n_bins):
        mean, lo, hi, _ = _ci(lam_matrix[:, b])
        rows.append((b, float(gap_matrix[:, b].mean()), mean, lo, hi))
    o_mean, o_lo, o_hi, _ = _ci(overall)
    rows.append((-1, float(np.mean(overall_gap)), o_mean, o_lo, o_hi))
    config = {
        "n_bins": n_bins,
        "seeds": list(seeds),
        "n_sample_pairs": n_sample_pairs,
        "propensity_seed": propensity_seed,
        "n": dataset.n,
    }
    return ExperimentReport(
        experiment="gap_strata",
        config=config,
        model_hash=dataset.content_hash(),
        columns=("stratum", "gap_mean", "lambda_mean", "lo", "hi"),
        rows=tuple(tuple(r) for r in rows),
        reps=len(seeds),
        seeds=seeds,
        wall_clock=time.perf_counter() - start,
    )
