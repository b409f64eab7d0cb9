"""Pair-ranking strategies over treated/untreated cross pairs.

Every strategy produces a deterministic total order over (treated, untreated)
pairs — lower score first, ties broken by (score, i, j) lexicographically:

- z_match: Euclidean distance on per-column standardized covariates;
- z_dom: count of coordinates where the treated unit exceeds the untreated
  unit by more than a margin (default 0.2 column sd), ties broken by z_match
  distance — rank-0 pairs are those where the treated unit is nowhere
  meaningfully above;
- pi_match: absolute propensity-score gap;
- pi_dom: signed propensity gap (treated far below untreated first);
- marginal: seeded uniform order, the no-information baseline.

Budget selection walks the ranking greedily, skipping pairs whose units were
already used max_unit_reuse times.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

from .data import Dataset
from .errors import EmptyArm, MissingPropensity
from .rng import make_rng

__all__ = ["StrategyConfig", "RankedPairs", "score_pairs", "select_budget", "STRATEGY_KINDS"]

STRATEGY_KINDS = ("z_match", "z_dom", "pi_match", "pi_dom", "marginal")
POOL_THRESHOLD = 20_000_000
DEFAULT_TOP_M = 200_000


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    dominance_margin: float = 0.2  # in units of per-column sd
    pi_gap_tolerance: float = 0.005
    max_unit_reuse: int = 3
    seed: int = 0
    strict: bool = False  # z_dom only: require treated strictly below everywhere

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"kind must be one of {STRATEGY_KINDS}")
        if self.max_unit_reuse < 1:
            raise ValueError("max_unit_reuse must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dominance_margin": self.dominance_margin,
            "pi_gap_tolerance": self.pi_gap_tolerance,
            "max_unit_reuse": self.max_unit_reuse,
            "seed": self.seed,
            "strict": self.strict,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyConfig":
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})


@dataclass(eq=False)
class RankedPairs:
    """Deterministically ordered candidate pairs (best first)."""

    i: np.ndarray  # treated row indices
    j: np.ndarray  # untreated row indices
    score: np.ndarray
    config: StrategyConfig
    dataset_hash: str
    truncated: bool = False  # True when only an exact-order prefix is held

    def __len__(self) -> int:
        return len(self.score)

    def head(self, k: int) -> "RankedPairs":
        return RankedPairs(
            i=self.i[:k],
            j=self.j[:k],
            score=self.score[:k],
            config=self.config,
            dataset_hash=self.dataset_hash,
            truncated=self.truncated,
        )

    def fraction_exceeding_gap(self, tol: float | None = None) -> float:
        """Share of pairs whose propensity gap violates the tolerance."""
        if self.config.kind not in ("pi_match", "pi_dom"):
            raise ValueError("gap tolerance applies to propensity strategies only")
        tol = self.config.pi_gap_tolerance if tol is None else tol
        return float((np.abs(self.score) > tol).mean()) if len(self) else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"i": self.i, "j": self.j, "score": self.score})

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(directory / "pairs.csv", index=False)
        meta = {
            "config": self.config.to_dict(),
            "dataset_hash": self.dataset_hash,
            "n_pairs": len(self),
            "truncated": self.truncated,
        }
        (directory / "pairs.json").write_text(json.dumps(meta, indent=2) + "\n")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "RankedPairs":
        directory = Path(directory)
        meta = json.loads((directory / "pairs.json").read_text())
        frame = pd.read_csv(directory / "pairs.csv", float_precision="round_trip")
        return cls(
            i=frame["i"].to_numpy(dtype=np.int64),
            j=frame["j"].to_numpy(dtype=np.int64),
            score=frame["score"].to_numpy(dtype=float),
            config=StrategyConfig.from_dict(meta["config"]),
            dataset_hash=meta["dataset_hash"],
            truncated=bool(meta.get("truncated", False)),
        )


def _standardized(z: np.ndarray) -> np.ndarray:
    mu = z.mean(axis=0)
    sd = z.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (z - mu) / sd


def _order(primary: np.ndarray, i: np.ndarray, j: np.ndarray, aux: np.ndarray | None = None):
    """Stable total order: (primary, [aux,] i, j) ascending."""
    keys = [j, i, primary] if aux is None else [j, i, aux, primary]
    return np.lexsort(keys)


def _materialized_scores(
    dataset: Dataset, config: StrategyConfig, propensity: np.ndarray | None,
    treated: np.ndarray, untreated: np.ndarray,
):
    """Score every cross pair; returns (i, j, score, aux) unsorted."""
    n1, n0 = len(treated), len(untreated)
    ii = np.repeat(treated, n0)
    jj = np.tile(untreated, n1)
    aux = None
    if config.kind in ("z_match", "z_dom"):
        zs = _standardized(dataset.z)
        zt = zs[treated]
        zc = zs[untreated]
        # Chunk over treated rows to keep the distance workspace bounded.
        dist = np.empty(n1 * n0, dtype=float)
        chunk = max(1, int(4_000_000 // max(n0, 1)))
        for lo in range(0, n1, chunk):
            hi = min(lo + chunk, n1)
            diff = zt[lo:hi, None, :] - zc[None, :, :]
            block = np.sqrt(np.einsum("abk,abk->ab", diff, diff))
            dist[lo * n0 : hi * n0] = block.ravel()
        if config.kind == "z_match":
            score = dist
        else:
            margin = config.dominance_margin
            exceed = np.empty(n1 * n0, dtype=float)
            below = np.ones(n1 * n0, dtype=bool) if config.strict else None
            for lo in range(0, n1, chunk):
                hi = min(lo + chunk, n1)
                diff = zt[lo:hi, None, :] - zc[None, :, :]
                exceed[lo * n0 : hi * n0] = (diff > margin).sum(axis=2).ravel()
                if config.strict:
                    below[lo * n0 : hi * n0] = (diff < 0).all(axis=2).ravel()
            score = exceed
            aux = dist
            if config.strict:
                keep = below
                ii, jj, score, aux = ii[keep], jj[keep], score[keep], aux[keep]
    elif config.kind in ("pi_match", "pi_dom"):
        gap = propensity[ii] - propensity[jj]
        score = np.abs(gap) if config.kind == "pi_match" else gap
    else:  # marginal
        rng = make_rng(config.seed, "marginal_order")
        score = rng.random(n1 * n0)
    return ii, jj, score, aux


def _k_smallest_sums(
    a_vals: np.ndarray, a_idx: np.ndarray, b_vals: np.ndarray, b_idx: np.ndarray, k: int
) -> Iterator[tuple[float, int, int]]:
    """Yield (a_val + b_val, a_orig, b_orig) pairs in ascending-sum order.

    Classic frontier walk over two ascending arrays; exact order, O(k log k).
    Ties resolved by original-index pairs to keep the global order total.
    """
    if not len(a_vals) or not len(b_vals):
        return
    seen = {(0, 0)}
    heap = [(float(a_vals[0] + b_vals[0]), int(a_idx[0]), int(b_idx[0]), 0, 0)]
    yielded = 0
    while heap and yielded < k:
        s, ai, bi, p, q = heapq.heappop(heap)
        yield s, ai, bi
        yielded += 1
        for np_, nq in ((p + 1, q), (p, q + 1)):
            if np_ < len(a_vals) and nq < len(b_vals) and (np_, nq) not in seen:
                seen.add((np_, nq))
                heapq.heappush(
                    heap,
                    (
                        float(a_vals[np_] + b_vals[nq]),
                        int(a_idx[np_]),
                        int(b_idx[nq]),
                        np_,
                        nq,
                    ),
                )


def _k_smallest_absgaps(
    a_vals: np.ndarray, a_idx: np.ndarray, b_vals: np.ndarray, b_idx: np.ndarray, k: int
) -> Iterator[tuple[float, int, int]]:
    """Yield (|a - b|, a_orig, b_orig) in ascending-|gap| order.

    For each a the candidate b's expand outward from the insertion point in
    the sorted b array, so each a emits its pairs in nondecreasing |gap|; a
    heap merges the streams exactly. O((len(a) + k) log) time, heap size
    O(len(a)).
    """
    if not len(a_vals) or not len(b_vals):
        return
    order_b = np.argsort(b_vals, kind="stable")
    bs = b_vals[order_b]
    bi = b_idx[order_b]
    heap = []
    for p, av in enumerate(a_vals):
        pos = int(np.searchsorted(bs, av))
        lo, hi = pos - 1, pos
        # choose the nearer neighbor as the first candidate
        cand = []
        if hi < len(bs):
            cand.append((abs(float(av - bs[hi])), hi))
        if lo >= 0:
            cand.append((abs(float(av - bs[lo])), lo))
        if not cand:
            continue
        cand.sort()
        gap, q = cand[0]
        new_lo, new_hi = (lo, hi + 1) if q == hi else (lo - 1, hi)
        heap.append((gap, int(a_idx[p]), int(bi[q]), p, new_lo, new_hi))
    heapq.heapify(heap)
    yielded = 0
    while heap and yielded < k:
        gap, ai, bj, p, lo, hi = heapq.heappop(heap)
        yield gap, ai, bj
        yielded += 1
        av = float(a_vals[p])
        cand = []
        if hi < len(bs):
            cand.append((abs(av - float(bs[hi])), hi))
        if lo >= 0:
            cand.append((abs(av - float(bs[lo])), lo))
        if not cand:
            continue
        cand.sort()
        ngap, q = cand[0]
        new_lo, new_hi = (lo, hi + 1) if q == hi else (lo - 1, hi)
        heapq.heappush(heap, (ngap, int(a_idx[p]), int(bi[q]), p, new_lo, new_hi))


def _pi_prefix(
    config: StrategyConfig, propensity: np.ndarray,
    treated: np.ndarray, untreated: np.ndarray, top_m: int,
):
    """Exact best-first prefix for propensity strategies on huge pools.

    Order among exactly-tied scores may differ from the materialized path
    (it is still deterministic); ties are measure-zero for estimated scores.
    """
    pt = propensity[treated]
    pc = propensity[untreated]
    if config.kind == "pi_dom":
        a_order = np.argsort(pt, kind="stable")
        b_order = np.argsort(-pc, kind="stable")
        gen = _k_smallest_sums(
            pt[a_order], treated[a_order], -pc[b_order], untreated[b_order], top_m
        )
    else:
        gen = _k_smallest_absgaps(pt, treated, pc, untreated, top_m)
    rows = list(gen)
    i = np.array([r[1] for r in rows], dtype=np.int64)
    j = np.array([r[2] for r in rows], dtype=np.int64)
    s = np.array([r[0] for r in rows], dtype=float)
    order = _order(s, i, j)
    return i[order], j[order], s[order]


def score_pairs(
    dataset: Dataset,
    config: StrategyConfig,
    propensity: np.ndarray | None = None,
    *,
    pool_threshold: int = POOL_THRESHOLD,
    top_m: int = DEFAULT_TOP_M,
) -> RankedPairs:
    """Rank all treated x untreated pairs under the strategy.

    Pools up to pool_threshold pairs are scored exactly and fully sorted.
    Larger pools keep an exact-order prefix of top_m pairs for the propensity
    and marginal strategies, and fall back to a seeded per-treated-unit
    candidate subsample for the covariate strategies (documented
    approximation; the returned object is flagged truncated).
    """
    treated = dataset.treated_idx
    untreated = dataset.untreated_idx
    if len(treated) == 0 or len(untreated) == 0:
        raise EmptyArm("need at least one treated and one untreated unit")
    if config.kind in ("pi_match", "pi_dom"):
        if propensity is None:
            raise MissingPropensity(f"{config.kind} requires propensity scores")
        propensity = np.asarray(propensity, dtype=float)
        if propensity.shape != (dataset.n,):
            raise MissingPropensity("propensity must have one score per unit")

    pool = len(treated) * len(untreated)
    truncated = False
    if pool > pool_threshold:
        truncated = True
        if config.kind in ("pi_match", "pi_dom"):
            i2, j2, s2 = _pi_prefix(config, propensity, treated, untreated, top_m)
            return RankedPairs(
                i=i2, j=j2, score=s2, config=config,
                dataset_hash=dataset.content_hash(), truncated=True,
            )
        if config.kind in ("z_match", "z_dom"):
            # Seeded subsample of the untreated arm caps the scored pool.
            k_sub = max(1, pool_threshold // len(treated))
            if k_sub < len(untreated):
                rng = make_rng(config.seed, "zpool_subsample")
                sub = np.sort(rng.choice(len(untreated), size=k_sub, replace=False))
                untreated = untreated[sub]
        elif config.kind == "marginal":
            rng = make_rng(config.seed, "marginal_stream")
            m = min(top_m * 4, pool)
            ii = rng.choice(treated, size=m, replace=True)
            jj = rng.choice(untreated, size=m, replace=True)
            keys = ii.astype(np.int64) * (dataset.n + 1) + jj
            _, first = np.unique(keys, return_index=True)
            first.sort()
            ii, jj = ii[first][:top_m], jj[first][:top_m]
            score = np.arange(len(ii), dtype=float)
            return RankedPairs(
                i=ii, j=jj, score=score, config=config,
                dataset_hash=dataset.content_hash(), truncated=True,
            )

    ii, jj, score, aux = _materialized_scores(dataset, config, propensity, treated, untreated)
    order = _order(score, ii, jj, aux)
    if truncated and len(order) > top_m:
        order = order[:top_m]
    return RankedPairs(
        i=ii[order].astype(np.int64),
        j=jj[order].astype(np.int64),
        score=score[order],
        config=config,
        dataset_hash=dataset.content_hash(),
        truncated=truncated,
    )


def select_budget(
    ranked: RankedPairs, budget: int, max_unit_reuse: int | None = None
) -> RankedPairs:
    """Greedy prefix scan: take pairs in rank order, capping per-unit reuse.

    Returns the selected pairs in rank order; fewer than budget when the
    ranking is exhausted first.
    """
    cap = ranked.config.max_unit_reuse if max_unit_reuse is None else max_unit_reuse
    if cap < 1:
        raise ValueError("max_unit_reuse must be >= 1")
    use: dict[int, int] = {}
    keep_rows = []
    for row in range(len(ranked)):
        a = int(ranked.i[row])
        b = int(ranked.j[row])
        if use.get(a, 0) >= cap or use.get(b, 0) >= cap:
            continue
        use[a] = use.get(a, 0) + 1
        use[b] = use.get(b, 0) + 1
        keep_rows.append(row)
        if len(keep_rows) >= budget:
            break
    rows = np.array(keep_rows, dtype=np.int64)
    return RankedPairs(
        i=ranked.i[rows] if len(rows) else np.empty(0, dtype=np.int64),
        j=ranked.j[rows] if len(rows) else np.empty(0, dtype=np.int64),
        score=ranked.score[rows] if len(rows) else np.empty(0, dtype=float),
        config=ranked.config,
        dataset_hash=ranked.dataset_hash,
        truncated=ranked.truncated,
    )
