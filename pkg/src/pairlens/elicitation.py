"""Annotator model: what a pair inspection surfaces, and how often it wins.

For a treated/untreated pair the candidate causes are the coordinates where
the treated unit strictly exceeds the untreated unit — spurious when the
coordinate is an observed covariate (the annotator would cite something the
analyst already has) and genuine when it is an unobserved concept. The
selection model picks uniformly among candidates, so the probability of
surfacing a genuine unobserved cause is N / (N + D).

Rank statistics (auc_sel) summarize per-coordinate treated-vs-untreated
separation; their ratio kappa predicts whether propensity-matched pairs beat
marginal pairs on net signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .data import Dataset
from .errors import DegenerateDenominator, MissingOracleU
from .matching import RankedPairs
from .rng import make_rng

__all__ = [
    "CandidateSet",
    "SelectionProbability",
    "extract_perfect",
    "extract_noisy",
    "selection_probability",
    "success_probability",
    "pair_outcomes",
    "PairOutcomes",
    "auc_sel",
    "utility_alpha",
    "kappa",
]


@dataclass(frozen=True)
class CandidateSet:
    """Names an annotator could cite for one pair, split by origin."""

    observed: tuple[str, ...]
    unobserved: tuple[str, ...]

    @property
    def n_genuine(self) -> int:
        return len(self.unobserved)

    @property
    def n_spurious(self) -> int:
        return len(self.observed)


class SelectionProbability(NamedTuple):
    value: float
    degenerate: bool  # True when the candidate set was empty


def _require_u(dataset: Dataset) -> np.ndarray:
    if dataset.u is None:
        raise MissingOracleU("dataset has no unobserved oracle columns")
    return dataset.u


def extract_perfect(dataset: Dataset, i: int, j: int) -> CandidateSet:
    """Strict-exceedance candidate set for pair (treated i, untreated j)."""
    u = _require_u(dataset)
    obs = tuple(
        name for k, name in enumerate(dataset.z_names) if dataset.z[i, k] > dataset.z[j, k]
    )
    unobs = tuple(name for k, name in enumerate(dataset.u_names) if u[i, k] > u[j, k])
    return CandidateSet(observed=obs, unobserved=unobs)


def extract_noisy(
    dataset: Dataset,
    i: int,
    j: int,
    *,
    omission_rate: float = 0.0,
    hallucination_rate: float = 0.0,
    seed: int = 0,
) -> CandidateSet:
    """Perfect extraction pushed through an omission/hallucination channel.

    Each genuine exceedance is dropped independently with omission_rate; each
    non-exceeding coordinate is added with hallucination_rate. Deterministic
    in (seed, i, j).
    """
    u = _require_u(dataset)
    rng = make_rng(seed, "noisy_extract", i, j)
    obs, unobs = [], []
    for k, name in enumerate(dataset.z_names):
        exceeds = dataset.z[i, k] > dataset.z[j, k]
        r = rng.random()
        if (exceeds and r >= omission_rate) or (not exceeds and r < hallucination_rate):
            obs.append(name)
    for k, name in enumerate(dataset.u_names):
        exceeds = u[i, k] > u[j, k]
        r = rng.random()
        if (exceeds and r >= omission_rate) or (not exceeds and r < hallucination_rate):
            unobs.append(name)
    return CandidateSet(observed=tuple(obs), unobserved=tuple(unobs))


def selection_probability(candidates: CandidateSet) -> SelectionProbability:
    """Chance a uniform pick lands on an unobserved-origin candidate."""
    total = candidates.n_genuine + candidates.n_spurious
    if total == 0:
        return SelectionProbability(0.0, True)
    return SelectionProbability(candidates.n_genuine / total, False)


def success_probability(n_genuine: int, n_spurious: int) -> float:
    """N / (N + D), with the empty-candidate convention of zero."""
    total = n_genuine + n_spurious
    if total == 0:
        return 0.0
    return n_genuine / total


class PairOutcomes(NamedTuple):
    n_genuine: np.ndarray
    n_spurious: np.ndarray
    success: np.ndarray


def pair_outcomes(dataset: Dataset, pairs: RankedPairs) -> PairOutcomes:
    """Vectorized N, D, and success probability for every ranked pair."""
    u = _require_u(dataset)
    zi = dataset.z[pairs.i]
    zj = dataset.z[pairs.j]
    ui = u[pairs.i]
    uj = u[pairs.j]
    d = (zi > zj).sum(axis=1).astype(float)
    n = (ui > uj).sum(axis=1).astype(float)
    total = n + d
    lam = np.divide(n, total, out=np.zeros_like(n), where=total > 0)
    return PairOutcomes(n_genuine=n, n_spurious=d, success=lam)


def auc_sel(values: np.ndarray, treatment: np.ndarray) -> float:
    """P(V_treated > V_untreated) + 0.5 P(equal) over independent cross pairs.

    Computed with the Mann-Whitney rank identity using average ranks, so ties
    get exact half-credit in O(n log n).
    """
    values = np.asarray(values, dtype=float).ravel()
    treatment = np.asarray(treatment).ravel()
    n1 = int((treatment == 1).sum())
    n0 = int((treatment == 0).sum())
    if n1 == 0 or n0 == 0:
        raise DegenerateDenominator("auc_sel needs both arms non-empty")
    ranks = rankdata(values, method="average")
    r1 = float(ranks[treatment == 1].sum())
    return (r1 - n1 * (n1 + 1) / 2.0) / (n1 * n0)


def utility_alpha(n_genuine: np.ndarray, n_spurious: np.ndarray, alpha: float) -> float:
    """Mean genuine count minus alpha times mean spurious count."""
    return float(np.mean(n_genuine) - alpha * np.mean(n_spurious))


def kappa(dataset: Dataset) -> float:
    """Concept-to-covariate separation ratio.

    Sum of (auc_sel - 1/2) over unobserved columns divided by the same sum
    over observed columns. Raises when the covariate signal is numerically
    zero, in which case the ratio is meaningless.
    """
    u = _require_u(dataset)
    denom = sum(auc_sel(dataset.z[:, k], dataset.x) - 0.5 for k in range(dataset.d_z))
    numer = sum(auc_sel(u[:, k], dataset.x) - 0.5 for k in range(dataset.d_u))
    if abs(denom) <= 1e-6:
        raise DegenerateDenominator(f"covariate separation {denom:.2e} is numerically zero")
    return numer / denom
