"""Annotator-model statistics against hand-enumerated and exhaustive oracles."""

import numpy as np
import pytest

from pairlens.data import Dataset
from pairlens.elicitation import (
    auc_sel,
    extract_noisy,
    extract_perfect,
    kappa,
    pair_outcomes,
    selection_probability,
    success_probability,
    utility_alpha,
)
from pairlens.errors import DegenerateDenominator, MissingOracleU
from pairlens.matching import StrategyConfig, score_pairs
from pairlens.scm import build_panel_scm, simulate


def tiny_dataset() -> Dataset:
    z = np.array(
        [
            [2.0, 0.0, 1.0],  # treated
            [1.0, 1.0, 1.0],  # untreated
        ]
    )
    u = np.array(
        [
            [1.0, 1.0],
            [0.0, 1.0],
        ]
    )
    return Dataset(
        z=z,
        x=np.array([1, 0]),
        y=np.array([0, 0]),
        z_names=["age", "dose", "stage"],
        u=u,
        u_names=["frailty", "intent"],
    )


class TestExtraction:
    def test_perfect_strict_exceedance(self):
        cs = extract_perfect(tiny_dataset(), 0, 1)
        assert cs.observed == ("age",)  # 2>1; dose 0<1; stage tie excluded
        assert cs.unobserved == ("frailty",)  # 1>0; intent tie excluded
        assert cs.n_genuine == 1 and cs.n_spurious == 1

    def test_noisy_without_noise_equals_perfect(self):
        ds = tiny_dataset()
        assert extract_noisy(ds, 0, 1) == extract_perfect(ds, 0, 1)

    def test_noisy_full_omission_drops_everything(self):
        cs = extract_noisy(tiny_dataset(), 0, 1, omission_rate=1.0)
        assert cs.observed == () and cs.unobserved == ()

    def test_noisy_full_hallucination_cites_every_column(self):
        cs = extract_noisy(tiny_dataset(), 0, 1, hallucination_rate=1.0)
        assert cs.observed == ("age", "dose", "stage")
        assert cs.unobserved == ("frailty", "intent")

    def test_noisy_deterministic_per_pair_stream(self):
        ds = tiny_dataset()
        kw = dict(omission_rate=0.5, hallucination_rate=0.5, seed=9)
        assert extract_noisy(ds, 0, 1, **kw) == extract_noisy(ds, 0, 1, **kw)

    def test_noisy_rates_match_channel_over_many_seeds(self):
        ds = tiny_dataset()
        hits = 0
        trials = 2000
        for s in range(trials):
            cs = extract_noisy(ds, 0, 1, omission_rate=0.3, seed=s)
            hits += "age" in cs.observed
        # age is a genuine exceedance kept with probability 0.7
        assert abs(hits / trials - 0.7) < 4 * np.sqrt(0.3 * 0.7 / trials)

    def test_missing_oracle_raises(self):
        ds = tiny_dataset()
        bare = Dataset(z=ds.z, x=ds.x, y=ds.y, z_names=list(ds.z_names))
        with pytest.raises(MissingOracleU):
            extract_perfect(bare, 0, 1)


class TestSelectionProbability:
    def test_ratio(self):
        val = success_probability(2, 3)
        assert val == pytest.approx(0.4)

    def test_empty_set_is_degenerate_zero(self):
        sp = selection_probability(extract_noisy(tiny_dataset(), 0, 1, omission_rate=1.0))
        assert sp.value == 0.0 and sp.degenerate
        assert success_probability(0, 0) == 0.0

    def test_selection_probability_matches_counts(self):
        cs = extract_perfect(tiny_dataset(), 0, 1)
        sp = selection_probability(cs)
        assert not sp.degenerate
        assert sp.value == pytest.approx(
            cs.n_genuine / (cs.n_genuine + cs.n_spurious)
        )


class TestPairOutcomes:
    def test_vectorized_matches_per_pair_loop(self):
        rng = np.random.default_rng(2)
        n = 40
        ds = Dataset(
            z=rng.normal(size=(n, 4)),
            x=(rng.random(n) < 0.5).astype(int),
            y=(rng.random(n) < 0.5).astype(int),
            z_names=[f"z{k}" for k in range(4)],
            u=rng.normal(size=(n, 3)),
            u_names=[f"u{k}" for k in range(3)],
        )
        ds.x[:2] = [1, 0]
        ranked = score_pairs(ds, StrategyConfig(kind="z_match"))
        out = pair_outcomes(ds, ranked)
        for row in range(len(ranked)):
            cs = extract_perfect(ds, int(ranked.i[row]), int(ranked.j[row]))
            assert out.n_genuine[row] == cs.n_genuine
            assert out.n_spurious[row] == cs.n_spurious
            assert out.success[row] == pytest.approx(
                success_probability(cs.n_genuine, cs.n_spurious)
            )


class TestAucSel:
    def test_exhaustive_oracle_with_ties(self):
        values = np.array([3.0, 1.0, 2.0, 2.0, 0.0, 3.0, 1.0])
        treat = np.array([1, 1, 1, 0, 0, 0, 0])
        total = 0.0
        for v1 in values[treat == 1]:
            for v0 in values[treat == 0]:
                total += 1.0 if v1 > v0 else (0.5 if v1 == v0 else 0.0)
        oracle = total / (3 * 4)
        assert auc_sel(values, treat) == pytest.approx(oracle, abs=1e-12)

    def test_perfect_and_reversed_separation(self):
        v = np.array([5.0, 4.0, 1.0, 0.0])
        t = np.array([1, 1, 0, 0])
        assert auc_sel(v, t) == 1.0
        assert auc_sel(v, 1 - t) == 0.0

    def test_empty_arm_raises(self):
        with pytest.raises(DegenerateDenominator):
            auc_sel(np.array([1.0, 2.0]), np.array([1, 1]))

    def test_random_values_near_half(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=4000)
        t = (rng.random(4000) < 0.5).astype(int)
        assert abs(auc_sel(v, t) - 0.5) < 0.03


class TestUtilityAndKappa:
    def test_utility_alpha(self):
        n = np.array([2.0, 0.0, 1.0])
        d = np.array([1.0, 1.0, 4.0])
        assert utility_alpha(n, d, alpha=0.5) == pytest.approx(1.0 - 0.5 * 2.0)

    def test_kappa_hand_computed(self):
        # covariate AUC = 0.875, concept AUC = 1.0 -> kappa = 0.5/0.375 = 4/3
        ds = Dataset(
            z=np.array([[2.0], [1.0], [1.0], [0.0]]),
            x=np.array([1, 1, 0, 0]),
            y=np.zeros(4, dtype=int),
            z_names=["z"],
            u=np.array([[3.0], [2.0], [1.0], [0.0]]),
            u_names=["u"],
        )
        assert kappa(ds) == pytest.approx(4.0 / 3.0, abs=1e-12)

    def test_kappa_degenerate_when_covariates_carry_no_signal(self):
        ds = Dataset(
            z=np.array([[1.0], [0.0], [0.0], [1.0]]),  # AUC exactly 1/2
            x=np.array([1, 1, 0, 0]),
            y=np.zeros(4, dtype=int),
            z_names=["z"],
            u=np.array([[3.0], [2.0], [1.0], [0.0]]),
            u_names=["u"],
        )
        with pytest.raises(DegenerateDenominator):
            kappa(ds)

    def test_kappa_increases_with_cross_coupling(self):
        # with treatment driven by Z alone, concept separation scales with the
        # Z-U cross-covariance, so kappa grows roughly linearly in c
        vals = []
        for c in (0.0, 0.1, 0.4):
            scm = build_panel_scm(
                cross_mode="dense", rho=0.0, c=c, beta=0.2, gamma=0.0
            )
            ds = simulate(scm, n=40_000, seed=3)
            vals.append(kappa(ds))
        assert abs(vals[0]) < 0.1  # c=0: concepts independent of treatment
        assert vals[0] < vals[1] < vals[2]
        assert vals[2] > 0.6  # kappa(0.4) near its ~1.2 theory value

    def test_kappa_is_one_when_concepts_duplicate_covariates(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=(500, 3))
        x = (rng.random(500) < 0.4).astype(int)
        x[:2] = [1, 0]
        ds = Dataset(
            z=z,
            x=x,
            y=np.zeros(500, dtype=int),
            z_names=["a", "b", "c"],
            u=z.copy(),
            u_names=["ua", "ub", "uc"],
        )
        assert kappa(ds) == pytest.approx(1.0, abs=1e-12)
