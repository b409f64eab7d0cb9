"""Pair-ranking strategies: brute-force order oracles, budget caps, round trips."""

import numpy as np
import pytest

from pairlens.data import Dataset
from pairlens.errors import EmptyArm, MissingPropensity
from pairlens.matching import (
    RankedPairs,
    StrategyConfig,
    _k_smallest_absgaps,
    _k_smallest_sums,
    score_pairs,
    select_budget,
)


def small_dataset() -> Dataset:
    # 3 treated (rows 0-2), 5 untreated (rows 3-7). Row 3 duplicates row 0's
    # covariates so z_match must put (0, 3) first with score 0.
    z = np.array(
        [
            [1.0, 2.0],
            [0.5, -1.0],
            [-2.0, 0.3],
            [1.0, 2.0],
            [0.0, 0.0],
            [2.0, -0.5],
            [-1.0, 1.0],
            [0.7, 0.2],
        ]
    )
    x = np.array([1, 1, 1, 0, 0, 0, 0, 0])
    y = np.array([1, 0, 1, 0, 1, 0, 0, 1])
    u = np.array(
        [
            [1.0, 0.0],
            [0.0, 1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 0.0],
            [1.0, 1.0],
            [0.0, 1.0],
        ]
    )
    return Dataset(
        z=z, x=x, y=y, z_names=["z1", "z2"], u=u, u_names=["u1", "u2"]
    )


def standardized(z):
    mu = z.mean(axis=0)
    sd = z.std(axis=0)
    return (z - mu) / np.where(sd > 0, sd, 1.0)


def brute_order(rows):
    """rows: list of (score, i, j) or (score, aux, i, j); plain-Python sort."""
    return sorted(rows)


def as_triples(ranked: RankedPairs):
    return list(zip(ranked.score.tolist(), ranked.i.tolist(), ranked.j.tolist()))


class TestZMatch:
    def test_matches_bruteforce_order(self):
        ds = small_dataset()
        ranked = score_pairs(ds, StrategyConfig(kind="z_match"))
        zs = standardized(ds.z)
        expect = brute_order(
            [
                (float(np.linalg.norm(zs[i] - zs[j])), i, j)
                for i in [0, 1, 2]
                for j in [3, 4, 5, 6, 7]
            ]
        )
        got = as_triples(ranked)
        assert [(i, j) for _, i, j in got] == [(i, j) for _, i, j in expect]
        np.testing.assert_allclose(
            [s for s, _, _ in got], [s for s, _, _ in expect], rtol=0, atol=1e-12
        )

    def test_duplicate_rows_rank_first_with_zero_score(self):
        ds = small_dataset()
        ranked = score_pairs(ds, StrategyConfig(kind="z_match"))
        assert (ranked.i[0], ranked.j[0]) == (0, 3)
        assert ranked.score[0] == 0.0

    def test_polarity_all_i_treated_all_j_untreated(self):
        ds = small_dataset()
        for kind in ("z_match", "z_dom", "marginal"):
            ranked = score_pairs(ds, StrategyConfig(kind=kind))
            assert np.all(ds.x[ranked.i] == 1)
            assert np.all(ds.x[ranked.j] == 0)

    def test_identical_covariates_fall_back_to_index_order(self):
        z = np.ones((6, 2))
        ds = Dataset(
            z=z,
            x=np.array([1, 1, 0, 0, 0, 1]),
            y=np.zeros(6, dtype=int),
            z_names=["a", "b"],
        )
        ranked = score_pairs(ds, StrategyConfig(kind="z_match"))
        assert as_triples(ranked) == [
            (0.0, 0, 2),
            (0.0, 0, 3),
            (0.0, 0, 4),
            (0.0, 1, 2),
            (0.0, 1, 3),
            (0.0, 1, 4),
            (0.0, 5, 2),
            (0.0, 5, 3),
            (0.0, 5, 4),
        ]


class TestZDom:
    def test_matches_bruteforce_order_with_distance_tiebreak(self):
        ds = small_dataset()
        cfg = StrategyConfig(kind="z_dom", dominance_margin=0.2)
        ranked = score_pairs(ds, cfg)
        zs = standardized(ds.z)
        rows = []
        for i in [0, 1, 2]:
            for j in [3, 4, 5, 6, 7]:
                diff = zs[i] - zs[j]
                rows.append(
                    (
                        float((diff > 0.2).sum()),
                        float(np.linalg.norm(diff)),
                        i,
                        j,
                    )
                )
        expect = brute_order(rows)
        got = list(zip(ranked.score.tolist(), ranked.i.tolist(), ranked.j.tolist()))
        assert [(s, i, j) for s, _, i, j in expect] == got

    def test_rank_zero_pairs_nowhere_exceed_margin(self):
        ds = small_dataset()
        cfg = StrategyConfig(kind="z_dom", dominance_margin=0.2)
        ranked = score_pairs(ds, cfg)
        zs = standardized(ds.z)
        for row in range(len(ranked)):
            diff = zs[ranked.i[row]] - zs[ranked.j[row]]
            if ranked.score[row] == 0.0:
                assert not np.any(diff > 0.2)
            else:
                assert (diff > 0.2).sum() == ranked.score[row]

    def test_strict_keeps_only_everywhere_below(self):
        ds = small_dataset()
        cfg = StrategyConfig(kind="z_dom", dominance_margin=0.2, strict=True)
        ranked = score_pairs(ds, cfg)
        zs = standardized(ds.z)
        assert len(ranked) > 0
        got = set(zip(ranked.i.tolist(), ranked.j.tolist()))
        expect = {
            (i, j)
            for i in [0, 1, 2]
            for j in [3, 4, 5, 6, 7]
            if np.all(zs[i] - zs[j] < 0)
        }
        assert got == expect


class TestPiStrategies:
    PI = np.array([0.30, 0.52, 0.18, 0.31, 0.50, 0.90, 0.05, 0.33])

    def test_pi_match_bruteforce(self):
        ds = small_dataset()
        ranked = score_pairs(ds, StrategyConfig(kind="pi_match"), propensity=self.PI)
        expect = brute_order(
            [
                (abs(float(self.PI[i] - self.PI[j])), i, j)
                for i in [0, 1, 2]
                for j in [3, 4, 5, 6, 7]
            ]
        )
        got = as_triples(ranked)
        assert [(i, j) for _, i, j in got] == [(i, j) for _, i, j in expect]

    def test_pi_dom_bruteforce_signed(self):
        ds = small_dataset()
        ranked = score_pairs(ds, StrategyConfig(kind="pi_dom"), propensity=self.PI)
        expect = brute_order(
            [
                (float(self.PI[i] - self.PI[j]), i, j)
                for i in [0, 1, 2]
                for j in [3, 4, 5, 6, 7]
            ]
        )
        assert as_triples(ranked) == [(pytest.approx(s), i, j) for s, i, j in expect]
        # most negative gap first: treated far below untreated
        assert ranked.score[0] == pytest.approx(0.18 - 0.90)

    def test_missing_propensity_raises(self):
        ds = small_dataset()
        with pytest.raises(MissingPropensity):
            score_pairs(ds, StrategyConfig(kind="pi_match"))
        with pytest.raises(MissingPropensity):
            score_pairs(ds, StrategyConfig(kind="pi_match"), propensity=self.PI[:4])

    def test_fraction_exceeding_gap(self):
        ds = small_dataset()
        cfg = StrategyConfig(kind="pi_match", pi_gap_tolerance=0.05)
        ranked = score_pairs(ds, cfg, propensity=self.PI)
        gaps = np.array(
            [abs(self.PI[i] - self.PI[j]) for i in [0, 1, 2] for j in [3, 4, 5, 6, 7]]
        )
        assert ranked.fraction_exceeding_gap() == pytest.approx((gaps > 0.05).mean())
        assert ranked.fraction_exceeding_gap(1.0) == 0.0

    def test_gap_fraction_rejects_non_pi_strategies(self):
        ds = small_dataset()
        ranked = score_pairs(ds, StrategyConfig(kind="z_match"))
        with pytest.raises(ValueError):
            ranked.fraction_exceeding_gap()


class TestMarginal:
    def test_deterministic_and_seed_sensitive(self):
        ds = small_dataset()
        r0a = score_pairs(ds, StrategyConfig(kind="marginal", seed=7))
        r0b = score_pairs(ds, StrategyConfig(kind="marginal", seed=7))
        r1 = score_pairs(ds, StrategyConfig(kind="marginal", seed=8))
        assert as_triples(r0a) == as_triples(r0b)
        assert [(i, j) for _, i, j in as_triples(r0a)] != [
            (i, j) for _, i, j in as_triples(r1)
        ]

    def test_same_support_across_seeds(self):
        ds = small_dataset()
        r0 = score_pairs(ds, StrategyConfig(kind="marginal", seed=7))
        r1 = score_pairs(ds, StrategyConfig(kind="marginal", seed=8))
        support0 = set(zip(r0.i.tolist(), r0.j.tolist()))
        support1 = set(zip(r1.i.tolist(), r1.j.tolist()))
        assert support0 == support1
        assert len(support0) == 15


class TestEdgesAndErrors:
    def test_empty_arm_raises(self):
        z = np.random.default_rng(0).normal(size=(4, 2))
        ds = Dataset(
            z=z, x=np.array([1, 1, 1, 1]), y=np.zeros(4, dtype=int), z_names=["a", "b"]
        )
        with pytest.raises(EmptyArm):
            score_pairs(ds, StrategyConfig(kind="z_match"))

    def test_bad_kind_rejected(self):
        with pytest.raises(ValueError):
            StrategyConfig(kind="nearest")

    def test_config_round_trip(self):
        cfg = StrategyConfig(
            kind="pi_dom", dominance_margin=0.3, pi_gap_tolerance=0.01,
            max_unit_reuse=2, seed=5, strict=False,
        )
        assert StrategyConfig.from_dict(cfg.to_dict()) == cfg


class TestBudgetSelection:
    def _ranked(self, pairs):
        i = np.array([p[0] for p in pairs], dtype=np.int64)
        j = np.array([p[1] for p in pairs], dtype=np.int64)
        return RankedPairs(
            i=i,
            j=j,
            score=np.arange(len(pairs), dtype=float),
            config=StrategyConfig(kind="z_match"),
            dataset_hash="x",
        )

    def test_reuse_cap_one_gives_disjoint_units(self):
        ranked = self._ranked([(0, 5), (0, 6), (1, 5), (1, 6), (2, 7)])
        out = select_budget(ranked, budget=10, max_unit_reuse=1)
        assert list(zip(out.i.tolist(), out.j.tolist())) == [(0, 5), (1, 6), (2, 7)]

    def test_reuse_cap_counts_both_sides(self):
        ranked = self._ranked([(0, 5), (0, 6), (0, 7), (1, 5), (2, 5), (3, 5)])
        out = select_budget(ranked, budget=10, max_unit_reuse=2)
        # unit 0 used twice then blocked; unit 5 used twice then blocked
        assert list(zip(out.i.tolist(), out.j.tolist())) == [(0, 5), (0, 6), (1, 5)]

    def test_budget_truncates_in_rank_order(self):
        ranked = self._ranked([(0, 5), (1, 6), (2, 7), (0, 6)])
        out = select_budget(ranked, budget=2)
        assert list(zip(out.i.tolist(), out.j.tolist())) == [(0, 5), (1, 6)]

    def test_exhaustion_returns_fewer_than_budget(self):
        ranked = self._ranked([(0, 5), (0, 5)])
        out = select_budget(ranked, budget=5, max_unit_reuse=1)
        assert len(out) == 1

    def test_default_cap_comes_from_config(self):
        pairs = [(0, k) for k in range(5, 10)]
        i = np.array([p[0] for p in pairs], dtype=np.int64)
        j = np.array([p[1] for p in pairs], dtype=np.int64)
        ranked = RankedPairs(
            i=i,
            j=j,
            score=np.arange(5, dtype=float),
            config=StrategyConfig(kind="z_match", max_unit_reuse=3),
            dataset_hash="x",
        )
        assert len(select_budget(ranked, budget=10)) == 3

    def test_empty_selection(self):
        ranked = self._ranked([])
        out = select_budget(ranked, budget=3)
        assert len(out) == 0


class TestRoundTrip:
    def test_save_load_bit_exact(self, tmp_path):
        ds = small_dataset()
        ranked = score_pairs(
            ds, StrategyConfig(kind="pi_match", seed=3), propensity=TestPiStrategies.PI
        )
        ranked.save(tmp_path / "ranked")
        back = RankedPairs.load(tmp_path / "ranked")
        np.testing.assert_array_equal(back.i, ranked.i)
        np.testing.assert_array_equal(back.j, ranked.j)
        np.testing.assert_array_equal(back.score, ranked.score)
        assert back.config == ranked.config
        assert back.dataset_hash == ranked.dataset_hash
        assert back.truncated == ranked.truncated

    def test_head(self):
        ds = small_dataset()
        ranked = score_pairs(ds, StrategyConfig(kind="z_match"))
        assert as_triples(ranked.head(4)) == as_triples(ranked)[:4]


class TestLargePoolPaths:
    """Exercise the over-threshold branches with a tiny synthetic threshold."""

    def _dataset(self, n=60, seed=11):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(n, 3))
        x = (rng.random(n) < 0.4).astype(int)
        x[:2] = [1, 0]  # both arms guaranteed
        y = (rng.random(n) < 0.5).astype(int)
        return Dataset(z=z, x=x, y=y, z_names=["a", "b", "c"])

    def test_pi_prefix_matches_full_sort(self):
        ds = self._dataset()
        pi = np.random.default_rng(5).random(ds.n)
        for kind in ("pi_match", "pi_dom"):
            cfg = StrategyConfig(kind=kind)
            full = score_pairs(ds, cfg, propensity=pi)
            pref = score_pairs(
                ds, cfg, propensity=pi, pool_threshold=50, top_m=40
            )
            assert pref.truncated
            assert len(pref) == 40
            assert as_triples(pref) == as_triples(full)[:40]

    def test_pi_prefix_complete_when_top_m_exceeds_pool(self):
        ds = self._dataset(n=20)
        pi = np.random.default_rng(6).random(ds.n)
        cfg = StrategyConfig(kind="pi_match")
        full = score_pairs(ds, cfg, propensity=pi)
        pref = score_pairs(ds, cfg, propensity=pi, pool_threshold=5, top_m=10_000)
        assert as_triples(pref) == as_triples(full)

    def test_z_subsample_deterministic_and_bounded(self):
        ds = self._dataset()
        cfg = StrategyConfig(kind="z_match", seed=2)
        a = score_pairs(ds, cfg, pool_threshold=100, top_m=50)
        b = score_pairs(ds, cfg, pool_threshold=100, top_m=50)
        assert a.truncated and as_triples(a) == as_triples(b)
        assert len(a) == 50
        n1 = len(ds.treated_idx)
        assert len(set(a.j.tolist())) <= max(1, 100 // n1)
        assert np.all(ds.x[a.i] == 1) and np.all(ds.x[a.j] == 0)

    def test_marginal_stream_unique_and_deterministic(self):
        ds = self._dataset()
        cfg = StrategyConfig(kind="marginal", seed=4)
        a = score_pairs(ds, cfg, pool_threshold=100, top_m=80)
        b = score_pairs(ds, cfg, pool_threshold=100, top_m=80)
        assert a.truncated and len(a) == 80
        assert as_triples(a) == as_triples(b)
        pairs = list(zip(a.i.tolist(), a.j.tolist()))
        assert len(set(pairs)) == len(pairs)
        assert np.all(ds.x[a.i] == 1) and np.all(ds.x[a.j] == 0)


class TestFrontierGenerators:
    def test_k_smallest_sums_bruteforce(self):
        rng = np.random.default_rng(3)
        a = np.sort(rng.normal(size=7))
        b = np.sort(rng.normal(size=9))
        ai = np.arange(100, 107)
        bi = np.arange(200, 209)
        got = list(_k_smallest_sums(a, ai, b, bi, 30))
        expect = sorted(
            (float(a[p] + b[q]), int(ai[p]), int(bi[q]))
            for p in range(7)
            for q in range(9)
        )[:30]
        assert [round(s, 12) for s, _, _ in got] == [round(s, 12) for s, _, _ in expect]

    def test_k_smallest_absgaps_bruteforce(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=8)  # deliberately unsorted
        b = rng.normal(size=11)
        ai = np.arange(8)
        bi = np.arange(50, 61)
        got = list(_k_smallest_absgaps(a, ai, b, bi, 40))
        expect = sorted(
            (abs(float(a[p] - b[q])), int(ai[p]), int(bi[q]))
            for p in range(8)
            for q in range(11)
        )[:40]
        assert [round(s, 12) for s, _, _ in got] == [round(s, 12) for s, _, _ in expect]

    def test_generators_handle_empty_and_overask(self):
        empty = np.empty(0)
        assert list(_k_smallest_sums(empty, empty, empty, empty, 5)) == []
        assert list(_k_smallest_absgaps(empty, empty, empty, empty, 5)) == []
        a = np.array([1.0])
        got = list(_k_smallest_sums(a, np.array([0]), a, np.array([1]), 99))
        assert got == [(2.0, 0, 1)]
