"""Tests for pairlens.gaussian.

Oracles used here:
- frozen hand-computed factor for a 2x2 matrix (verified by reconstruction),
- Sherman-Morrison closed form for equicorrelated precision off-diagonals,
- OLS slopes of sampled U on sampled Z as an independent estimate of the
  conditional-mean matrix,
- a brute-force four-point lattice check of log-supermodularity on a small
  product grid, independent of the precision-matrix shortcut.
"""

import numpy as np
import pytest

from pairlens.errors import DimensionMismatch, NotPositiveDefinite
from pairlens.gaussian import (
    GaussianJoint,
    cholesky,
    condition_on_z,
    is_log_supermodular_gaussian,
    sample_mvn,
)

# Frozen: cholesky([[4, 2], [2, 3]]) worked by hand.
EXPECTED_L_2X2 = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])


def grid_four_point_holds(cov, points_per_axis=5, tol=1e-9):
    """Brute-force supermodularity of the centered normal log-density.

    Checks log f(a) + log f(b) <= log f(min(a,b)) + log f(max(a,b)) for every
    pair of points on a product grid spanning +-2 sd per axis.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    prec = np.linalg.inv(cov)
    axes = [np.linspace(-2.0, 2.0, points_per_axis) * np.sqrt(cov[i, i]) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    logf = -0.5 * np.einsum("ij,jk,ik->i", pts, prec, pts)
    lo = np.minimum(pts[:, None, :], pts[None, :, :])
    hi = np.maximum(pts[:, None, :], pts[None, :, :])
    log_lo = -0.5 * np.einsum("abj,jk,abk->ab", lo, prec, lo)
    log_hi = -0.5 * np.einsum("abj,jk,abk->ab", hi, prec, hi)
    gap = logf[:, None] + logf[None, :] - log_lo - log_hi
    return float(gap.max()) <= tol


class TestCholesky:
    def test_hand_worked_2x2(self):
        L = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
        np.testing.assert_allclose(L, EXPECTED_L_2X2, atol=1e-12)
        np.testing.assert_allclose(L @ L.T, [[4.0, 2.0], [2.0, 3.0]], atol=1e-12)

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_reconstruction_on_random_pd(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            d = int(rng.integers(1, 9))
            g = rng.standard_normal((d, d))
            cov = g.T @ g + 0.1 * np.eye(d)
            L = cholesky(cov)
            err = np.abs(L @ L.T - cov).max() / max(1.0, np.abs(cov).max())
            assert err < 1e-9
            assert np.allclose(np.triu(L, 1), 0.0)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky(np.array([[1.0, 0.5], [0.2, 1.0]]))

    def test_non_square_rejected(self):
        with pytest.raises(DimensionMismatch):
            cholesky(np.zeros((2, 3)))

    def test_near_singular_pivot_rejected(self):
        cov = np.array([[1.0, 1.0], [1.0, 1.0]])  # second pivot exactly 0
        with pytest.raises(NotPositiveDefinite):
            cholesky(cov)


class TestGaussianJoint:
    def test_block_views(self):
        cov = np.array(
            [
                [1.0, 0.2, 0.1],
                [0.2, 1.0, 0.3],
                [0.1, 0.3, 2.0],
            ]
        )
        joint = GaussianJoint(mean=np.array([0.0, 1.0, -1.0]), cov=cov, dims=(2, 1))
        np.testing.assert_array_equal(joint.sigma_z, cov[:2, :2])
        np.testing.assert_array_equal(joint.sigma_u, [[2.0]])
        np.testing.assert_array_equal(joint.sigma_zu, [[0.1], [0.3]])
        np.testing.assert_array_equal(joint.mean_u, [-1.0])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(DimensionMismatch):
            GaussianJoint(mean=np.zeros(3), cov=np.eye(3), dims=(1, 1))

    def test_indefinite_rejected(self):
        cov = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NotPositiveDefinite):
            GaussianJoint(mean=np.zeros(2), cov=cov, dims=(1, 1))


def equicorrelated(d, diag, off):
    return off * np.ones((d, d)) + (diag - off) * np.eye(d)


def panel_joint(rho, d=3):
    """Unit-variance Z block, equicorrelated U block, cross block rho * I."""
    sigma_u = equicorrelated(d, 1.0, 0.6)
    cov = np.zeros((2 * d, 2 * d))
    cov[:d, :d] = np.eye(d)
    cov[d:, d:] = sigma_u
    cov[:d, d:] = rho * np.eye(d)
    cov[d:, :d] = rho * np.eye(d)
    return GaussianJoint(mean=np.zeros(2 * d), cov=cov, dims=(d, d))


class TestConditioning:
    def test_slope_matches_regression_oracle(self):
        joint = panel_joint(rho=0.05)
        cond = condition_on_z(joint)
        np.testing.assert_allclose(cond.slope, 0.05 * np.eye(3), atol=1e-12)
        # Independent oracle: OLS slopes of sampled U on sampled Z.
        samples = sample_mvn(joint.mean, joint.cov, 200_000, seed=11)
        z, u = samples[:, :3], samples[:, 3:]
        beta = np.linalg.lstsq(z, u, rcond=None)[0].T
        # MC standard error of each OLS slope ~ sd(resid)/sqrt(n) ~ 0.0023
        np.testing.assert_allclose(beta, cond.slope, atol=3 * 0.0025)

    def test_conditional_cov_closed_form(self):
        joint = panel_joint(rho=0.55)
        cond = condition_on_z(joint)
        expected = equicorrelated(3, 1.0, 0.6) - 0.55**2 * np.eye(3)
        np.testing.assert_allclose(cond.cov, expected, atol=1e-12)

    def test_conditional_mean_consistency_mc(self):
        joint = panel_joint(rho=0.3)
        cond = condition_on_z(joint)
        samples = sample_mvn(joint.mean, joint.cov, 400_000, seed=3)
        z, u = samples[:, :3], samples[:, 3:]
        # Average U over a thin slab of z-space and compare to the formula.
        center = np.array([0.5, -0.2, 0.1])
        mask = np.all(np.abs(z - center) < 0.2, axis=1)
        assert mask.sum() > 800
        observed = u[mask].mean(axis=0)
        predicted = cond.mean(z[mask]).mean(axis=0)
        se = u[mask].std(axis=0, ddof=1) / np.sqrt(mask.sum())
        assert np.all(np.abs(observed - predicted) < 3 * se + 1e-3)

    def test_nonzero_means_offset(self):
        cov = np.array([[2.0, 0.4], [0.4, 1.0]])
        joint = GaussianJoint(mean=np.array([1.0, -2.0]), cov=cov, dims=(1, 1))
        cond = condition_on_z(joint)
        np.testing.assert_allclose(cond.slope, [[0.2]], atol=1e-12)
        np.testing.assert_allclose(cond.mean(np.array([1.0])), [-2.0], atol=1e-12)
        np.testing.assert_allclose(cond.mean(np.array([2.0])), [-1.8], atol=1e-12)


class TestSupermodularity:
    def test_equicorrelated_holds(self):
        # Sherman-Morrison: off-diagonal precision of a*I + b*J is -b/(a*(a+d*b)).
        d, a, b = 3, 0.4, 0.6
        verdict = is_log_supermodular_gaussian(equicorrelated(d, a + b, b))
        assert verdict.holds
        expected_off = -b / (a * (a + d * b))
        assert verdict.worst_value == pytest.approx(expected_off, abs=1e-12)

    def test_negative_correlation_fails(self):
        cov = equicorrelated(2, 1.0, -0.5)  # precision off-diagonal positive
        verdict = is_log_supermodular_gaussian(cov)
        assert not verdict.holds
        assert verdict.worst_value > 0

    def test_univariate_vacuous(self):
        verdict = is_log_supermodular_gaussian(np.array([[2.0]]))
        assert verdict.holds and verdict.worst_pair is None

    def test_matches_grid_four_point_check(self):
        rng = np.random.default_rng(21)
        checked = 0
        for _ in range(60):
            d = int(rng.integers(2, 4))
            g = rng.standard_normal((d, d))
            cov = g.T @ g + 0.3 * np.eye(d)
            verdict = is_log_supermodular_gaussian(cov)
            if abs(verdict.worst_value) < 1e-6:
                continue  # inside the agreed indeterminacy band
            assert verdict.holds == grid_four_point_holds(cov), cov
            checked += 1
        assert checked >= 40


class TestSampling:
    def test_deterministic_given_seed(self):
        cov = equicorrelated(3, 1.0, 0.6)
        a = sample_mvn(np.zeros(3), cov, 100, seed=5)
        b = sample_mvn(np.zeros(3), cov, 100, seed=5)
        np.testing.assert_array_equal(a, b)
        c = sample_mvn(np.zeros(3), cov, 100, seed=6)
        assert np.abs(a - c).max() > 1e-6

    def test_stream_labels_split(self):
        cov = np.eye(2)
        a = sample_mvn(np.zeros(2), cov, 50, 9, "left")
        b = sample_mvn(np.zeros(2), cov, 50, 9, "right")
        assert np.abs(a - b).max() > 1e-6

    def test_moments(self):
        mean = np.array([1.0, -1.0, 0.5])
        cov = equicorrelated(3, 2.0, 0.8)
        draws = sample_mvn(mean, cov, 400_000, seed=13)
        np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.012)
        np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.03)
