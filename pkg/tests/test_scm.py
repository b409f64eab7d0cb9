"""Gaussian model, simulation, and conditional-sampler tests.

Oracle for the rejection sampler: tensor-grid quadrature of the tilted
Gaussian integrand (41 nodes per axis over +-5 conditional sd), which gives
conditional concept means to far better accuracy than the Monte Carlo noise
floor being tested against.
"""

import numpy as np
import pytest
from scipy.special import expit

from pairlens.data import Dataset
from pairlens.errors import AcceptanceTooLow, DimensionMismatch
from pairlens.gaussian import condition_on_z
from pairlens.scm import (
    GaussianSCM,
    build_appendix_example,
    build_panel_scm,
    rejection_sample_u,
    simulate,
)


def quadrature_conditional_means(scm, z, x, nodes=41, span=5.0):
    """E[U | Z=z, X=x] by brute-force tensor quadrature."""
    cond = condition_on_z(scm.joint)
    mean = cond.mean(np.asarray(z, dtype=float))
    sds = np.sqrt(np.diag(cond.cov))
    axes = [np.linspace(m - span * s, m + span * s, nodes) for m, s in zip(mean, sds)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    prec = np.linalg.inv(cond.cov)
    diff = pts - mean
    log_gauss = -0.5 * np.einsum("ij,jk,ik->i", diff, prec, diff)
    pi = expit(scm.alpha + float(np.asarray(z) @ scm.beta) + pts @ scm.gamma)
    tilt = pi if x == 1 else 1.0 - pi
    w = np.exp(log_gauss - log_gauss.max()) * tilt
    return (pts * w[:, None]).sum(axis=0) / w.sum()


class TestPanelBuilder:
    def test_cov_blocks_diag_mode(self):
        scm = build_panel_scm(cross_mode="diag", rho=0.05)
        np.testing.assert_allclose(scm.joint.sigma_z, np.eye(3))
        np.testing.assert_allclose(scm.joint.sigma_zu, 0.05 * np.eye(3))
        expected_u = 0.4 * np.eye(3) + 0.6 * np.ones((3, 3))
        np.testing.assert_allclose(scm.joint.sigma_u, expected_u)
        np.testing.assert_array_equal(scm.beta, np.ones(3))
        np.testing.assert_array_equal(scm.gamma, np.ones(3))
        assert scm.propensity_monotone_in_u
        assert scm.u_given_z_log_supermodular

    def test_strong_coupling_still_supermodular(self):
        scm = build_panel_scm(cross_mode="diag", rho=0.55)
        assert scm.u_given_z_log_supermodular

    def test_dense_mode_supermodularity_threshold(self):
        # Conditional concept covariance is 0.4 I + (0.6 - 3 c^2) J, so the
        # off-diagonal precision changes sign at c = sqrt(0.2) ~ 0.4472.
        assert build_panel_scm(cross_mode="dense", c=0.43, beta=0.2, gamma=0.0).u_given_z_log_supermodular
        assert not build_panel_scm(cross_mode="dense", c=0.46, beta=0.2, gamma=0.0).u_given_z_log_supermodular

    def test_propensity_values(self):
        scm = build_panel_scm(cross_mode="diag", rho=0.05)
        z = np.zeros(3)
        u = np.zeros(3)
        assert scm.propensity(z, u)[0] == pytest.approx(expit(-1.0), abs=1e-12)
        assert scm.propensity(np.ones(3), np.ones(3))[0] == pytest.approx(expit(5.0), abs=1e-12)

    def test_serialization_round_trip(self):
        scm = build_panel_scm(cross_mode="dense", c=0.2, beta=0.2, gamma=0.0, effect_x=-0.2)
        clone = GaussianSCM.from_dict(scm.to_dict())
        assert clone.spec_hash() == scm.spec_hash()
        np.testing.assert_array_equal(clone.joint.cov, scm.joint.cov)
        assert clone.effect_x == scm.effect_x


class TestSimulate:
    def test_shapes_names_determinism(self):
        scm = build_panel_scm(cross_mode="diag", rho=0.05)
        ds = simulate(scm, 5000, seed=3)
        assert ds.n == 5000 and ds.d_z == 3 and ds.d_u == 3
        assert ds.z_names == ["z1", "z2", "z3"]
        assert ds.u_names == ["u1", "u2", "u3"]
        again = simulate(scm, 5000, seed=3)
        np.testing.assert_array_equal(ds.z, again.z)
        np.testing.assert_array_equal(ds.x, again.x)
        np.testing.assert_array_equal(ds.y, again.y)
        assert ds.provenance == again.provenance != ""

    def test_treated_fraction_matches_model(self):
        scm = build_panel_scm(cross_mode="diag", rho=0.05)
        ds = simulate(scm, 100_000, seed=5)
        # E[sigmoid(-1 + sum Z + sum U)] with the sum having sd sqrt(9.9).
        pi_mean = scm.propensity(ds.z, ds.u).mean()
        assert abs(ds.x.mean() - pi_mean) < 4 * np.sqrt(0.25 / ds.n)

    def test_outcome_channel(self):
        scm = build_panel_scm(
            cross_mode="diag", rho=0.05, beta_y=0.3, gamma_y=0.2, alpha_y=-1.0, effect_x=-0.5
        )
        ds = simulate(scm, 200_000, seed=9)
        p = scm.outcome_probability(ds.z, ds.u, ds.x)
        assert abs(ds.y.mean() - p.mean()) < 4 * np.sqrt(0.25 / ds.n)
        # The direct effect should show up as a treated-vs-untreated gap in
        # outcome probability at fixed (z, u).
        p1 = scm.outcome_probability(ds.z, ds.u, np.ones(ds.n))
        p0 = scm.outcome_probability(ds.z, ds.u, np.zeros(ds.n))
        assert np.all(p1 < p0)


class TestRejectionSampler:
    def test_matches_quadrature_oracle(self):
        scm = build_panel_scm(cross_mode="diag", rho=0.05)
        z = np.zeros(3)
        n = 20_000
        means = {}
        for x in (0, 1):
            draws = rejection_sample_u(scm, z, x, n, seed=17)
            assert draws.shape == (n, 3)
            oracle = quadrature_conditional_means(scm, z, x)
            se = draws.std(axis=0, ddof=1) / np.sqrt(n)
            assert np.all(np.abs(draws.mean(axis=0) - oracle) < 4 * se)
            means[x] = (draws.mean(axis=0), se)
        gap = means[1][0] - means[0][0]
        gap_se = np.sqrt(means[1][1] ** 2 + means[0][1] ** 2)
        assert np.all(gap > 5 * gap_se)  # treated concepts sit clearly higher

    def test_off_center_z(self):
        scm = build_panel_scm(cross_mode="diag", rho=0.55)
        z = -1.5 * np.ones(3)
        draws = rejection_sample_u(scm, z, 1, 4000, seed=23)
        oracle = quadrature_conditional_means(scm, z, 1)
        se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - oracle) < 4 * se)

    def test_determinism_and_cap(self):
        scm = build_panel_scm(cross_mode="diag", rho=0.05)
        a = rejection_sample_u(scm, np.zeros(3), 1, 1000, seed=2)
        b = rejection_sample_u(scm, np.zeros(3), 1, 1000, seed=2)
        np.testing.assert_array_equal(a, b)
        with pytest.raises(AcceptanceTooLow):
            rejection_sample_u(
                scm, np.full(3, -8.0), 1, 100_000, seed=2, proposal_cap=20_000
            )

    def test_bad_z_shape(self):
        scm = build_panel_scm(cross_mode="diag", rho=0.05)
        with pytest.raises(DimensionMismatch):
            rejection_sample_u(scm, np.zeros(2), 1, 10, seed=0)

    def test_univariate_tail_monotone(self):
        """Treated posterior stochastically dominates untreated (scalar case).

        With a positive concept coefficient the treated conditional law should
        sit above the untreated one at every decile.
        """
        scm = build_appendix_example("logistic_gaussian", rho=0.0, beta=1.0, gamma=1.0, alpha=-1.0)
        n = 30_000
        hi = rejection_sample_u(scm, np.zeros(1), 1, n, seed=31)[:, 0]
        lo = rejection_sample_u(scm, np.zeros(1), 0, n, seed=37)[:, 0]
        grid = np.quantile(np.concatenate([hi, lo]), np.linspace(0.1, 0.9, 9))
        for t in grid:
            p_hi = (hi > t).mean()
            p_lo = (lo > t).mean()
            se = np.sqrt(p_hi * (1 - p_hi) / n + p_lo * (1 - p_lo) / n)
            assert p_hi > p_lo - 3 * se


class TestDatasetIO:
    def test_round_trip_bit_exact(self, tmp_path):
        scm = build_panel_scm(cross_mode="diag", rho=0.05)
        ds = simulate(scm, 500, seed=11)
        ds.save(tmp_path / "d")
        loaded = Dataset.load(tmp_path / "d")
        np.testing.assert_array_equal(loaded.z, ds.z)
        np.testing.assert_array_equal(loaded.u, ds.u)
        np.testing.assert_array_equal(loaded.x, ds.x)
        np.testing.assert_array_equal(loaded.y, ds.y)
        assert loaded.z_names == ds.z_names
        assert loaded.provenance == ds.provenance
        assert loaded.content_hash() == ds.content_hash()

    def test_validation(self):
        with pytest.raises(ValueError):
            Dataset(
                z=np.zeros((3, 1)),
                x=np.array([0, 1, 2]),
                y=np.array([0, 0, 1]),
                z_names=["a"],
            )
        with pytest.raises(DimensionMismatch):
            Dataset(
                z=np.zeros((3, 1)),
                x=np.array([0, 1]),
                y=np.array([0, 0, 1]),
                z_names=["a"],
            )
