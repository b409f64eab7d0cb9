"""Gaussian linear algebra: factorization, conditioning, supermodularity.

The joint law here is always a partitioned multivariate normal over observed
covariates Z (first block) and unobserved concepts U (second block). The
operations are the small set the rest of the package needs: a pivot-checked
Cholesky, the conditional law U | Z = z in closed form, a log-supermodularity
test on the precision matrix, and seeded sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite
from .rng import make_rng

__all__ = [
    "cholesky",
    "GaussianJoint",
    "ConditionalGaussian",
    "condition_on_z",
    "SupermodularityVerdict",
    "is_log_supermodular_gaussian",
    "sample_mvn",
]

PIVOT_TOL = 1e-12
SYMMETRY_TOL = 1e-10


def _check_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL) -> None:
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if float(np.abs(a - a.T).max(initial=0.0)) > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")


def cholesky(cov: np.ndarray, *, pivot_tol: float = PIVOT_TOL) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == cov.

    Raises NotPositiveDefinite when any pivot falls at or below pivot_tol,
    which is how malformed model covariances surface early.
    """
    a = np.array(cov, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    _check_symmetric(a)
    n = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot <= pivot_tol:
            raise NotPositiveDefinite(f"pivot {pivot:.3e} at index {j} is <= {pivot_tol:.1e}")
        lower[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


@dataclass(frozen=True, eq=False)
class GaussianJoint:
    """Zero-based partitioned normal over (Z, U).

    mean has length d_z + d_u; cov is partitioned conformably with dims.
    Validation requires symmetry and positive definiteness at construction.
    """

    mean: np.ndarray
    cov: np.ndarray
    dims: tuple[int, int]

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        d_z, d_u = self.dims
        d = d_z + d_u
        if d_z < 0 or d_u < 0 or mean.shape != (d,) or cov.shape != (d, d):
            raise DimensionMismatch(
                f"dims {self.dims} inconsistent with mean {mean.shape} / cov {cov.shape}"
            )
        cholesky(cov)  # raises NotPositiveDefinite / ValueError as appropriate

    @property
    def d_z(self) -> int:
        return self.dims[0]

    @property
    def d_u(self) -> int:
        return self.dims[1]

    @property
    def mean_z(self) -> np.ndarray:
        return self.mean[: self.d_z]

    @property
    def mean_u(self) -> np.ndarray:
        return self.mean[self.d_z :]

    @property
    def sigma_z(self) -> np.ndarray:
        return self.cov[: self.d_z, : self.d_z]

    @property
    def sigma_u(self) -> np.ndarray:
        return self.cov[self.d_z :, self.d_z :]

    @property
    def sigma_zu(self) -> np.ndarray:
        """Cross block with Z rows and U columns."""
        return self.cov[: self.d_z, self.d_z :]


@dataclass(frozen=True, eq=False)
class ConditionalGaussian:
    """Law of U given Z = z: normal with mean slope @ z + offset."""

    slope: np.ndarray
    offset: np.ndarray
    cov: np.ndarray

    def mean(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return self.slope @ z + self.offset
        return z @ self.slope.T + self.offset


def condition_on_z(joint: GaussianJoint) -> ConditionalGaussian:
    """Closed-form conditional U | Z.

    slope = Sigma_ZU' Sigma_Z^-1, cov = Sigma_U - Sigma_ZU' Sigma_Z^-1 Sigma_ZU,
    offset chosen so that mean(z) = mean_u + slope (z - mean_z).
    """
    if joint.d_z == 0:
        return ConditionalGaussian(
            slope=np.zeros((joint.d_u, 0)), offset=joint.mean_u.copy(), cov=joint.sigma_u.copy()
        )
    lower = cholesky(joint.sigma_z)
    # Solve Sigma_Z X = Sigma_ZU via the factor, then slope = X'.
    forward = np.linalg.solve(lower, joint.sigma_zu)
    solved = np.linalg.solve(lower.T, forward)
    slope = solved.T
    cov = joint.sigma_u - joint.sigma_zu.T @ solved
    cov = 0.5 * (cov + cov.T)
    offset = joint.mean_u - slope @ joint.mean_z
    return ConditionalGaussian(slope=slope, offset=offset, cov=cov)


class SupermodularityVerdict(NamedTuple):
    holds: bool
    worst_pair: tuple[int, int] | None
    worst_value: float


def is_log_supermodular_gaussian(cov: np.ndarray, tol: float = 1e-9) -> SupermodularityVerdict:
    """Whether the normal density with this covariance is log-supermodular.

    For Gaussians the mixed second partial of the log-density in coordinates
    (k, l) is minus the (k, l) precision entry, so log-supermodularity holds
    exactly when every off-diagonal precision entry is <= tol. Returns the
    worst offending entry either way (1-d covariances hold vacuously).
    """
    a = np.asarray(cov, dtype=float)
    lower = cholesky(a)
    identity = np.eye(a.shape[0])
    precision = np.linalg.solve(lower.T, np.linalg.solve(lower, identity))
    precision = 0.5 * (precision + precision.T)
    n = a.shape[0]
    if n < 2:
        return SupermodularityVerdict(True, None, 0.0)
    off = precision.copy()
    np.fill_diagonal(off, -np.inf)
    k, l = np.unravel_index(int(np.argmax(off)), off.shape)
    worst = float(precision[k, l])
    return SupermodularityVerdict(worst <= tol, (int(k), int(l)), worst)


def sample_mvn(mean: np.ndarray, cov: np.ndarray, n: int, seed: int, *stream: int | str) -> np.ndarray:
    """Draw n rows from N(mean, cov), deterministically for a given seed/stream."""
    mean = np.asarray(mean, dtype=float)
    lower = cholesky(cov)
    rng = make_rng(seed, *stream)
    normals = rng.standard_normal((n, mean.shape[0]))
    return mean + normals @ lower.T
