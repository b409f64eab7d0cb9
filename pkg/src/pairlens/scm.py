"""Gaussian treatment-assignment models and worked-example builders.

A GaussianSCM couples a partitioned normal over (Z, U) with a logistic
treatment rule P(X=1 | z, u) = sigmoid(alpha + beta'z + gamma'u) and a
logistic outcome rule that may include a direct treatment effect. The module
also builds the small exactly-solvable example models used to pin posterior
behavior, and a family of simulation presets over an equicorrelated concept
block with tunable covariate-concept coupling.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import expit

from .data import Dataset
from .discrete import FiniteDiscreteModel, PiecewiseUniformModel, Segment
from .errors import AcceptanceTooLow, DimensionMismatch, UnknownExample
from .gaussian import (
    GaussianJoint,
    cholesky,
    condition_on_z,
    is_log_supermodular_gaussian,
    sample_mvn,
)
from .rng import make_rng

__all__ = [
    "GaussianSCM",
    "build_panel_scm",
    "build_appendix_example",
    "discrete_example_names",
    "simulate",
    "rejection_sample_u",
]

PROPOSAL_CAP = 10_000_000


@dataclass(frozen=True, eq=False)
class GaussianSCM:
    """Logistic treatment/outcome rules over a partitioned normal (Z, U)."""

    joint: GaussianJoint
    alpha: float
    beta: np.ndarray
    gamma: np.ndarray
    alpha_y: float = 0.0
    beta_y: np.ndarray | None = None
    gamma_y: np.ndarray | None = None
    effect_x: float = 0.0
    name: str = ""

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        gamma = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)
        if beta.shape != (self.joint.d_z,) or gamma.shape != (self.joint.d_u,):
            raise DimensionMismatch("beta/gamma must match joint block dims")
        beta_y = self.beta_y if self.beta_y is not None else np.zeros(self.joint.d_z)
        gamma_y = self.gamma_y if self.gamma_y is not None else np.zeros(self.joint.d_u)
        object.__setattr__(self, "beta_y", np.asarray(beta_y, dtype=float))
        object.__setattr__(self, "gamma_y", np.asarray(gamma_y, dtype=float))
        if self.beta_y.shape != beta.shape or self.gamma_y.shape != gamma.shape:
            raise DimensionMismatch("beta_y/gamma_y must match beta/gamma shapes")

    # -- flags ----------------------------------------------------------------
    @property
    def propensity_monotone_in_u(self) -> bool:
        """True when raising any concept can only raise treatment probability."""
        return bool(np.all(self.gamma >= 0))

    @property
    def u_given_z_log_supermodular(self) -> bool:
        """Whether the conditional concept law U | Z is log-supermodular."""
        return bool(is_log_supermodular_gaussian(condition_on_z(self.joint).cov).holds)

    @property
    def d_z(self) -> int:
        return self.joint.d_z

    @property
    def d_u(self) -> int:
        return self.joint.d_u

    # -- structural functions --------------------------------------------------
    def propensity(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return expit(self.alpha + z @ self.beta + u @ self.gamma)

    def outcome_probability(self, z: np.ndarray, u: np.ndarray, x) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return expit(
            self.alpha_y + z @ self.beta_y + u @ self.gamma_y + self.effect_x * np.asarray(x)
        )

    # -- serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "kind": "gaussian_scm",
            "name": self.name,
            "mean": self.joint.mean.tolist(),
            "cov": self.joint.cov.tolist(),
            "dims": list(self.joint.dims),
            "alpha": self.alpha,
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
            "alpha_y": self.alpha_y,
            "beta_y": self.beta_y.tolist(),
            "gamma_y": self.gamma_y.tolist(),
            "effect_x": self.effect_x,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianSCM":
        joint = GaussianJoint(
            mean=np.array(d["mean"], dtype=float),
            cov=np.array(d["cov"], dtype=float),
            dims=tuple(d["dims"]),
        )
        return cls(
            joint=joint,
            alpha=float(d["alpha"]),
            beta=np.array(d["beta"], dtype=float),
            gamma=np.array(d["gamma"], dtype=float),
            alpha_y=float(d.get("alpha_y", 0.0)),
            beta_y=np.array(d["beta_y"], dtype=float) if "beta_y" in d else None,
            gamma_y=np.array(d["gamma_y"], dtype=float) if "gamma_y" in d else None,
            effect_x=float(d.get("effect_x", 0.0)),
            name=d.get("name", ""),
        )

    def spec_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.blake2b(payload, digest_size=12).hexdigest()


def build_panel_scm(
    *,
    cross_mode: str = "diag",
    rho: float = 0.05,
    c: float = 0.0,
    beta: float = 1.0,
    gamma: float = 1.0,
    d: int = 3,
    sigma_eps2: float = 0.4,
    tau2: float = 0.6,
    alpha: float = -1.0,
    effect_x: float = 0.0,
    beta_y: float = 0.0,
    gamma_y: float = 0.0,
    alpha_y: float = 0.0,
    name: str = "",
) -> GaussianSCM:
    """Simulation preset: unit-variance Z block, equicorrelated U block.

    cross_mode 'diag' couples coordinate k of Z to coordinate k of U with
    correlation rho; cross_mode 'dense' couples every pair with weight c.
    Concept covariance is sigma_eps2 * I + tau2 * ones, so each concept has
    unit variance at the defaults and concepts are positively dependent
    (log-supermodular conditional law for admissible couplings).
    """
    if cross_mode not in ("diag", "dense"):
        raise ValueError("cross_mode must be 'diag' or 'dense'")
    sigma_u = sigma_eps2 * np.eye(d) + tau2 * np.ones((d, d))
    cross = rho * np.eye(d) if cross_mode == "diag" else c * np.ones((d, d))
    cov = np.zeros((2 * d, 2 * d))
    cov[:d, :d] = np.eye(d)
    cov[d:, d:] = sigma_u
    cov[:d, d:] = cross
    cov[d:, :d] = cross.T
    joint = GaussianJoint(mean=np.zeros(2 * d), cov=cov, dims=(d, d))
    if not name:
        tag = f"rho={rho:g}" if cross_mode == "diag" else f"c={c:g}"
        name = f"panel[{cross_mode},{tag},beta={beta:g},gamma={gamma:g}]"
    return GaussianSCM(
        joint=joint,
        alpha=alpha,
        beta=np.full(d, float(beta)),
        gamma=np.full(d, float(gamma)),
        alpha_y=alpha_y,
        beta_y=np.full(d, float(beta_y)),
        gamma_y=np.full(d, float(gamma_y)),
        effect_x=effect_x,
        name=name,
    )


def simulate(scm: GaussianSCM, n: int, seed: int) -> Dataset:
    """Draw n units (Z, U, X, Y) from the model, deterministically per seed."""
    zu = sample_mvn(scm.joint.mean, scm.joint.cov, n, seed, "simulate", "zu")
    z, u = zu[:, : scm.d_z], zu[:, scm.d_z :]
    rng_x = make_rng(seed, "simulate", "x")
    x = (rng_x.random(n) < scm.propensity(z, u)).astype(np.int8)
    rng_y = make_rng(seed, "simulate", "y")
    y = (rng_y.random(n) < scm.outcome_probability(z, u, x)).astype(np.int8)
    return Dataset(
        z=z,
        x=x,
        y=y,
        z_names=[f"z{k + 1}" for k in range(scm.d_z)],
        u=u,
        u_names=[f"u{k + 1}" for k in range(scm.d_u)],
        provenance=f"gaussian_scm:{scm.spec_hash()}",
    )


def rejection_sample_u(
    scm: GaussianSCM,
    z: np.ndarray,
    x: int,
    n: int,
    seed: int,
    *,
    proposal_cap: int = PROPOSAL_CAP,
) -> np.ndarray:
    """Draw n concept vectors from P(U | Z = z, X = x) by rejection.

    Proposes from the Gaussian conditional U | Z = z and accepts with the
    propensity (x = 1) or its complement (x = 0). Raises AcceptanceTooLow when
    the proposal budget is exhausted first.
    """
    if x not in (0, 1):
        raise ValueError("x must be 0 or 1")
    z = np.asarray(z, dtype=float)
    if z.shape != (scm.d_z,):
        raise DimensionMismatch(f"z must have shape ({scm.d_z},)")
    cond = condition_on_z(scm.joint)
    mean = cond.mean(z)
    rng = make_rng(seed, "rejection_u", x)
    lower = cholesky(cond.cov)
    taken: list[np.ndarray] = []
    got = 0
    spent = 0
    chunk = max(2048, min(4 * int(n), 1 << 20))
    offset = scm.alpha + float(z @ scm.beta)
    while got < n:
        if spent >= proposal_cap:
            raise AcceptanceTooLow(f"spent {spent} proposals for {got}/{n} accepted draws")
        m = min(chunk, proposal_cap - spent)
        u = mean + rng.standard_normal((m, scm.d_u)) @ lower.T
        pi = expit(offset + u @ scm.gamma)
        p_acc = pi if x == 1 else 1.0 - pi
        keep = rng.random(m) < p_acc
        taken.append(u[keep])
        got += int(keep.sum())
        spent += m
        # Grow chunks geometrically when acceptance is poor so the loop stays
        # vectorized even at percent-level acceptance rates.
        if got < n and spent >= 4 * chunk:
            chunk = min(chunk * 2, 1 << 22)
    return np.concatenate(taken, axis=0)[:n]


def discrete_example_names() -> list[str]:
    return ["necessity_supermod", "zdom_interaction", "zdom_correlation"]


def build_appendix_example(name: str, **params):
    """Construct one of the worked-example models by name.

    - necessity_supermod: two binary concepts with strong negative dependence;
      treatment reads only the first concept. Conditioning on treatment
      reverses the posterior ordering of the second concept.
    - zdom_interaction: uniform scalar concept, propensity u for low z and
      saturated-above-half for high z; shows covariate dominance failing under
      interaction.
    - zdom_correlation: binary concept strongly correlated with the covariate;
      shows dominance failing under concept-covariate correlation.
    - logistic_gaussian: scalar-covariate scalar-concept Gaussian model with
      logistic treatment rule (keyword params rho, beta, gamma, alpha).
    """
    half = Fraction(1, 2)
    if name == "necessity_supermod":
        u_support = ((0, 0), (1, 0), (0, 1), (1, 1))
        probs = (Fraction(1, 100), Fraction(49, 100), Fraction(49, 100), Fraction(1, 100))
        pi = {
            (0, u): Fraction(9, 10) if u[0] == 1 else Fraction(1, 10) for u in u_support
        }
        return FiniteDiscreteModel(
            z_support=(0,),
            z_probs=(Fraction(1),),
            u_support=u_support,
            u_probs_given_z={0: probs},
            pi=pi,
        )
    if name == "zdom_interaction":
        segments = {
            0: (Segment(0, 1, 1, 0, 1),),  # pi = u on [0, 1)
            1: (
                Segment(0, half, 1, 0, 1),  # pi = u below 1/2
                Segment(half, 1, 1, 1, 0),  # pi = 1 at and above 1/2
            ),
        }
        return PiecewiseUniformModel(
            z_support=(0, 1), z_probs=(half, half), segments=segments
        )
    if name == "zdom_correlation":
        u_support = (0, 1)
        return FiniteDiscreteModel(
            z_support=(0, 1),
            z_probs=(half, half),
            u_support=u_support,
            u_probs_given_z={
                0: (Fraction(9, 10), Fraction(1, 10)),
                1: (Fraction(1, 10), Fraction(9, 10)),
            },
            pi={
                (0, 0): Fraction(1, 5),
                (0, 1): Fraction(2, 5),
                (1, 0): Fraction(3, 10),
                (1, 1): Fraction(1, 2),
            },
        )
    if name == "logistic_gaussian":
        rho = float(params.get("rho", 0.0))
        beta = float(params.get("beta", 1.0))
        gamma = float(params.get("gamma", 1.0))
        alpha = float(params.get("alpha", 0.0))
        cov = np.array([[1.0, rho], [rho, 1.0]])
        joint = GaussianJoint(mean=np.zeros(2), cov=cov, dims=(1, 1))
        return GaussianSCM(
            joint=joint,
            alpha=alpha,
            beta=np.array([beta]),
            gamma=np.array([gamma]),
            name=f"logistic_gaussian[rho={rho:g},beta={beta:g},gamma={gamma:g}]",
        )
    raise UnknownExample(f"no worked example named {name!r}")
