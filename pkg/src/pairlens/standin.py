"""Semi-synthetic tabular generator with oracle binary concepts.

Mimics an EHR-style table: a dozen numeric covariates recorded on a coarse
measurement grid (half-sd steps, so exact ties between units are common, as
they are for real charted values), two binary admission indicators, and ten
binary unobserved concepts driven by latent Gaussians coupled to the
covariates. Treatment and outcome are logistic in (Z, U), with a fixed
protective treatment effect on the outcome logit.

Intercepts are calibrated by a seeded pilot simulation so the treated
fraction and outcome prevalence hit stated targets regardless of the drawn
coefficients. Everything is deterministic in the build seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Dataset
from .rng import make_rng

__all__ = ["StandinModel", "build_standin_model", "simulate_standin"]

_PILOT_N = 40_000


@dataclass(frozen=True)
class StandinModel:
    """Frozen parameter pack for the stand-in generator."""

    n_continuous: int
    binary_p: tuple[float, ...]
    grid: float  # rounding step for continuous covariates, in sd units
    coupling: float  # latent concept loading on standardized covariates
    loadings: np.ndarray  # (d_u, d_z) unit-norm rows
    beta_x: np.ndarray
    gamma_x: np.ndarray
    alpha_x: float
    beta_y: np.ndarray
    gamma_y: np.ndarray
    alpha_y: float
    effect_x: float
    name: str = "standin"

    @property
    def d_z(self) -> int:
        return self.n_continuous + len(self.binary_p)

    @property
    def d_u(self) -> int:
        return self.loadings.shape[0]

    @property
    def z_names(self) -> list[str]:
        cont = [f"z{k + 1:02d}" for k in range(self.n_continuous)]
        ind = [f"ind{k + 1}" for k in range(len(self.binary_p))]
        return cont + ind

    @property
    def u_names(self) -> list[str]:
        return [f"u{k + 1:02d}" for k in range(self.d_u)]

    def _standardize_z(self, z: np.ndarray) -> np.ndarray:
        # theoretical moments: rounded N(0,1) has mean 0 and Sheppard-corrected
        # variance 1 + grid^2/12; binaries have mean p and variance p(1-p)
        p = np.asarray(self.binary_p)
        mean = np.concatenate([np.zeros(self.n_continuous), p])
        var = np.concatenate(
            [np.full(self.n_continuous, 1.0 + self.grid**2 / 12.0), p * (1.0 - p)]
        )
        return (z - mean) / np.sqrt(var)

    def latent_mean(self, z: np.ndarray) -> np.ndarray:
        """Mean of the concept latents given covariates."""
        return self.coupling * (self._standardize_z(z) @ self.loadings.T)

    def propensity(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        return expit(self.alpha_x + z @ self.beta_x + u @ self.gamma_x)

    def outcome_probability(self, z: np.ndarray, u: np.ndarray, x) -> np.ndarray:
        idx = self.alpha_y + z @ self.beta_y + u @ self.gamma_y + self.effect_x * np.asarray(x)
        return expit(idx)

    def to_dict(self) -> dict:
        return {
            "kind": "standin",
            "name": self.name,
            "n_continuous": self.n_continuous,
            "binary_p": list(self.binary_p),
            "grid": self.grid,
            "coupling": self.coupling,
            "loadings": self.loadings.tolist(),
            "beta_x": self.beta_x.tolist(),
            "gamma_x": self.gamma_x.tolist(),
            "alpha_x": self.alpha_x,
            "beta_y": self.beta_y.tolist(),
            "gamma_y": self.gamma_y.tolist(),
            "alpha_y": self.alpha_y,
            "effect_x": self.effect_x,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandinModel":
        return cls(
            n_continuous=int(d["n_continuous"]),
            binary_p=tuple(d["binary_p"]),
            grid=float(d["grid"]),
            coupling=float(d["coupling"]),
            loadings=np.asarray(d["loadings"], dtype=float),
            beta_x=np.asarray(d["beta_x"], dtype=float),
            gamma_x=np.asarray(d["gamma_x"], dtype=float),
            alpha_x=float(d["alpha_x"]),
            beta_y=np.asarray(d["beta_y"], dtype=float),
            gamma_y=np.asarray(d["gamma_y"], dtype=float),
            alpha_y=float(d["alpha_y"]),
            effect_x=float(d["effect_x"]),
            name=d.get("name", "standin"),
        )

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.blake2b(blob, digest_size=12).hexdigest()


def _draw_zu(model_like: dict, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariates and concepts given the structural pieces."""
    m = model_like
    zc = rng.standard_normal((n, m["n_continuous"]))
    zc = np.round(zc / m["grid"]) * m["grid"]
    p = np.asarray(m["binary_p"])
    zb = (rng.random((n, len(p))) < p).astype(float)
    z = np.concatenate([zc, zb], axis=1)
    t_mean = m["latent_mean"](z)
    noise = rng.standard_normal(t_mean.shape)
    t = t_mean + np.sqrt(1.0 - m["coupling"] ** 2) * noise
    u = (t > 0).astype(float)
    return z, u


def _calibrate_intercept(index: np.ndarray, target: float) -> float:
    """Bisection for alpha with mean(expit(alpha + index)) = target."""
    lo, hi = -20.0, 20.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(expit(mid + index).mean()) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def build_standin_model(
    seed: int = 0,
    *,
    n_continuous: int = 12,
    binary_p: tuple[float, ...] = (0.5, 0.35),
    n_concepts: int = 10,
    grid: float = 1.0,
    coupling: float = 0.3,
    effect_x: float = -0.2,
    treated_target: float = 0.25,
    outcome_target: float = 0.35,
    name: str = "standin",
) -> StandinModel:
    """Draw coefficients and calibrate intercepts, all seeded."""
    d_z = n_continuous + len(binary_p)
    rng = make_rng(seed, "standin", "coef")
    w = rng.standard_normal((n_concepts, d_z))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    beta_x = np.concatenate(
        [rng.uniform(0.25, 0.45, size=n_continuous), rng.uniform(0.2, 0.4, size=len(binary_p))]
    )
    gamma_x = rng.uniform(0.3, 0.4, size=n_concepts)
    beta_y = rng.uniform(0.1, 0.25, size=d_z)
    gamma_y = rng.uniform(0.1, 0.2, size=n_concepts)

    proto = StandinModel(
        n_continuous=n_continuous,
        binary_p=tuple(binary_p),
        grid=grid,
        coupling=coupling,
        loadings=w,
        beta_x=beta_x,
        gamma_x=gamma_x,
        alpha_x=0.0,
        beta_y=beta_y,
        gamma_y=gamma_y,
        alpha_y=0.0,
        effect_x=effect_x,
        name=name,
    )
    pilot_rng = make_rng(seed, "standin", "pilot")
    z, u = _draw_zu(
        {
            "n_continuous": n_continuous,
            "grid": grid,
            "binary_p": binary_p,
            "latent_mean": proto.latent_mean,
            "coupling": coupling,
        },
        _PILOT_N,
        pilot_rng,
    )
    idx_x = z @ beta_x + u @ gamma_x
    alpha_x = _calibrate_intercept(idx_x, treated_target)
    x = (pilot_rng.random(_PILOT_N) < expit(alpha_x + idx_x)).astype(float)
    idx_y = z @ beta_y + u @ gamma_y + effect_x * x
    alpha_y = _calibrate_intercept(idx_y, outcome_target)

    return StandinModel(
        n_continuous=n_continuous,
        binary_p=tuple(binary_p),
        grid=grid,
        coupling=coupling,
        loadings=w,
        beta_x=beta_x,
        gamma_x=gamma_x,
        alpha_x=alpha_x,
        beta_y=beta_y,
        gamma_y=gamma_y,
        alpha_y=alpha_y,
        effect_x=effect_x,
        name=name,
    )


def simulate_standin(model: StandinModel, n: int, seed: int) -> Dataset:
    """Draw a dataset of n units; bit-identical for equal (model, seed)."""
    rng_zu = make_rng(seed, "standin_sim", "zu")
    z, u = _draw_zu(
        {
            "n_continuous": model.n_continuous,
            "grid": model.grid,
            "binary_p": model.binary_p,
            "latent_mean": model.latent_mean,
            "coupling": model.coupling,
        },
        n,
        rng_zu,
    )
    rng_x = make_rng(seed, "standin_sim", "x")
    x = (rng_x.random(n) < model.propensity(z, u)).astype(int)
    rng_y = make_rng(seed, "standin_sim", "y")
    y = (rng_y.random(n) < model.outcome_probability(z, u, x)).astype(int)
    return Dataset(
        z=z,
        x=x,
        y=y,
        z_names=model.z_names,
        u=u,
        u_names=model.u_names,
        provenance=f"standin:{model.spec_hash()}",
    )
