"""Small treatment-assignment models with exactly computable posteriors.

These models exist to pin the package's sampling and dominance machinery to
closed-form ground truth. Two families are supported:

- finite models: Z and U both take finitely many values, all probabilities and
  propensities are rational numbers, and posteriors are computed with exact
  fraction arithmetic;
- piecewise-uniform models: Z finite, U scalar on [0, 1] with a piecewise-
  constant density and a propensity that is piecewise linear in u, so every
  conditioning integral is a polynomial with rational coefficients.

Posterior queries P(U in event | Z = z, X = x) are exact (Fraction results);
`sample_posterior_u` draws from the same conditional law by rejection so the
two code paths can be cross-checked statistically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import AcceptanceTooLow, DimensionMismatch, ZeroConditioningMass
from .rng import make_rng

__all__ = [
    "FiniteDiscreteModel",
    "PiecewiseUniformModel",
    "Segment",
    "enumerate_posterior",
    "exact_propensity",
    "sample_posterior_u",
]

PROPOSAL_CAP = 10_000_000


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"exact model parameters must be Fraction/int/str, got {type(x)!r}")


@dataclass(frozen=True)
class FiniteDiscreteModel:
    """Finite-support model: P(Z), P(U | Z), and a propensity table.

    u_support is a list of tuples (vector-valued concepts allowed); the
    propensity table maps (z, u) to P(X = 1 | z, u). All values rational.
    """

    z_support: tuple
    z_probs: tuple
    u_support: tuple
    u_probs_given_z: dict
    pi: dict

    def __post_init__(self):
        object.__setattr__(self, "z_probs", tuple(_as_fraction(p) for p in self.z_probs))
        probs = {z: tuple(_as_fraction(p) for p in v) for z, v in self.u_probs_given_z.items()}
        object.__setattr__(self, "u_probs_given_z", probs)
        object.__setattr__(self, "pi", {k: _as_fraction(v) for k, v in self.pi.items()})
        if len(self.z_support) != len(self.z_probs):
            raise DimensionMismatch("z_support and z_probs length mismatch")
        if sum(self.z_probs) != 1:
            raise ValueError("z probabilities must sum to 1 exactly")
        for z in self.z_support:
            pz = probs[z]
            if len(pz) != len(self.u_support):
                raise DimensionMismatch(f"u probabilities for z={z!r} mismatch u_support")
            if sum(pz) != 1:
                raise ValueError(f"u probabilities for z={z!r} must sum to 1 exactly")
            for u in self.u_support:
                p = self.pi[(z, u)]
                if not 0 <= p <= 1:
                    raise ValueError(f"propensity out of [0,1] at {(z, u)!r}")

    @property
    def d_u(self) -> int:
        u0 = self.u_support[0]
        return len(u0) if isinstance(u0, tuple) else 1

    def arm_mass(self, z, x: int) -> Fraction:
        """P(X = x | Z = z), exactly."""
        total = Fraction(0)
        for u, pu in zip(self.u_support, self.u_probs_given_z[z]):
            p = self.pi[(z, u)]
            total += pu * (p if x == 1 else 1 - p)
        return total

    def posterior(self, z, x: int, event: Callable) -> Fraction:
        mass = self.arm_mass(z, x)
        if mass == 0:
            raise ZeroConditioningMass(f"P(X={x} | Z={z!r}) is exactly zero")
        num = Fraction(0)
        for u, pu in zip(self.u_support, self.u_probs_given_z[z]):
            if event(u):
                p = self.pi[(z, u)]
                num += pu * (p if x == 1 else 1 - p)
        return num / mass


@dataclass(frozen=True)
class Segment:
    """Density and propensity on [lo, hi): density constant, pi = a + b*u."""

    lo: Fraction
    hi: Fraction
    density: Fraction
    a: Fraction
    b: Fraction

    def __post_init__(self):
        for name in ("lo", "hi", "density", "a", "b"):
            object.__setattr__(self, name, _as_fraction(getattr(self, name)))
        if self.hi <= self.lo:
            raise ValueError("segment must have hi > lo")
        for endpoint in (self.lo, self.hi):
            p = self.a + self.b * endpoint
            if not 0 <= p <= 1:
                raise ValueError("propensity leaves [0,1] on segment")


@dataclass(frozen=True)
class PiecewiseUniformModel:
    """Scalar U on [0,1] with piecewise-constant density, piecewise-linear pi."""

    z_support: tuple
    z_probs: tuple
    segments: dict  # z -> tuple[Segment, ...] covering [0,1)

    def __post_init__(self):
        object.__setattr__(self, "z_probs", tuple(_as_fraction(p) for p in self.z_probs))
        if sum(self.z_probs) != 1:
            raise ValueError("z probabilities must sum to 1 exactly")
        for z, segs in self.segments.items():
            cursor = Fraction(0)
            total = Fraction(0)
            for seg in segs:
                if seg.lo != cursor:
                    raise ValueError(f"segments for z={z!r} do not tile [0,1)")
                cursor = seg.hi
                total += seg.density * (seg.hi - seg.lo)
            if cursor != 1 or total != 1:
                raise ValueError(f"segments for z={z!r} must cover [0,1) with unit mass")

    @property
    def d_u(self) -> int:
        return 1

    @staticmethod
    def _segment_mass(seg: Segment, x: int, lo: Fraction, hi: Fraction) -> Fraction:
        """Integral of density * P(X=x | u) over [lo, hi] inside the segment."""
        lo = max(lo, seg.lo)
        hi = min(hi, seg.hi)
        if hi <= lo:
            return Fraction(0)
        a, b = (seg.a, seg.b) if x == 1 else (1 - seg.a, -seg.b)
        linear = a * (hi - lo) + b * (hi * hi - lo * lo) / 2
        return seg.density * linear

    def arm_mass(self, z, x: int) -> Fraction:
        return sum(
            (self._segment_mass(seg, x, Fraction(0), Fraction(1)) for seg in self.segments[z]),
            Fraction(0),
        )

    def posterior(self, z, x: int, event: tuple) -> Fraction:
        """P(lo < U <= hi | Z=z, X=x) for event = (lo, hi), exactly."""
        lo, hi = (_as_fraction(event[0]), _as_fraction(event[1]))
        mass = self.arm_mass(z, x)
        if mass == 0:
            raise ZeroConditioningMass(f"P(X={x} | Z={z!r}) is exactly zero")
        num = sum(
            (self._segment_mass(seg, x, lo, hi) for seg in self.segments[z]), Fraction(0)
        )
        return num / mass


ExactModel = FiniteDiscreteModel | PiecewiseUniformModel


def enumerate_posterior(model: ExactModel, z, x: int, event) -> Fraction:
    """Exact P(U in event | Z = z, X = x).

    For finite models the event is a predicate over u values; for
    piecewise-uniform models it is an interval (lo, hi].
    """
    if x not in (0, 1):
        raise ValueError("x must be 0 or 1")
    if z not in model.z_support:
        raise ValueError(f"z={z!r} not in model support")
    return model.posterior(z, x, event)


def exact_propensity(model: ExactModel, z) -> Fraction:
    """Exact marginal propensity P(X = 1 | Z = z) with U integrated out."""
    if z not in model.z_support:
        raise ValueError(f"z={z!r} not in model support")
    return model.arm_mass(z, 1)


def sample_posterior_u(
    model: ExactModel,
    z,
    x: int,
    n: int,
    seed: int,
    *,
    proposal_cap: int = PROPOSAL_CAP,
) -> np.ndarray:
    """Draw n rows from P(U | Z = z, X = x) by rejection.

    Proposes from P(U | Z = z) and accepts with probability pi (x = 1) or
    1 - pi (x = 0). Raises AcceptanceTooLow once proposal_cap proposals have
    been spent without collecting n accepted draws.
    """
    if x not in (0, 1):
        raise ValueError("x must be 0 or 1")
    rng = make_rng(seed, "posterior_u", str(z), x)
    taken: list[np.ndarray] = []
    got = 0
    spent = 0
    chunk = max(1024, min(int(n) * 4, 1 << 20))
    if isinstance(model, FiniteDiscreteModel):
        probs = np.array([float(p) for p in model.u_probs_given_z[z]])
        support = np.array(
            [u if isinstance(u, tuple) else (u,) for u in model.u_support], dtype=float
        )
        accept_p = np.array(
            [float(model.pi[(z, u)]) if x == 1 else 1.0 - float(model.pi[(z, u)]) for u in model.u_support]
        )
        while got < n:
            if spent >= proposal_cap:
                raise AcceptanceTooLow(
                    f"spent {spent} proposals for {got}/{n} accepted draws"
                )
            m = min(chunk, proposal_cap - spent)
            idx = rng.choice(len(support), size=m, p=probs)
            keep = rng.random(m) < accept_p[idx]
            taken.append(support[idx[keep]])
            got += int(keep.sum())
            spent += m
    else:
        segs = model.segments[z]
        seg_mass = np.array([float(s.density * (s.hi - s.lo)) for s in segs])
        seg_mass = seg_mass / seg_mass.sum()
        lows = np.array([float(s.lo) for s in segs])
        highs = np.array([float(s.hi) for s in segs])
        a = np.array([float(s.a) for s in segs])
        b = np.array([float(s.b) for s in segs])
        while got < n:
            if spent >= proposal_cap:
                raise AcceptanceTooLow(
                    f"spent {spent} proposals for {got}/{n} accepted draws"
                )
            m = min(chunk, proposal_cap - spent)
            idx = rng.choice(len(segs), size=m, p=seg_mass)
            u = lows[idx] + rng.random(m) * (highs[idx] - lows[idx])
            pi_u = a[idx] + b[idx] * u
            p_acc = pi_u if x == 1 else 1.0 - pi_u
            keep = rng.random(m) < p_acc
            taken.append(u[keep][:, None])
            got += int(keep.sum())
            spent += m
    out = np.concatenate(taken, axis=0)[:n]
    return out
