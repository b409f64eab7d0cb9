"""Verifiers for the pair-proposal orderings and their sufficient conditions.

Four checkers, increasingly structural:

- orthant_dominance_test: empirical surrogate for the multivariate stochastic
  order — compares upper-orthant probabilities of two samples on a product
  grid of pooled quantiles. A surrogate only: violations refute dominance,
  passes support it.
- kr_fourpoint_check: the four-point density inequality
  f0(u) f1(u') <= f0(u min u') f1(u max u') on a box grid; with one density it
  is exactly log-supermodularity.
- zdom_condition_check: closed-form cross-partials of
  log h(z, u) = log P(X=x | z, u) + log P(u | z) for logistic-Gaussian
  generators; within-concept supermodularity plus the across-covariate sign
  condition, reported pointwise over a box and at the propensity decision
  boundary (where the logistic factor is exactly 1/4).
- pi_dom_condition_check: same conditions with the scalar propensity score in
  place of the covariate vector, estimated by Monte Carlo marginalization
  over narrow propensity windows.

All margins are oriented so that "margin >= -tol" means the condition holds.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit, log_expit

from .errors import DimensionMismatch, LevelSetEmpty, NonFiniteDensity
from .gaussian import cholesky, condition_on_z
from .propensity import true_propensity_batch
from .rng import make_rng
from .scm import GaussianSCM

__all__ = [
    "OrthantReport",
    "orthant_dominance_test",
    "KrReport",
    "kr_fourpoint_check",
    "ConditionFamily",
    "ZdomConditionReport",
    "zdom_condition_check",
    "logistic_gaussian_boundary",
    "PiDomPoint",
    "PiDomReport",
    "pi_dom_condition_check",
]

_MAX_GRID_POINTS = 200_000


# --------------------------------------------------------------------------
# upper-orthant dominance surrogate
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OrthantReport:
    grid: np.ndarray  # (m, d) threshold points
    p_a: np.ndarray
    p_b: np.ndarray
    diff: np.ndarray  # p_a - p_b
    se: np.ndarray
    verdict: str  # dominates | reversed | inconclusive
    worst_index: int  # grid row with the most adverse diff/se

    @property
    def worst_point(self) -> np.ndarray:
        return self.grid[self.worst_index]

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "p_a": self.p_a.tolist(),
            "p_b": self.p_b.tolist(),
            "diff": self.diff.tolist(),
            "se": self.se.tolist(),
            "verdict": self.verdict,
            "worst_index": self.worst_index,
            "worst_point": self.worst_point.tolist(),
        }


def _orthant_probs(samples: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """P(sample > t coordinatewise) for each grid row t."""
    n = len(samples)
    out = np.empty(len(grid))
    chunk = max(1, int(2_000_000 // max(n, 1)))
    for lo in range(0, len(grid), chunk):
        hi = min(lo + chunk, len(grid))
        above = (samples[None, :, :] > grid[lo:hi, None, :]).all(axis=2)
        out[lo:hi] = above.mean(axis=1)
    return out


def orthant_dominance_test(
    samples_a: np.ndarray,
    samples_b: np.ndarray,
    quantile_levels: np.ndarray | None = None,
    se_factor: float = 3.0,
) -> OrthantReport:
    """Compare upper-orthant probabilities of two samples on a product grid.

    Grid thresholds are per-coordinate quantiles of the pooled sample
    (deciles by default), crossed into a full product grid. Verdict
    "dominates" requires every difference above -se_factor*SE and at least
    one strictly positive difference at +se_factor*SE; "reversed" is the
    mirror image; anything else is inconclusive.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"sample dims differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) == 0 or len(b) == 0:
        raise DimensionMismatch("both samples must be non-empty")
    d = a.shape[1]
    if quantile_levels is None:
        quantile_levels = np.linspace(0.1, 0.9, 9)
    levels = np.asarray(quantile_levels, dtype=float)
    if len(levels) ** d > _MAX_GRID_POINTS:
        raise ValueError(
            f"product grid of {len(levels)}^{d} points is too large; "
            "pass fewer quantile levels"
        )
    pooled = np.concatenate([a, b], axis=0)
    axes = [np.quantile(pooled[:, k], levels) for k in range(d)]
    grid = np.array(list(itertools.product(*axes)))

    p_a = _orthant_probs(a, grid)
    p_b = _orthant_probs(b, grid)
    diff = p_a - p_b
    se = np.sqrt(p_a * (1 - p_a) / len(a) + p_b * (1 - p_b) / len(b))

    sig_pos = (diff > 0) & (diff >= se_factor * se)
    sig_neg = (diff < 0) & (-diff >= se_factor * se)
    if not sig_neg.any() and sig_pos.any():
        verdict = "dominates"
        worst = int(np.argmin(diff))
    elif not sig_pos.any() and sig_neg.any():
        verdict = "reversed"
        worst = int(np.argmax(diff))
    else:
        verdict = "inconclusive"
        worst = int(np.argmin(diff))
    return OrthantReport(
        grid=grid, p_a=p_a, p_b=p_b, diff=diff, se=se, verdict=verdict, worst_index=worst
    )


# --------------------------------------------------------------------------
# four-point density inequality
# --------------------------------------------------------------------------


class KrReport(NamedTuple):
    holds: bool
    worst_margin: float  # min over pairs of log rhs - log lhs; >= -tol passes
    worst_pair: tuple[tuple[float, ...], tuple[float, ...]]


def kr_fourpoint_check(
    log_density: Callable[[np.ndarray], float],
    box: tuple[np.ndarray, np.ndarray],
    grid_per_axis: int = 7,
    tol: float = 1e-9,
    log_density_high: Callable[[np.ndarray], float] | None = None,
) -> KrReport:
    """Exhaustive four-point inequality on a box grid.

    With one density f the check is log-supermodularity:
    f(u) f(u') <= f(u min u') f(u max u'). With a second density f1, the pair
    condition f0(u) f1(u') <= f0(u min u') f1(u max u') is checked instead —
    the sufficient condition for f1 to stochastically dominate f0.

    Coordinatewise min/max of two grid points stay on the grid, so densities
    are evaluated once per grid point and pairs are compared by index.
    """
    lo = np.atleast_1d(np.asarray(box[0], dtype=float))
    hi = np.atleast_1d(np.asarray(box[1], dtype=float))
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ValueError("box must be (lo, hi) with hi >= lo coordinatewise")
    d = len(lo)
    if d > 3:
        raise ValueError("four-point grid check supports d <= 3")
    axes = [np.linspace(lo[k], hi[k], grid_per_axis) for k in range(d)]
    idx_grid = np.array(list(itertools.product(*(range(grid_per_axis),) * d)), dtype=np.int64)
    points = np.array(list(itertools.product(*axes)))

    def evaluate(fn) -> np.ndarray:
        vals = np.array([float(fn(p)) for p in points])
        if not np.all(np.isfinite(vals)):
            bad = points[~np.isfinite(vals)][0]
            raise NonFiniteDensity(f"log-density non-finite at {tuple(bad)}")
        return vals

    ld0 = evaluate(log_density)
    ld1 = ld0 if log_density_high is None else evaluate(log_density_high)

    m = len(points)
    strides = (grid_per_axis ** np.arange(d - 1, -1, -1)).astype(np.int64)
    worst_margin = np.inf
    worst_pair = (0, 0)
    # chunk pairs over the first index to bound the (m, m, d) workspace
    chunk = max(1, int(2_000_000 // max(m, 1)))
    for astart in range(0, m, chunk):
        astop = min(astart + chunk, m)
        ia = idx_grid[astart:astop, None, :]
        ib = idx_grid[None, :, :]
        flat_min = np.minimum(ia, ib) @ strides
        flat_max = np.maximum(ia, ib) @ strides
        margin = ld0[flat_min] + ld1[flat_max] - (
            ld0[astart:astop, None] + ld1[None, :]
        )
        pos = np.unravel_index(np.argmin(margin), margin.shape)
        if margin[pos] < worst_margin:
            worst_margin = float(margin[pos])
            worst_pair = (astart + int(pos[0]), int(pos[1]))
    return KrReport(
        holds=bool(worst_margin >= -tol),
        worst_margin=worst_margin,
        worst_pair=(tuple(points[worst_pair[0]]), tuple(points[worst_pair[1]])),
    )


# --------------------------------------------------------------------------
# closed-form cross-partial conditions (covariate version)
# --------------------------------------------------------------------------


class ConditionFamily(NamedTuple):
    holds_box: bool
    worst_margin_box: float
    worst_point: tuple[float, ...]  # (z..., u...) grid point of worst margin
    failing_fraction: float
    holds_boundary: bool
    worst_margin_boundary: float

    def to_dict(self) -> dict:
        return {
            "holds_box": self.holds_box,
            "worst_margin_box": self.worst_margin_box,
            "worst_point": list(self.worst_point),
            "failing_fraction": self.failing_fraction,
            "holds_boundary": self.holds_boundary,
            "worst_margin_boundary": self.worst_margin_boundary,
        }


@dataclass(frozen=True)
class ZdomConditionReport:
    x: int
    within_u: ConditionFamily
    across_zu: ConditionFamily
    box_lo: np.ndarray
    box_hi: np.ndarray
    grid_per_axis: int
    tol: float
    fd_max_discrepancy: float | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "x": self.x,
                "within_u": self.within_u.to_dict(),
                "across_zu": self.across_zu.to_dict(),
                "box_lo": self.box_lo.tolist(),
                "box_hi": self.box_hi.tolist(),
                "grid_per_axis": self.grid_per_axis,
                "tol": self.tol,
                "fd_max_discrepancy": self.fd_max_discrepancy,
            },
            indent=2,
        )


def _default_box(scm: GaussianSCM, sd_multiple: float = 2.0):
    joint = scm.joint
    sd = np.sqrt(np.diag(joint.cov))
    lo = joint.mean - sd_multiple * sd
    hi = joint.mean + sd_multiple * sd
    return lo, hi


def _log_h(scm: GaussianSCM, x: int, z: np.ndarray, u: np.ndarray) -> float:
    """log P(X=x | z, u) + log P(u | z) for a logistic-Gaussian generator."""
    cond = condition_on_z(scm.joint)
    eta = scm.alpha + float(scm.beta @ z) + float(scm.gamma @ u)
    log_px = float(log_expit(eta if x == 1 else -eta))
    resid = u - cond.mean(z)
    omega = np.linalg.inv(cond.cov)
    sign, logdet = np.linalg.slogdet(cond.cov)
    d_u = len(u)
    log_pu = -0.5 * (resid @ omega @ resid + logdet + d_u * np.log(2 * np.pi))
    return log_px + log_pu


def zdom_condition_check(
    scm: GaussianSCM,
    x: int,
    box: tuple[np.ndarray, np.ndarray] | None = None,
    grid_per_axis: int = 5,
    tol: float = 1e-9,
    fd_check: bool = True,
    fd_step: float = 1e-4,
    fd_points: int = 3,
    seed: int = 0,
) -> ZdomConditionReport:
    """Closed-form check of both cross-partial families for one treatment arm.

    log h(z,u) decomposes into a logistic part and a Gaussian conditional, so
    the second partials are exact:

      within concepts (j != k):  d2/du_j du_k = -g_j g_k s' - Omega_jk
      across (z_l, u_j):         d2/dz_l du_j = -b_l g_j s' + (Omega A)_jl

    with s' = p(1-p) the logistic variance factor (identical for both arms),
    Omega the conditional precision of U given Z, and A its regression slope.
    The within family must be >= 0, the across family <= 0; across margins
    are negated so every reported margin passes iff >= -tol.

    Two verdicts per family: pointwise over the box grid, and at the decision
    boundary s' = 1/4 — the worst case for the within family and the most
    favorable for the across family, which is why a generator can satisfy the
    across condition near the boundary yet fail it in the propensity tails.
    """
    if x not in (0, 1):
        raise ValueError("x must be 0 or 1")
    joint = scm.joint
    d_z, d_u = joint.d_z, joint.d_u
    if d_u < 1:
        raise DimensionMismatch("need at least one concept coordinate")
    cond = condition_on_z(joint)
    omega = np.linalg.inv(cond.cov)
    omega_a = omega @ cond.slope  # (d_u, d_z)

    if box is None:
        lo, hi = _default_box(scm)
    else:
        lo = np.asarray(box[0], dtype=float)
        hi = np.asarray(box[1], dtype=float)
    if (grid_per_axis ** (d_z + d_u)) > _MAX_GRID_POINTS:
        raise ValueError("grid too large; lower grid_per_axis")
    axes = [np.linspace(lo[k], hi[k], grid_per_axis) for k in range(d_z + d_u)]
    pts = np.array(list(itertools.product(*axes)))
    z_pts, u_pts = pts[:, :d_z], pts[:, d_z:]
    eta = scm.alpha + z_pts @ scm.beta + u_pts @ scm.gamma
    sprime = expit(eta) * (1 - expit(eta))

    def family(pairs, margin_at) -> ConditionFamily:
        worst = np.inf
        worst_pt = pts[0]
        worst_boundary = np.inf
        failing = np.zeros(len(pts), dtype=bool)
        for pair in pairs:
            margins = margin_at(pair, sprime)
            k = int(np.argmin(margins))
            if margins[k] < worst:
                worst = float(margins[k])
                worst_pt = pts[k]
            failing |= margins < -tol
            boundary_margin = float(margin_at(pair, np.array([0.25]))[0])
            worst_boundary = min(worst_boundary, boundary_margin)
        return ConditionFamily(
            holds_box=bool(worst >= -tol),
            worst_margin_box=worst,
            worst_point=tuple(worst_pt),
            failing_fraction=float(failing.mean()),
            holds_boundary=bool(worst_boundary >= -tol),
            worst_margin_boundary=worst_boundary,
        )

    within_pairs = [(j, k) for j in range(d_u) for k in range(j + 1, d_u)]
    across_pairs = [(j, l) for j in range(d_u) for l in range(d_z)]

    def within_margin(pair, s):
        j, k = pair
        return -scm.gamma[j] * scm.gamma[k] * s - omega[j, k]

    def across_margin(pair, s):
        j, l = pair
        # condition is d2 <= 0 with d2 = -b_l g_j s + (Omega A)_jl; negate
        return scm.beta[l] * scm.gamma[j] * s - omega_a[j, l]

    if within_pairs:
        within = family(within_pairs, within_margin)
    else:  # single concept: no within pairs, vacuously true
        within = ConditionFamily(True, np.inf, tuple(pts[0]), 0.0, True, np.inf)
    across = family(across_pairs, across_margin)

    fd_max = None
    if fd_check:
        rng = make_rng(seed, "zdom_fd")
        rows = rng.choice(len(pts), size=min(fd_points, len(pts)), replace=False)
        h = fd_step
        fd_max = 0.0
        for r in rows:
            z0, u0 = pts[r, :d_z].copy(), pts[r, d_z:].copy()
            s = float(sprime[r])

            def lh(dz_l, dz_v, du_j, du_v, du_k=None, du_kv=0.0):
                z = z0.copy()
                u = u0.copy()
                if dz_l is not None:
                    z[dz_l] += dz_v
                u[du_j] += du_v
                if du_k is not None:
                    u[du_k] += du_kv
                return _log_h(scm, x, z, u)

            if within_pairs:
                j, k = within_pairs[0]
                fd = (
                    lh(None, 0, j, h, k, h)
                    - lh(None, 0, j, h, k, -h)
                    - lh(None, 0, j, -h, k, h)
                    + lh(None, 0, j, -h, k, -h)
                ) / (4 * h * h)
                closed = -scm.gamma[j] * scm.gamma[k] * s - omega[j, k]
                fd_max = max(fd_max, abs(fd - closed))
            j, l = across_pairs[0]
            fd = (
                lh(l, h, j, h) - lh(l, h, j, -h) - lh(l, -h, j, h) + lh(l, -h, j, -h)
            ) / (4 * h * h)
            closed = -scm.beta[l] * scm.gamma[j] * s + omega_a[j, l]
            fd_max = max(fd_max, abs(fd - closed))

    return ZdomConditionReport(
        x=x,
        within_u=within,
        across_zu=across,
        box_lo=lo,
        box_hi=hi,
        grid_per_axis=grid_per_axis,
        tol=tol,
        fd_max_discrepancy=fd_max,
    )


# --------------------------------------------------------------------------
# admissible correlation boundary for the 1-d logistic-Gaussian generator
# --------------------------------------------------------------------------


def logistic_gaussian_boundary(
    beta_gamma: float,
    region: str = "boundary",
    s_level: float | None = None,
    tol: float = 1e-10,
) -> float:
    """Largest correlation satisfying rho/(1-rho^2) <= beta*gamma * s(1-s).

    At the decision boundary s = 1/2 the logistic factor is exactly 1/4; for
    region="tail_level" the caller supplies the propensity level s. The left
    side increases from 0 to infinity on [0, 1), so bisection finds the
    unique root of rho/(1-rho^2) = target.
    """
    if beta_gamma <= 0:
        raise ValueError("beta_gamma must be positive")
    if region == "boundary":
        factor = 0.25
    elif region == "tail_level":
        if s_level is None or not (0.0 <= s_level <= 1.0):
            raise ValueError("tail_level region requires s_level in [0, 1]")
        factor = s_level * (1.0 - s_level)
    else:
        raise ValueError("region must be 'boundary' or 'tail_level'")
    target = beta_gamma * factor
    if target <= 0.0:
        return 0.0
    lo, hi = 0.0, 1.0 - 1e-15
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid / (1.0 - mid * mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# propensity-score version, by Monte Carlo window marginalization
# --------------------------------------------------------------------------


class PiDomPoint(NamedTuple):
    p: float
    coords: tuple[int, ...]  # (j,) for across, (j, k) for within
    family: str  # "across_pu" | "within_u"
    estimate: float
    se: float
    ok: bool


@dataclass(frozen=True)
class PiDomReport:
    points: tuple[PiDomPoint, ...]
    holds_across: bool
    holds_within: bool
    n_pool: int
    p_window: float

    @property
    def verdict(self) -> str:
        return "holds" if (self.holds_across and self.holds_within) else "violated"

    def to_dict(self) -> dict:
        return {
            "points": [p._asdict() for p in self.points],
            "holds_across": self.holds_across,
            "holds_within": self.holds_within,
            "n_pool": self.n_pool,
            "p_window": self.p_window,
            "verdict": self.verdict,
        }


def _window_log_h(
    scm: GaussianSCM,
    x: int,
    z_pool: np.ndarray,
    mask: np.ndarray,
    u: np.ndarray,
    cond,
    omega: np.ndarray,
) -> np.ndarray:
    """Per-unit integrand h(z, u) over a propensity window (unnormalized)."""
    z = z_pool[mask]
    eta = scm.alpha + z @ scm.beta + float(scm.gamma @ u)
    px = expit(eta) if x == 1 else expit(-eta)
    resid = u[None, :] - cond.mean(z)
    quad = np.einsum("ij,jk,ik->i", resid, omega, resid)
    return px * np.exp(-0.5 * quad)


def pi_dom_condition_check(
    scm: GaussianSCM,
    x: int,
    p_levels: tuple[float, ...] = (0.35, 0.5, 0.65),
    n_pool: int = 200_000,
    p_window: float = 0.005,
    p_step: float = 0.01,
    u_step: float = 0.25,
    n_shards: int = 10,
    se_factor: float = 3.0,
    seed: int = 0,
) -> PiDomReport:
    """Monte Carlo check of the scalar-propensity analogue conditions.

    The joint density of (propensity score, concepts) has no closed form, so
    h(p, u) is estimated by averaging the (z, u) integrand over pool draws
    whose covariate-only propensity falls in a +-p_window band around p.
    Cross-partials are centered finite differences of log h; standard errors
    come from splitting each window into interleaved shards. A point passes
    when its estimate is on the required side within se_factor standard
    errors; tails where a window has too few draws raise LevelSetEmpty.
    """
    joint = scm.joint
    d_u = joint.d_u
    cond = condition_on_z(joint)
    omega = np.linalg.inv(cond.cov)
    rng = make_rng(seed, "pi_dom_pool")
    lz = cholesky(joint.sigma_z)
    z_pool = joint.mean_z + rng.standard_normal((n_pool, joint.d_z)) @ lz.T
    pz = true_propensity_batch(scm, z_pool)
    p_values = np.quantile(pz, p_levels)

    u0 = cond.offset + cond.slope @ joint.mean_z  # central concept point

    def log_h_shards(p: float, u: np.ndarray) -> np.ndarray:
        mask = np.abs(pz - p) < p_window
        count = int(mask.sum())
        if count < 2 * n_shards:
            raise LevelSetEmpty(
                f"only {count} pool draws within {p_window} of p={p:.3f}"
            )
        vals = _window_log_h(scm, x, z_pool, mask, u, cond, omega)
        shard_ids = np.arange(count) % n_shards
        means = np.array([vals[shard_ids == s].mean() for s in range(n_shards)])
        if np.any(means <= 0):
            raise LevelSetEmpty(f"window at p={p:.3f} has vanishing density mass")
        return np.log(means)

    points: list[PiDomPoint] = []
    for p in p_values:
        p = float(p)
        # across (p, u_j): d2 log h / dp du_j <= 0 required
        for j in range(d_u):
            ej = np.zeros(d_u)
            ej[j] = u_step
            ll = log_h_shards(p - p_step, u0 - ej)
            lr = log_h_shards(p - p_step, u0 + ej)
            hl = log_h_shards(p + p_step, u0 - ej)
            hr = log_h_shards(p + p_step, u0 + ej)
            fd = (hr - hl - lr + ll) / (4 * p_step * u_step)
            est = float(fd.mean())
            se = float(fd.std(ddof=1) / np.sqrt(n_shards))
            points.append(
                PiDomPoint(
                    p=p, coords=(j,), family="across_pu",
                    estimate=est, se=se, ok=bool(est <= se_factor * se),
                )
            )
        # within (u_j, u_k) at fixed p: supermodularity >= 0 required
        for j in range(d_u):
            for k in range(j + 1, d_u):
                ej = np.zeros(d_u)
                ej[j] = u_step
                ek = np.zeros(d_u)
                ek[k] = u_step
                pp = log_h_shards(p, u0 + ej + ek)
                pm = log_h_shards(p, u0 + ej - ek)
                mp = log_h_shards(p, u0 - ej + ek)
                mm = log_h_shards(p, u0 - ej - ek)
                fd = (pp - pm - mp + mm) / (4 * u_step * u_step)
                est = float(fd.mean())
                se = float(fd.std(ddof=1) / np.sqrt(n_shards))
                points.append(
                    PiDomPoint(
                        p=p, coords=(j, k), family="within_u",
                        estimate=est, se=se, ok=bool(est >= -se_factor * se),
                    )
                )
    holds_across = all(pt.ok for pt in points if pt.family == "across_pu")
    holds_within = all(pt.ok for pt in points if pt.family == "within_u")
    return PiDomReport(
        points=tuple(points),
        holds_across=holds_across,
        holds_within=holds_within,
        n_pool=n_pool,
        p_window=p_window,
    )
