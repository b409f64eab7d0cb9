"""Propensity estimation and exact marginal propensities.

Estimation is a from-scratch ridge-regularized logistic regression fit by
Newton/IRLS with step-halving, operating on z-scored features. Cross-fitted
scores (cv_predict) are the estimator the pairing strategies consume: each
unit's score comes from a model that never saw that unit. For Gaussian models
the true covariate-only propensity (concepts integrated out) is computed by
Gauss-Hermite quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit

from .data import Dataset
from .errors import DegenerateLabels, DimensionMismatch, FoldDegenerate
from .gaussian import condition_on_z
from .rng import make_rng
from .scm import GaussianSCM

__all__ = [
    "LogisticModel",
    "fit_logistic",
    "cv_predict",
    "true_propensity_z",
    "true_propensity_batch",
]

MAX_EXP = 30.0  # clamp for linear predictors before exp


@dataclass(eq=False)
class LogisticModel:
    """Fitted logistic model on the original (unstandardized) feature scale."""

    intercept: float
    coef: np.ndarray
    feature_mean: np.ndarray
    feature_sd: np.ndarray
    converged: bool
    singular: bool
    n_iter: int
    loss_path: list[float] = field(default_factory=list)
    ridge: float = 1e-6

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        return self.intercept + features @ self.coef

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return expit(np.clip(self.decision_function(features), -MAX_EXP, MAX_EXP))


def _nll(eta: np.ndarray, labels: np.ndarray, w: np.ndarray, ridge: float) -> float:
    # log(1 + exp(eta)) - y * eta, computed stably, plus the ridge term.
    loss = float(np.sum(np.logaddexp(0.0, eta) - labels * eta))
    return loss + 0.5 * ridge * float(w @ w)


def fit_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    *,
    ridge: float = 1e-6,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> LogisticModel:
    """Newton/IRLS logistic fit with ridge penalty and step-halving.

    Features are z-scored internally (constant columns get sd 1 so they stay
    inert); reported intercept/coef are mapped back to the original scale.
    Separation does not crash the solver: the ridge keeps the Hessian positive
    definite, and if factorization still fails the model is returned with
    singular=True rather than raising.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch("features and labels must align")
    classes = np.unique(y)
    if not np.all(np.isin(classes, [0.0, 1.0])) or classes.size < 2:
        raise DegenerateLabels("labels must contain both classes 0 and 1")
    if ridge < 1e-6:
        ridge = 1e-6
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    xs = (x - mu) / sd
    n, d = xs.shape
    design = np.concatenate([np.ones((n, 1)), xs], axis=1)
    penalty_mask = np.concatenate([[0.0], np.ones(d)])  # intercept unpenalized

    theta = np.zeros(d + 1)
    eta = design @ theta
    loss = _nll(eta, y, theta[1:], ridge)
    loss_path = [loss]
    converged = False
    singular = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(np.clip(eta, -MAX_EXP, MAX_EXP))
        w = np.maximum(p * (1.0 - p), 1e-12)
        grad = design.T @ (p - y) + ridge * penalty_mask * theta
        hess = (design * w[:, None]).T @ design + ridge * np.diag(penalty_mask)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            singular = True
            break
        scale = 1.0
        for _ in range(40):
            cand = theta - scale * step
            cand_eta = design @ cand
            cand_loss = _nll(cand_eta, y, cand[1:], ridge)
            if cand_loss <= loss + 1e-12:
                break
            scale *= 0.5
        delta = np.abs(theta - cand)
        theta, eta, loss = cand, cand_eta, cand_loss
        loss_path.append(loss)
        rel = float(np.max(delta / (np.abs(theta) + 1e-10)))
        if rel < tol:
            converged = True
            break

    coef = theta[1:] / sd
    intercept = float(theta[0] - (mu / sd) @ theta[1:])
    return LogisticModel(
        intercept=intercept,
        coef=coef,
        feature_mean=mu,
        feature_sd=sd,
        converged=converged,
        singular=singular,
        n_iter=it,
        loss_path=loss_path,
        ridge=ridge,
    )


def cv_predict(
    dataset: Dataset,
    k: int = 5,
    seed: int = 0,
    *,
    ridge: float = 1e-6,
) -> np.ndarray:
    """Out-of-fold propensity scores for every unit.

    Folds are built by a seeded shuffle dealt round-robin; each unit's score
    comes from the model trained on the other folds. If some training split
    lacks a class the shuffle is retried (up to 10 draws) before raising
    FoldDegenerate.
    """
    z, x = dataset.z, dataset.x.astype(float)
    n = dataset.n
    if not 2 <= k <= n:
        raise ValueError(f"k must be in [2, {n}]")
    for attempt in range(10):
        rng = make_rng(seed, "cv_folds", attempt)
        order = rng.permutation(n)
        folds = [order[f::k] for f in range(k)]
        ok = True
        for fold in folds:
            train_mask = np.ones(n, dtype=bool)
            train_mask[fold] = False
            labels = x[train_mask]
            if labels.min() == labels.max():
                ok = False
                break
        if ok:
            out = np.empty(n, dtype=float)
            for fold in folds:
                train_mask = np.ones(n, dtype=bool)
                train_mask[fold] = False
                model = fit_logistic(z[train_mask], x[train_mask], ridge=ridge)
                out[fold] = model.predict_proba(z[fold])
            return out
    raise FoldDegenerate(f"could not build {k} folds with both classes in every train split")


def _gh_nodes(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    pts, wts = hermgauss(nodes)
    return pts, wts / np.sqrt(np.pi)


def true_propensity_z(scm: GaussianSCM, z: np.ndarray, quadrature_nodes: int = 21) -> float:
    """P(X = 1 | Z = z) with concepts integrated out, by tensor quadrature.

    Uses a Gauss-Hermite product grid over the conditional concept law
    (feasible for a handful of concept dimensions). Doubling the node count
    moves the result by well under 1e-6 at the default.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (scm.d_z,):
        raise DimensionMismatch(f"z must have shape ({scm.d_z},)")
    if scm.d_u == 0 or not np.any(scm.gamma):
        return float(expit(scm.alpha + z @ scm.beta))
    if scm.d_u > 4:
        raise DimensionMismatch("product quadrature supports at most 4 concept dims; use true_propensity_batch")
    cond = condition_on_z(scm.joint)
    mean = cond.mean(z)
    lower = np.linalg.cholesky(cond.cov)
    pts, wts = _gh_nodes(quadrature_nodes)
    point_grids = np.meshgrid(*([pts] * scm.d_u), indexing="ij")
    weight_grids = np.meshgrid(*([wts] * scm.d_u), indexing="ij")
    nodes_nd = np.stack([g.ravel() for g in point_grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in weight_grids], axis=1), axis=1)
    u = mean + (np.sqrt(2.0) * nodes_nd) @ lower.T
    vals = expit(scm.alpha + float(z @ scm.beta) + u @ scm.gamma)
    return float(weights @ vals)


def true_propensity_batch(
    scm: GaussianSCM, z_rows: np.ndarray, quadrature_nodes: int = 64
) -> np.ndarray:
    """Vectorized marginal propensity over many covariate rows.

    The treatment rule reads concepts only through the scalar gamma'U, whose
    conditional law given z is normal, so the multi-dimensional integral
    reduces exactly to one dimension regardless of concept count.
    """
    z_rows = np.atleast_2d(np.asarray(z_rows, dtype=float))
    if z_rows.shape[1] != scm.d_z:
        raise DimensionMismatch(f"rows must have {scm.d_z} columns")
    base = scm.alpha + z_rows @ scm.beta
    if scm.d_u == 0 or not np.any(scm.gamma):
        return expit(base)
    cond = condition_on_z(scm.joint)
    proj_mean = z_rows @ (cond.slope.T @ scm.gamma) + cond.offset @ scm.gamma
    proj_sd = float(np.sqrt(max(scm.gamma @ cond.cov @ scm.gamma, 0.0)))
    if proj_sd == 0.0:
        return expit(base + proj_mean)
    pts, wts = _gh_nodes(quadrature_nodes)
    eta = base[:, None] + proj_mean[:, None] + np.sqrt(2.0) * proj_sd * pts[None, :]
    return expit(eta) @ wts
