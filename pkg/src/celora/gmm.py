"""Diagonal-covariance Gaussian mixtures fitted by EM.

One mixture summarizes one client category's feature distribution; the
mixture parameters are the only data-derived artifact a client ever shares.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DataError

VAR_FLOOR = 1e-6


@dataclass
class DiagGaussian:
    mean: np.ndarray
    var: np.ndarray  # diagonal of the covariance, floored at VAR_FLOOR

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape or self.mean.ndim != 1:
            raise DataError("mean/var must be 1-D vectors of equal length")
        if np.any(self.var < VAR_FLOOR * (1 - 1e-12)):
            raise DataError("variance below floor")


@dataclass
class Gmm:
    weights: np.ndarray
    components: list[DiagGaussian]
    log_likelihoods: list[float] = field(default_factory=list, repr=False)
    status: str = "ok"  # "ok" | "degenerate" (variance floor hit)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.components) != self.weights.shape[0] or len(self.components) < 1:
            raise DataError("weights/components length mismatch")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise DataError("mixture weights must form a simplex")

    @property
    def dim(self) -> int:
        return self.components[0].mean.shape[0]

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": [c.mean.tolist() for c in self.components],
            "vars": [c.var.tolist() for c in self.components],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Gmm":
        comps = [DiagGaussian(np.array(m), np.array(v)) for m, v in zip(obj["means"], obj["vars"])]
        return cls(weights=np.array(obj["weights"]), components=comps)


def _log_gauss(X, means, variances):
    """Per-sample per-component diagonal Gaussian log density, n x G."""
    d = X.shape[1]
    diff = X[:, None, :] - means[None, :, :]  # n x G x d
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)
    logdet = np.sum(np.log(variances), axis=1)
    return -0.5 * (quad + logdet[None, :] + d * np.log(2 * np.pi))


def _kmeanspp_centers(X, G, rng):
    """Seeded k-means++ seeding: spread initial means by squared distance."""
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(1, G):
        d2 = np.min(
            [np.sum((X - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
            continue
        probs = d2 / total
        centers.append(X[rng.choice(n, p=probs)])
    return np.array(centers)


def fit_gmm(features, G, seed, max_iter=200, tol=1e-6) -> Gmm:
    """EM for a diagonal-covariance G-component mixture.

    Stops when the mean log-likelihood improves by less than ``tol`` or
    after ``max_iter`` iterations.  The per-iteration log-likelihood
    sequence is recorded on the returned mixture and is non-decreasing.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise DataError("features must be a finite n x d matrix")
    n, d = X.shape
    if n < G:
        raise DataError(f"need at least G={G} samples, got {n}")
    rng = np.random.default_rng(seed)

    means = _kmeanspp_centers(X, G, rng)
    global_var = np.maximum(X.var(axis=0), VAR_FLOOR)
    variances = np.tile(global_var, (G, 1))
    weights = np.full(G, 1.0 / G)

    floored = False
    ll_history: list[float] = []
    for _ in range(max_iter):
        # E-step
        log_prob = _log_gauss(X, means, variances) + np.log(weights)[None, :]
        log_norm = logsumexp(log_prob, axis=1)
        ll = float(np.mean(log_norm))
        resp = np.exp(log_prob - log_norm[:, None])
        ll_history.append(ll)
        if len(ll_history) > 1 and ll - ll_history[-2] < tol:
            break
        # M-step
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ X) / nk[:, None]
        diff2 = (X[:, None, :] - means[None, :, :]) ** 2
        variances = np.einsum("ng,ngd->gd", resp, diff2) / nk[:, None]
        if np.any(variances < VAR_FLOOR):
            floored = True
            variances = np.maximum(variances, VAR_FLOOR)

    weights = weights / weights.sum()
    comps = [DiagGaussian(means[g].copy(), variances[g].copy()) for g in range(G)]
    return Gmm(
        weights=weights,
        components=comps,
        log_likelihoods=ll_history,
        status="degenerate" if floored else "ok",
    )
