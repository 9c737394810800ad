"""Optimal transport primitives: closed-form diagonal Gaussian W2,
mixture-level W2 via discrete transport, and log-domain Sinkhorn."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DataError, ShapeMismatchError
from .gmm import DiagGaussian, Gmm

# Instances up to this many cost entries are solved exactly by LP; larger
# ones fall back to entropic Sinkhorn.
EXACT_LP_MAX_ENTRIES = 64


@dataclass
class TransportPlan:
    plan: np.ndarray  # p x q, non-negative
    cost: float  # <plan, cost matrix>
    converged: bool = True
    marginal_error: float = 0.0


def gaussian_w2_sq(a: DiagGaussian, b: DiagGaussian) -> float:
    """Squared W2 between diagonal Gaussians (Bures form):
    ||mu_a - mu_b||^2 + sum_t (sqrt(var_a,t) - sqrt(var_b,t))^2."""
    if a.mean.shape != b.mean.shape:
        raise ShapeMismatchError("Gaussian dimensions differ")
    dm = a.mean - b.mean
    ds = np.sqrt(a.var) - np.sqrt(b.var)
    return float(dm @ dm + ds @ ds)


def solve_exact_lp(cost, mu, nu) -> TransportPlan:
    """Exact discrete OT via the transportation LP (HiGHS)."""
    cost = np.asarray(cost, dtype=np.float64)
    p, q = cost.shape
    # Equality constraints: row sums = mu, column sums = nu (one redundant).
    A_eq = np.zeros((p + q, p * q))
    for i in range(p):
        A_eq[i, i * q : (i + 1) * q] = 1.0
    for j in range(q):
        A_eq[p + j, j::q] = 1.0
    b_eq = np.concatenate([mu, nu])
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise DataError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(p, q)
    return TransportPlan(plan=plan, cost=float(np.sum(plan * cost)))


def sinkhorn(cost, mu, nu, eps, max_iter=10000, tol=1e-9) -> TransportPlan:
    """Entropic OT by log-domain Sinkhorn iterations.

    Alternates dual updates until both marginals are within ``tol`` in L1.
    On non-convergence the best-effort plan is returned with
    ``converged=False`` and the achieved marginal error.
    """
    cost = np.asarray(cost, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    p, q = cost.shape
    if mu.shape != (p,) or nu.shape != (q,):
        raise ShapeMismatchError("marginal lengths do not match the cost matrix")
    if np.any(cost < 0) or not np.all(np.isfinite(cost)):
        raise DataError("cost must be finite and non-negative")
    for name, v in (("mu", mu), ("nu", nu)):
        if np.any(v <= 0) or abs(v.sum() - 1.0) > 1e-9:
            raise DataError(f"{name} must be a strictly positive simplex vector")
    if eps <= 0:
        raise DataError("eps must be positive")

    log_mu = np.log(mu)
    log_nu = np.log(nu)
    mC = -cost / eps
    f = np.zeros(p)
    g = np.zeros(q)
    err = np.inf
    converged = False
    for _ in range(max_iter):
        # log-domain scalings: f fixes rows, g fixes columns
        f = eps * (log_mu - _lse_rows(mC + (f[:, None] + g[None, :]) / eps)) + f
        g = eps * (log_nu - _lse_cols(mC + (f[:, None] + g[None, :]) / eps)) + g
        plan = np.exp(mC + (f[:, None] + g[None, :]) / eps)
        err = np.abs(plan.sum(axis=1) - mu).sum() + np.abs(plan.sum(axis=0) - nu).sum()
        if err <= tol:
            converged = True
            break
    plan = np.exp(mC + (f[:, None] + g[None, :]) / eps)
    return TransportPlan(
        plan=plan,
        cost=float(np.sum(plan * cost)),
        converged=converged,
        marginal_error=float(err),
    )


def _lse_rows(M):
    mx = M.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(M - mx).sum(axis=1, keepdims=True))).ravel()


def _lse_cols(M):
    mx = M.max(axis=0, keepdims=True)
    return (mx + np.log(np.exp(M - mx).sum(axis=0, keepdims=True))).ravel()


def gmm_w2(ga: Gmm, gb: Gmm, eps_scale=0.05) -> float:
    """Mixture-level W2: sqrt of the optimal transport cost between the
    component weight vectors under pairwise squared Gaussian W2 costs.

    Exact LP for small component products, entropic Sinkhorn otherwise.
    """
    if ga.dim != gb.dim:
        raise ShapeMismatchError("mixtures live in different dimensions")
    Ga, Gb = len(ga.components), len(gb.components)
    cost = np.empty((Ga, Gb))
    for i, ca in enumerate(ga.components):
        for j, cb in enumerate(gb.components):
            cost[i, j] = gaussian_w2_sq(ca, cb)
    if Ga * Gb <= EXACT_LP_MAX_ENTRIES:
        plan = solve_exact_lp(cost, ga.weights, gb.weights)
    else:
        eps = eps_scale * max(cost.mean(), 1e-12)
        plan = sinkhorn(cost, ga.weights, gb.weights, eps=eps)
    return float(np.sqrt(max(plan.cost, 0.0)))
