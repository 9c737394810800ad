"""Server-side combination of similarities into aggregation weights, the
personalized core aggregate, and the FedAvg / frozen-A baselines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeMismatchError


@dataclass
class SimilarityMatrix:
    """Client affinity S = S^data + coeff * S^model with its addends."""

    s_data: np.ndarray
    s_model: np.ndarray
    model_coeff: float = 1.0
    s_total: np.ndarray = field(init=False)

    def __post_init__(self):
        self.s_data = np.asarray(self.s_data, dtype=np.float64)
        self.s_model = np.asarray(self.s_model, dtype=np.float64)
        m = self.s_data.shape[0]
        if self.s_data.shape != (m, m) or self.s_model.shape != (m, m):
            raise ShapeMismatchError("similarity matrices must be square and equal-sized")
        for name, M in (("s_data", self.s_data), ("s_model", self.s_model)):
            if np.max(np.abs(M - M.T)) > 1e-6:
                raise DataError(f"{name} is not symmetric")
        self.s_total = self.s_data + self.model_coeff * self.s_model

    @property
    def m(self) -> int:
        return self.s_data.shape[0]


@dataclass
class AggregationPlan:
    """Row-stochastic weights over the other clients; zero diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        m = self.weights.shape[0]
        if self.weights.shape != (m, m):
            raise ShapeMismatchError("weights must be square")


def build_plan(S: SimilarityMatrix, include_self=False) -> AggregationPlan:
    """Normalize each row of S_total over j != i into convex weights.

    ``include_self`` keeps the diagonal in the normalization (ablation
    only; the published rule excludes it).
    """
    m = S.m
    if m < 2 and not include_self:
        raise DataError("personalized aggregation needs at least 2 clients")
    W = np.array(S.s_total, dtype=np.float64)
    if not include_self:
        np.fill_diagonal(W, 0.0)
    if np.any(W < 0) or not np.all(np.isfinite(W)):
        raise DataError("affinities must be finite and non-negative")
    row_sums = W.sum(axis=1)
    if np.any(row_sums <= 0):
        bad = int(np.argmin(row_sums))
        raise DataError(f"client {bad} has no positive affinity to any other client")
    return AggregationPlan(weights=W / row_sums[:, None])


def personalized_aggregate(plan: AggregationPlan, core_stacks: list[list[np.ndarray]]):
    """Per-client convex combination of the other clients' cores.

    Returns m per-layer stacks; layer shapes must agree across clients.
    """
    m = plan.weights.shape[0]
    if len(core_stacks) != m:
        raise ShapeMismatchError("plan size and client count differ")
    n_layers = len(core_stacks[0])
    for stack in core_stacks:
        if len(stack) != n_layers:
            raise ShapeMismatchError("clients disagree on layer count")
    out = []
    for i in range(m):
        bar = []
        for l in range(n_layers):
            acc = np.zeros_like(core_stacks[0][l])
            for j in range(m):
                w = plan.weights[i, j]
                if w != 0.0:
                    if core_stacks[j][l].shape != acc.shape:
                        raise ShapeMismatchError("core shapes differ across clients")
                    acc += w * core_stacks[j][l]
            bar.append(acc)
        out.append(bar)
    return out


def _count_weighted_mean(stacks, sample_counts):
    counts = np.asarray(sample_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise DataError("total sample count must be positive")
    n_layers = len(stacks[0])
    out = []
    for l in range(n_layers):
        acc = np.zeros_like(stacks[0][l])
        for j, stack in enumerate(stacks):
            if stack[l].shape != acc.shape:
                raise ShapeMismatchError("factor shapes differ across clients")
            acc += counts[j] * stack[l]
        out.append(acc / total)
    return out


def fedavg_aggregate(As, Bs, sample_counts):
    """Sample-count-weighted average of A and B across clients."""
    return _count_weighted_mean(As, sample_counts), _count_weighted_mean(Bs, sample_counts)


def ffa_aggregate(Bs, sample_counts):
    """Sample-count-weighted average of B only (A frozen at clients)."""
    return _count_weighted_mean(Bs, sample_counts)
