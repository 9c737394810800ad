"""Per-round model similarity between communicated cores via linear-kernel
CKA on a shared random probe set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateKernelError, ShapeMismatchError

DEGENERATE_HSIC = 1e-12


@dataclass
class ProbeSet:
    """Shared seeded standard-Gaussian probes; every pairwise comparison in
    a run must use the same probe set to be comparable."""

    X: np.ndarray  # n_probe x r

    @classmethod
    def create(cls, n_probe: int, r: int, seed) -> "ProbeSet":
        if n_probe < 2:
            raise ShapeMismatchError("need at least 2 probe samples")
        X = np.random.default_rng(seed).standard_normal((n_probe, r))
        X.setflags(write=False)
        return cls(X=X)


def probe_kernel(C: np.ndarray, probe: ProbeSet) -> np.ndarray:
    """Linear kernel of the probe outputs: K = (X C)(X C)^T."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or probe.X.shape[1] != C.shape[0]:
        raise ShapeMismatchError(f"C must be {probe.X.shape[1]} x {probe.X.shape[1]}")
    Y = probe.X @ C
    return Y @ Y.T


def hsic(Ka: np.ndarray, Kb: np.ndarray) -> float:
    """tr(Ka H Kb H) with the centering matrix H = I - (1/n) 11^T."""
    n = Ka.shape[0]
    if Ka.shape != (n, n) or Kb.shape != (n, n):
        raise ShapeMismatchError("kernel matrices must be square and equal-sized")
    H = np.eye(n) - np.full((n, n), 1.0 / n)
    return float(np.trace(Ka @ H @ Kb @ H))


def cka(Ci: np.ndarray, Cj: np.ndarray, probe: ProbeSet) -> float:
    """HSIC(Ki, Kj) / sqrt(HSIC(Ki, Ki) HSIC(Kj, Kj)), clamped to [0, 1].

    Raises DegenerateKernelError when either self-HSIC vanishes (e.g. a
    core that maps every probe to the same point); callers substitute 0.
    """
    Ki = probe_kernel(Ci, probe)
    Kj = probe_kernel(Cj, probe)
    sii = hsic(Ki, Ki)
    sjj = hsic(Kj, Kj)
    if sii < DEGENERATE_HSIC or sjj < DEGENERATE_HSIC:
        raise DegenerateKernelError("self-HSIC below threshold")
    value = hsic(Ki, Kj) / np.sqrt(sii * sjj)
    return float(min(1.0, max(0.0, value)))


def model_similarity_matrix(core_stacks: list[list[np.ndarray]], probe: ProbeSet) -> np.ndarray:
    """Symmetric m x m S^model matrix.

    ``core_stacks[i]`` is client i's per-layer list of r x r cores; the
    per-layer CKA values are averaged uniformly.  Degenerate pairs score 0.
    Each unordered pair is computed once and mirrored, so the matrix is
    symmetric exactly.
    """
    m = len(core_stacks)
    S = np.ones((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            vals = []
            for Ci, Cj in zip(core_stacks[i], core_stacks[j]):
                try:
                    vals.append(cka(Ci, Cj, probe))
                except DegenerateKernelError:
                    vals.append(0.0)
            S[i, j] = S[j, i] = float(np.mean(vals))
    return S
