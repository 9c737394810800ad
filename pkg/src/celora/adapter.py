"""Tri-factorized low-rank adapter for a frozen linear layer.

The adapted layer computes ``h = x W + x A C B`` where ``W`` (d x k) stays
frozen and the trainable delta is factored as ``A`` (d x r), ``C`` (r x r),
``B`` (r x k).  Only ``C`` is ever communicated in the federated protocol;
``A`` and ``B`` stay on the client.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidRankError, ShapeMismatchError


@dataclass
class TriLoRAAdapter:
    """One adapted linear layer: frozen W plus trainable factors A, C, B."""

    W: np.ndarray
    A: np.ndarray
    C: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        d, k = self.W.shape
        r = self.A.shape[1]
        if self.A.shape != (d, r) or self.C.shape != (r, r) or self.B.shape != (r, k):
            raise ShapeMismatchError(
                f"inconsistent factor shapes: W{self.W.shape} A{self.A.shape} "
                f"C{self.C.shape} B{self.B.shape}"
            )
        # r <= min(d, k): hand-built degenerate adapters (e.g. all-scalar)
        # are allowed; init_adapter enforces the strict low-rank regime.
        if not (1 <= r <= min(d, k)):
            raise InvalidRankError(f"rank {r} not in [1, min({d}, {k})]")
        # W is frozen; a read-only view guards against accidental mutation.
        self.W = np.asarray(self.W, dtype=np.float64)
        self.W.setflags(write=False)
        self.A = np.asarray(self.A, dtype=np.float64)
        self.C = np.asarray(self.C, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]

    @property
    def r(self) -> int:
        return self.C.shape[0]

    def copy(self) -> "TriLoRAAdapter":
        return TriLoRAAdapter(self.W, self.A.copy(), self.C.copy(), self.B.copy())


@dataclass
class AdapterGradients:
    dA: np.ndarray
    dC: np.ndarray
    dB: np.ndarray


@dataclass
class ModelShapeConfig:
    """Shape bookkeeping for communication accounting.

    ``d_per_matrix`` / ``k_per_matrix`` may be single ints (homogeneous
    layers) or per-matrix lists of length ``num_adapted_matrices``.
    """

    num_adapted_matrices: int
    d_per_matrix: int | list[int]
    k_per_matrix: int | list[int]
    r: int

    def dims(self) -> list[tuple[int, int]]:
        L = self.num_adapted_matrices
        ds = self.d_per_matrix if isinstance(self.d_per_matrix, list) else [self.d_per_matrix] * L
        ks = self.k_per_matrix if isinstance(self.k_per_matrix, list) else [self.k_per_matrix] * L
        if len(ds) != L or len(ks) != L:
            raise ShapeMismatchError("per-matrix dim lists must have length L")
        if L < 1 or self.r < 1 or any(x < 1 for x in ds + ks):
            raise InvalidRankError("all shape-config entries must be positive")
        return list(zip(ds, ks))


def init_adapter(d, k, r, seed, W=None) -> TriLoRAAdapter:
    """Build a freshly initialized adapter with zero delta.

    A is Gaussian with std 1/sqrt(r), C is the identity and B is zero, so
    A C B = 0 and the initial forward pass equals the frozen layer.  With
    C = I the adapter starts out exactly equivalent to a vanilla two-factor
    LoRA module.
    """
    if d < 1 or k < 1 or r < 1 or r >= min(d, k):
        raise InvalidRankError(f"need 1 <= r < min(d, k); got d={d}, k={k}, r={r}")
    rng = np.random.default_rng(seed)
    if W is None:
        W = rng.standard_normal((d, k)) / np.sqrt(d)
    else:
        W = np.asarray(W, dtype=np.float64)
        if W.shape != (d, k):
            raise ShapeMismatchError(f"W has shape {W.shape}, expected {(d, k)}")
    A = rng.standard_normal((d, r)) / np.sqrt(r)
    C = np.eye(r)
    B = np.zeros((r, k))
    return TriLoRAAdapter(W=W, A=A, C=C, B=B)


def forward(adapter: TriLoRAAdapter, X: np.ndarray) -> np.ndarray:
    """h = X W + ((X A) C) B, evaluated in factored order.

    The d x k delta matrix is never materialized; cost is O(n r (d + k)).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != adapter.d:
        raise ShapeMismatchError(f"X has shape {X.shape}, expected (n, {adapter.d})")
    return X @ adapter.W + ((X @ adapter.A) @ adapter.C) @ adapter.B


def backward(adapter: TriLoRAAdapter, X: np.ndarray, G: np.ndarray) -> AdapterGradients:
    """Analytic gradients of the factored forward w.r.t. A, C, B.

    dA = X^T G B^T C^T, dC = A^T X^T G B^T, dB = C^T A^T X^T G.
    W receives no gradient (frozen).
    """
    X = np.asarray(X, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != adapter.d:
        raise ShapeMismatchError(f"X has shape {X.shape}, expected (n, {adapter.d})")
    if G.shape != (X.shape[0], adapter.k):
        raise ShapeMismatchError(f"G has shape {G.shape}, expected {(X.shape[0], adapter.k)}")
    XtG = X.T @ G  # d x k, shared by all three factor gradients
    GBt = G @ adapter.B.T  # n x r
    dA = (X.T @ GBt) @ adapter.C.T
    dC = adapter.A.T @ (XtG @ adapter.B.T)
    dB = adapter.C.T @ (adapter.A.T @ XtG)
    return AdapterGradients(dA=dA, dC=dC, dB=dB)


def input_gradient(adapter: TriLoRAAdapter, G: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the layer input: G W^T + ((G B^T) C^T) A^T."""
    return G @ adapter.W.T + ((G @ adapter.B.T) @ adapter.C.T) @ adapter.A.T


def merge(adapter: TriLoRAAdapter) -> np.ndarray:
    """Collapse the adapter into a single inference-time weight W + A C B."""
    return adapter.W + (adapter.A @ adapter.C) @ adapter.B


def param_counts(cfg: ModelShapeConfig) -> dict[str, int]:
    """Parameters transmitted per round for each federation scheme.

    fedpetuning uploads A and B, ffa uploads B only, ce_lora uploads one
    r x r core per adapted matrix.  The ce_lora count is independent of
    the layer dimensions.
    """
    dims = cfg.dims()
    r = cfg.r
    return {
        "fedpetuning": sum(r * (d + k) for d, k in dims),
        "ffa": sum(r * k for _, k in dims),
        "ce_lora": cfg.num_adapted_matrices * r * r,
    }
