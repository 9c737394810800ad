"""One-shot data-distribution similarity between clients.

Each client summarizes its feature distribution as one diagonal GMM per
category plus the empirical category masses, and only that summary is
exchanged.  Pairwise similarity is the exponentiated negative transport
cost between the two category-level mixtures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeMismatchError
from .gmm import Gmm, fit_gmm
from .ot import EXACT_LP_MAX_ENTRIES, sinkhorn, solve_exact_lp, gmm_w2


@dataclass
class GmmSet:
    """Per-category mixtures and the client's empirical class proportions."""

    mixtures: dict[int, Gmm]
    category_masses: dict[int, float]

    def __post_init__(self):
        if not self.mixtures:
            raise DataError("GmmSet needs at least one category")
        if set(self.mixtures) != set(self.category_masses):
            raise DataError("mixtures and masses must cover the same categories")
        total = sum(self.category_masses.values())
        if abs(total - 1.0) > 1e-9 or any(m < 0 for m in self.category_masses.values()):
            raise DataError("category masses must form a simplex")

    @property
    def dim(self) -> int:
        return next(iter(self.mixtures.values())).dim

    def to_json(self) -> str:
        obj = {
            "categories": {str(k): g.to_dict() for k, g in sorted(self.mixtures.items())},
            "masses": {str(k): m for k, m in sorted(self.category_masses.items())},
        }
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GmmSet":
        obj = json.loads(text)
        mixtures = {int(k): Gmm.from_dict(v) for k, v in obj["categories"].items()}
        masses = {int(k): float(v) for k, v in obj["masses"].items()}
        return cls(mixtures=mixtures, category_masses=masses)


def fit_gmm_set(features, labels, components, seed) -> GmmSet:
    """Fit one mixture per category present in ``labels``.

    The component count is clipped per category so that tiny categories
    (fewer samples than components) still get a valid mixture.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = features.shape[0]
    if n == 0:
        raise DataError("no samples to summarize")
    cats = sorted(int(c) for c in np.unique(labels))
    mixtures = {}
    masses = {}
    for offset, cat in enumerate(cats):
        Xc = features[labels == cat]
        G = min(components, Xc.shape[0])
        mixtures[cat] = fit_gmm(Xc, G, seed=np.random.SeedSequence([seed, offset]))
        masses[cat] = Xc.shape[0] / n
    return GmmSet(mixtures=mixtures, category_masses=masses)


def transport_cost(gi: GmmSet, gj: GmmSet, sinkhorn_eps_scale=0.05) -> float:
    """Optimal category-matching cost D between two clients' summaries.

    Builds the category-level distance matrix with mixture W2 values,
    then solves the transport problem with the category masses as
    marginals (exact LP when small, Sinkhorn otherwise).
    """
    if gi.dim != gj.dim:
        raise ShapeMismatchError("GmmSets live in different feature dimensions")
    cats_i = sorted(gi.mixtures)
    cats_j = sorted(gj.mixtures)
    GW = np.empty((len(cats_i), len(cats_j)))
    for a, ci in enumerate(cats_i):
        for b, cj in enumerate(cats_j):
            GW[a, b] = gmm_w2(gi.mixtures[ci], gj.mixtures[cj])
    mu = np.array([gi.category_masses[c] for c in cats_i])
    nu = np.array([gj.category_masses[c] for c in cats_j])
    if GW.size <= EXACT_LP_MAX_ENTRIES:
        plan = solve_exact_lp(GW, mu, nu)
    else:
        eps = sinkhorn_eps_scale * max(GW.mean(), 1e-12)
        plan = sinkhorn(GW, np.maximum(mu, 1e-12), np.maximum(nu, 1e-12), eps=eps)
    return float(plan.cost)


def data_similarity(gi: GmmSet, gj: GmmSet, kernel_bandwidth: float) -> float:
    """S^data in (0, 1]: exp(-D / sigma) for transport cost D."""
    if kernel_bandwidth <= 0:
        raise DataError("kernel bandwidth must be positive")
    return float(np.exp(-transport_cost(gi, gj) / kernel_bandwidth))


def data_similarity_matrix(gmm_sets: list[GmmSet], kernel_bandwidth=None):
    """Symmetric m x m S^data matrix.

    When no bandwidth is given it is set to the median off-diagonal
    transport cost, which makes the affinity scale data-adaptive.
    Costs for each unordered pair are computed once and mirrored.
    """
    m = len(gmm_sets)
    D = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            D[i, j] = D[j, i] = transport_cost(gmm_sets[i], gmm_sets[j])
    if kernel_bandwidth is None:
        off = D[~np.eye(m, dtype=bool)]
        med = float(np.median(off)) if off.size else 1.0
        kernel_bandwidth = med if med > 0 else 1.0
    S = np.exp(-D / kernel_bandwidth)
    return S, float(kernel_bandwidth)
