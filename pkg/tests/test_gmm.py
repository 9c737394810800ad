import numpy as np
import pytest

from celora.gmm import VAR_FLOOR, DiagGaussian, Gmm, fit_gmm
from celora.errors import DataError


def test_single_component_closed_form():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 3)) * 2 + 1
    g = fit_gmm(X, G=1, seed=0)
    assert np.allclose(g.weights, [1.0])
    assert np.allclose(g.components[0].mean, X.mean(axis=0), atol=1e-12)
    assert np.allclose(g.components[0].var, np.maximum(X.var(axis=0), VAR_FLOOR), atol=1e-12)


def test_two_separated_clusters_recovered():
    rng = np.random.default_rng(1)
    for seed in range(10):
        r = np.random.default_rng(100 + seed)
        a = r.standard_normal((200, 2)) + np.array([5.0, 5.0])
        b = r.standard_normal((200, 2)) + np.array([-5.0, -5.0])
        X = np.vstack([a, b])
        g = fit_gmm(X, G=2, seed=seed)
        means = sorted((c.mean for c in g.components), key=lambda m: m[0])
        assert np.max(np.abs(means[0] - [-5, -5])) < 0.2
        assert np.max(np.abs(means[1] - [5, 5])) < 0.2
        assert np.max(np.abs(g.weights - 0.5)) < 0.05


@pytest.mark.parametrize("seed", range(20))
def test_loglik_monotone(seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([
        rng.standard_normal((60, 3)) + rng.uniform(-3, 3, 3),
        rng.standard_normal((60, 3)) + rng.uniform(-3, 3, 3),
    ])
    g = fit_gmm(X, G=3, seed=seed)
    ll = g.log_likelihoods
    assert len(ll) >= 2
    assert all(b >= a - 1e-9 for a, b in zip(ll, ll[1:]))


def test_too_few_samples():
    with pytest.raises(DataError):
        fit_gmm(np.zeros((2, 3)), G=3, seed=0)


def test_degenerate_identical_rows():
    X = np.ones((10, 2))
    g = fit_gmm(X, G=2, seed=0)
    assert g.status == "degenerate"
    for c in g.components:
        assert np.all(c.var >= VAR_FLOOR)


def test_gmm_serialization_roundtrip():
    rng = np.random.default_rng(3)
    g = fit_gmm(rng.standard_normal((40, 2)), G=2, seed=1)
    g2 = Gmm.from_dict(g.to_dict())
    assert np.allclose(g2.weights, g.weights)
    for a, b in zip(g.components, g2.components):
        assert np.allclose(a.mean, b.mean)
        assert np.allclose(a.var, b.var)


def test_diag_gaussian_validation():
    with pytest.raises(DataError):
        DiagGaussian(np.zeros(2), np.zeros(3))
    with pytest.raises(DataError):
        DiagGaussian(np.zeros(2), np.array([1.0, 1e-9]))
