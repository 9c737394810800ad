import numpy as np
import pytest

from celora.aggregation import (
    SimilarityMatrix,
    build_plan,
    fedavg_aggregate,
    ffa_aggregate,
    personalized_aggregate,
)
from celora.errors import DataError


def _sim(s_total):
    s_total = np.asarray(s_total, dtype=float)
    return SimilarityMatrix(s_data=s_total, s_model=np.zeros_like(s_total))


def test_plan_two_clients_swap():
    plan = build_plan(_sim([[1.0, 0.4], [0.4, 1.0]]))
    assert np.array_equal(plan.weights, [[0.0, 1.0], [1.0, 0.0]])


def test_plan_uniform_for_equal_affinities():
    m = 5
    S = np.full((m, m), 0.7)
    plan = build_plan(_sim(S))
    off = plan.weights[~np.eye(m, dtype=bool)]
    assert np.allclose(off, 1.0 / (m - 1))
    assert np.all(np.diag(plan.weights) == 0)


def test_plan_hand_normalization():
    S = np.array([[1.0, 3.0, 1.0], [3.0, 1.0, 2.0], [1.0, 2.0, 1.0]])
    plan = build_plan(_sim(S))
    assert np.allclose(plan.weights[0], [0.0, 0.75, 0.25])


def test_plan_rejects_zero_row():
    S = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
    with pytest.raises(DataError):
        build_plan(_sim(S))


def test_plan_row_stochastic_and_scale_invariant():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m = int(rng.integers(2, 7))
        S = rng.uniform(0.01, 1, (m, m))
        S = (S + S.T) / 2
        plan = build_plan(_sim(S))
        assert np.allclose(plan.weights.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(plan.weights >= 0)
        scaled = build_plan(_sim(3.7 * S))
        assert np.max(np.abs(scaled.weights - plan.weights)) <= 1e-12


def test_personalized_fixed_point_identical_cores():
    C = np.random.default_rng(1).standard_normal((3, 3))
    plan = build_plan(_sim(np.full((4, 4), 0.5)))
    bars = personalized_aggregate(plan, [[C.copy()] for _ in range(4)])
    for bar in bars:
        assert np.allclose(bar[0], C, atol=1e-12)


def test_personalized_two_client_swap():
    plan = build_plan(_sim([[1.0, 1.0], [1.0, 1.0]]))
    C1, C2 = np.eye(2), 2 * np.eye(2)
    bars = personalized_aggregate(plan, [[C1], [C2]])
    assert np.array_equal(bars[0][0], C2)
    assert np.array_equal(bars[1][0], C1)


def test_personalized_hand_arithmetic():
    S = np.array([[1.0, 3.0, 1.0], [3.0, 1.0, 2.0], [1.0, 2.0, 1.0]])
    plan = build_plan(_sim(S))
    cores = [[np.array([[2.0]])], [np.array([[4.0]])], [np.array([[8.0]])]]
    bars = personalized_aggregate(plan, cores)
    assert bars[0][0] == pytest.approx(0.75 * 4 + 0.25 * 8)


def test_personalized_convex_hull():
    rng = np.random.default_rng(2)
    for _ in range(100):
        m = int(rng.integers(2, 6))
        S = rng.uniform(0.1, 1, (m, m))
        S = (S + S.T) / 2
        plan = build_plan(_sim(S))
        cores = [[rng.standard_normal((2, 2))] for _ in range(m)]
        bars = personalized_aggregate(plan, cores)
        for i, bar in enumerate(bars):
            others = np.stack([cores[j][0] for j in range(m) if j != i])
            assert np.all(bar[0] >= others.min(axis=0) - 1e-12)
            assert np.all(bar[0] <= others.max(axis=0) + 1e-12)


def test_fedavg_degeneracy_matches_uniform_average():
    m = 4
    rng = np.random.default_rng(3)
    cores = [[rng.standard_normal((2, 2))] for _ in range(m)]
    plan = build_plan(_sim(np.full((m, m), 0.9)))
    bars = personalized_aggregate(plan, cores)
    for i in range(m):
        uniform = sum(cores[j][0] for j in range(m) if j != i) / (m - 1)
        assert np.max(np.abs(bars[i][0] - uniform)) <= 1e-12


def test_fedavg_equal_counts_midpoint():
    A1, A2 = np.ones((2, 2)), 3 * np.ones((2, 2))
    B1, B2 = np.zeros((2, 3)), np.ones((2, 3))
    bar_A, bar_B = fedavg_aggregate([[A1], [A2]], [[B1], [B2]], [10, 10])
    assert np.allclose(bar_A[0], 2 * np.ones((2, 2)))
    assert np.allclose(bar_B[0], 0.5 * np.ones((2, 3)))


def test_fedavg_single_holder():
    A1, A2 = np.ones((2, 2)), 5 * np.ones((2, 2))
    bar_A, _ = fedavg_aggregate([[A1], [A2]], [[A1], [A2]], [0, 7])
    assert np.array_equal(bar_A[0], A2)


def test_fedavg_hand_arithmetic():
    bar_A, _ = fedavg_aggregate(
        [[np.array([[0.0]])], [np.array([[4.0]])]],
        [[np.array([[0.0]])], [np.array([[0.0]])]],
        [1, 3],
    )
    assert bar_A[0] == pytest.approx(3.0)


def test_fedavg_zero_total_count():
    with pytest.raises(DataError):
        fedavg_aggregate([[np.eye(2)]], [[np.eye(2)]], [0])


def test_ffa_single_client():
    B = np.random.default_rng(0).standard_normal((2, 3))
    assert np.array_equal(ffa_aggregate([[B]], [5])[0], B)


def test_ffa_cancellation():
    B = np.ones((2, 2))
    assert not ffa_aggregate([[B], [-B]], [3, 3])[0].any()


def test_ffa_hand_arithmetic():
    out = ffa_aggregate([[np.array([[1.0]])], [np.array([[3.0]])]], [2, 2])
    assert out[0] == pytest.approx(2.0)


def test_similarity_matrix_requires_symmetry():
    bad = np.array([[1.0, 0.2], [0.9, 1.0]])
    with pytest.raises(DataError):
        SimilarityMatrix(s_data=bad, s_model=np.zeros((2, 2)))


def test_model_coeff_weighting():
    s_data = np.full((2, 2), 0.5)
    s_model = np.full((2, 2), 0.25)
    S = SimilarityMatrix(s_data=s_data, s_model=s_model, model_coeff=2.0)
    assert np.allclose(S.s_total, 1.0)


def test_include_self_ablation():
    S = _sim(np.array([[2.0, 1.0], [1.0, 2.0]]))
    plan = build_plan(S, include_self=True)
    assert np.allclose(plan.weights[0], [2 / 3, 1 / 3])
