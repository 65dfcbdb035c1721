from __future__ import annotations

import json

import numpy as np
import pytest

from core.simgen import (
    ArmaSeries,
    SegmentationOutcome,
    align_to_truth,
    classify_segmentation,
    gen_arma12,
    gen_example1,
    gen_example2,
    gen_example3,
    generate,
    map_groups,
    metric_D,
    metric_D1,
)
from utils.errors import IncomparableSegmentationError, ValidationError


def test_arma_stationary_variance() -> None:
    series = ArmaSeries(values=np.zeros(1), b=0.5, a1=0.4, a2=0.3)
    assert series.variance() == pytest.approx(2.56)


def test_arma_draw_matches_stationary_variance() -> None:
    draw = gen_arma12(100_000, np.random.default_rng(0), b=0.5, a1=0.4, a2=0.3)
    assert draw.values.shape == (100_000,)
    assert draw.values.var() == pytest.approx(draw.variance(), abs=0.1)


def test_arma_random_coefficients_stay_in_range() -> None:
    rng = np.random.default_rng(1)
    for _ in range(20):
        draw = gen_arma12(10, rng)
        assert 0.5 <= abs(draw.b) <= 0.98
        assert 0.3 <= abs(draw.a1) <= 0.98
        assert 0.3 <= abs(draw.a2) <= 0.98


def test_arma_argument_checks() -> None:
    rng = np.random.default_rng(2)
    with pytest.raises(ValidationError):
        gen_arma12(0, rng)
    with pytest.raises(ValidationError):
        gen_arma12(10, rng, b=1.0)


def test_example1_shapes_and_truth() -> None:
    X, truth = gen_example1(50, 3, 4, seed=5)
    assert X.dims == (50, 3, 4)
    assert truth.A.shape == (4, 4) and truth.B.shape == (3, 3)
    assert truth.col_groups == ((0,), (1,), (2,), (3,))
    assert truth.row_groups == ((0,), (1,), (2,))
    assert len(truth.dynamics) == 12
    np.testing.assert_allclose(X.values, truth.B @ truth.U.values @ truth.A.T)
    json.dumps(truth.to_dict())


def test_generators_are_deterministic_by_seed() -> None:
    first, _ = generate("example1", 30, 2, 2, seed=9)
    again, _ = generate("example1", 30, 2, 2, seed=9)
    other, _ = generate("example1", 30, 2, 2, seed=10)
    np.testing.assert_array_equal(first.values, again.values)
    assert not np.array_equal(first.values, other.values)
    with pytest.raises(ValidationError):
        generate("example9", 30, 2, 2, seed=0)


def test_example2_lead_copies_share_a_block() -> None:
    X, truth = gen_example2(40, 2, 6, seed=3)
    U = truth.U.values
    assert truth.col_groups == ((0, 1, 2), (3, 4), (5,))
    np.testing.assert_array_equal(truth.B, np.eye(2))
    np.testing.assert_array_equal(U[1:, :, 0], U[:-1, :, 1])
    np.testing.assert_array_equal(U[1:, :, 1], U[:-1, :, 2])
    np.testing.assert_array_equal(U[1:, :, 3], U[:-1, :, 4])
    with pytest.raises(ValidationError):
        gen_example2(40, 2, 4, seed=3)


def test_example3_block_transition_and_conditional_mean() -> None:
    X, truth = gen_example3(60, 6, 7, seed=4)
    G = truth.transition
    assert G.shape == (42, 42)
    assert np.max(np.abs(np.linalg.eigvals(G))) < 1
    assert truth.row_groups == ((0, 1, 2), (3, 4), (5,))
    assert truth.col_groups == ((0, 1, 2), (3, 4), (5,), (6,))
    # no coupling between cells of different blocks
    assert G[0 * 7 + 0, 0 * 7 + 3] == 0.0
    means = truth.conditional_mean([10, 20], h=2)
    expected = truth.B @ (np.linalg.matrix_power(G, 2) @ truth.U.values[8].ravel()).reshape(6, 7) @ truth.A.T
    np.testing.assert_allclose(means[0], expected)
    assert truth.cond_mean(holdout=5, h=1).shape == (5, 6, 7)
    with pytest.raises(ValidationError):
        truth.conditional_mean([60])
    with pytest.raises(ValidationError):
        gen_example3(60, 5, 7, seed=4)


def test_conditional_mean_needs_a_transition() -> None:
    _, truth = gen_example1(20, 2, 2, seed=0)
    with pytest.raises(ValidationError):
        truth.conditional_mean([5])


def test_metric_d_extremes() -> None:
    rng = np.random.default_rng(6)
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    signed = Q[:, [2, 0, 3, 1]] * np.array([1, -1, -1, 1])
    assert metric_D(Q, Q) == pytest.approx(0.0, abs=1e-12)
    assert metric_D(signed, Q) == pytest.approx(0.0, abs=1e-12)
    H = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]]) / 2.0
    assert metric_D(H, np.eye(4)) == pytest.approx(1.0)
    assert metric_D(np.ones((1, 1)), np.ones((1, 1))) == 0.0
    with pytest.raises(ValidationError):
        metric_D(np.eye(3), np.eye(4))


def test_metric_d1_measures_block_spans() -> None:
    I = np.eye(4)
    assert metric_D1([I[:, [1, 0]], I[:, [2, 3]]], [I[:, [0, 1]], I[:, [2, 3]]]) == pytest.approx(0.0)
    assert metric_D1([I[:, [2, 3]]], [I[:, [0, 1]]]) == pytest.approx(1.0)
    with pytest.raises(IncomparableSegmentationError):
        metric_D1([I[:, [0]]], [I[:, [0]], I[:, [1]]])
    with pytest.raises(IncomparableSegmentationError):
        metric_D1([I[:, [0, 1]]], [I[:, [0]]])


@pytest.mark.parametrize(
    ("found", "expected"),
    [
        ([(0, 1, 2), (3, 4), (5,)], SegmentationOutcome.CORRECT),
        ([(0, 1, 2, 3, 4), (5,)], SegmentationOutcome.MERGING),
        ([(0, 1), (2,), (3, 4), (5,)], SegmentationOutcome.SPLITTING),
        ([(0, 1, 3), (2, 4), (5,)], SegmentationOutcome.OTHER),
        ([(0,), (1,), (2,), (3,), (4,), (5,)], SegmentationOutcome.OTHER),
    ],
)
def test_classify_segmentation(found, expected) -> None:
    truth = [(0, 1, 2), (3, 4), (5,)]
    assert classify_segmentation(found, truth) is expected


def test_classify_rejects_different_index_sets() -> None:
    with pytest.raises(ValidationError):
        classify_segmentation([(0, 1)], [(0, 1, 2)])


def test_align_to_truth_recovers_permutation() -> None:
    Q, _ = np.linalg.qr(np.random.default_rng(7).standard_normal((5, 5)))
    perm = np.array([3, 0, 4, 1, 2])
    vectors = Q[:, perm] * np.array([1, -1, 1, -1, 1])
    mapping = align_to_truth(vectors, Q, [(k,) for k in range(5)])
    np.testing.assert_array_equal(mapping, perm)
    with pytest.raises(ValidationError):
        align_to_truth(vectors, Q[:, :4], [(k,) for k in range(4)])


def test_map_groups_uses_true_indices() -> None:
    assert map_groups(((0, 1), (2,)), np.array([2, 0, 1])) == ((0, 2), (1,))
