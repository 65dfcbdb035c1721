from __future__ import annotations

import numpy as np
import pytest

from core.estimation import (
    EigTransform,
    Mode,
    WMethod,
    covariance_pair,
    estimate_transforms,
    lagged_block,
    w_estimate,
)
from core.matcore import MatrixSeries, center
from utils.errors import InvalidWindowError, ValidationError


def _series(T: int, p: int, q: int, seed: int = 0) -> MatrixSeries:
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((T, p, q))
    # some serial dependence so W is not pure noise
    values[1:] += 0.5 * values[:-1]
    return center(MatrixSeries(values))[0]


def test_w_is_symmetric_and_positive_semidefinite() -> None:
    X = _series(120, 3, 4)
    for mode in Mode:
        est = w_estimate(X, mode, tau0=3)
        np.testing.assert_allclose(est.w, est.w.T, atol=0)
        assert est.eig.eigenvalues[-1] > -1e-10
        assert np.all(np.diff(est.eig.eigenvalues) <= 0)


@pytest.mark.parametrize("trial", range(6))
def test_naive_and_optimized_accumulation_agree(trial: int) -> None:
    rng = np.random.default_rng(100 + trial)
    p, q = (int(v) for v in rng.integers(1, 9, size=2))
    T = int(rng.integers(40, 201))
    tau0 = int(rng.integers(0, 6))
    X = _series(T, p, q, seed=trial)
    for mode in Mode:
        naive = w_estimate(X, mode, tau0, method=WMethod.NAIVE)
        fast = w_estimate(X, mode, tau0, method=WMethod.OPTIMIZED)
        np.testing.assert_allclose(fast.w, naive.w, atol=1e-8)


@pytest.mark.parametrize("spelling", ["log1p", "power:0.5"])
def test_naive_and_optimized_agree_with_eigenvalue_transform(spelling: str) -> None:
    X = _series(80, 3, 3, seed=5)
    f = EigTransform.parse(spelling)
    naive = w_estimate(X, Mode.COLUMNS, 2, f, WMethod.NAIVE)
    fast = w_estimate(X, Mode.COLUMNS, 2, f, WMethod.OPTIMIZED)
    np.testing.assert_allclose(fast.w, naive.w, atol=1e-8)
    assert fast.transform_label == f.label


def test_w_invariant_to_permuting_the_summed_index() -> None:
    X = _series(150, 5, 3, seed=2)
    perm = np.array([3, 0, 4, 2, 1])
    permuted = MatrixSeries(X.values[:, perm, :])
    base = w_estimate(X, Mode.COLUMNS, 4)
    moved = w_estimate(permuted, Mode.COLUMNS, 4)
    np.testing.assert_allclose(moved.w, base.w, atol=1e-10)

    cols = np.array([2, 0, 1])
    col_permuted = MatrixSeries(X.values[:, :, cols])
    row_base = w_estimate(X, Mode.ROWS, 4)
    row_moved = w_estimate(col_permuted, Mode.ROWS, 4)
    np.testing.assert_allclose(row_moved.w, row_base.w, atol=1e-10)


def test_rows_mode_equals_columns_mode_of_transpose() -> None:
    X = _series(60, 3, 5, seed=9)
    rows = w_estimate(X, Mode.ROWS, 2)
    cols_of_t = w_estimate(X.transposed(), Mode.COLUMNS, 2)
    np.testing.assert_allclose(rows.w, cols_of_t.w, atol=1e-10)
    assert rows.dim == 3


def test_tau0_window_checks() -> None:
    X = _series(10, 2, 2)
    assert w_estimate(X, Mode.COLUMNS, 0).w.shape == (2, 2)
    with pytest.raises(InvalidWindowError):
        w_estimate(X, Mode.COLUMNS, 10)
    with pytest.raises(InvalidWindowError):
        w_estimate(X, Mode.COLUMNS, -1)


def test_lagged_block_negative_lag_is_transpose() -> None:
    X = _series(50, 3, 4, seed=4)
    forward = lagged_block(X, Mode.COLUMNS, 2, 0, 1)
    backward = lagged_block(X, Mode.COLUMNS, -2, 1, 0)
    np.testing.assert_allclose(backward, forward.T)
    manual = sum(np.outer(X.values[t + 2, 0], X.values[t, 1]) for t in range(48)) / 48
    np.testing.assert_allclose(forward, manual, atol=1e-12)
    with pytest.raises(ValidationError):
        lagged_block(X, Mode.COLUMNS, 0, 3, 0)
    with pytest.raises(InvalidWindowError):
        lagged_block(X, Mode.COLUMNS, 50, 0, 0)


def test_covariance_pair_matches_definition() -> None:
    X = _series(30, 2, 3, seed=7)
    sigma1, sigma2 = covariance_pair(X)
    expected1 = sum(x.T @ x for x in X.values) / (30 * 2)
    expected2 = sum(x @ x.T for x in X.values) / (30 * 3)
    np.testing.assert_allclose(sigma1, expected1, atol=1e-12)
    np.testing.assert_allclose(sigma2, expected2, atol=1e-12)


def test_estimate_transforms_returns_both_modes() -> None:
    X = _series(100, 3, 4, seed=8)
    col, row = estimate_transforms(X, tau0=2)
    assert (col.mode, col.dim) == (Mode.COLUMNS, 4)
    assert (row.mode, row.dim) == (Mode.ROWS, 3)


def test_eigengap_for_groups() -> None:
    X = _series(100, 2, 4, seed=11)
    est = w_estimate(X, Mode.COLUMNS, 2)
    values = est.eig.eigenvalues
    assert est.eigengap_for((0, 1, 2, 3)) == float("inf")
    assert np.isclose(est.eigengap_for((0,)), values[0] - values[1])
    expected = min(abs(a - b) for a in values[[1, 2]] for b in values[[0, 3]])
    assert np.isclose(est.eigengap_for((1, 2)), expected)
    with pytest.raises(ValidationError):
        est.eigengap_for((4,))


def test_eig_transform_parsing() -> None:
    assert EigTransform.parse("identity").is_identity
    assert EigTransform.parse(" LOG1P ").kind == "log1p"
    assert EigTransform.parse("power:0.5").label == "power:0.5"
    assert EigTransform.parse("power:1").is_identity
    for bad in ("power", "power:-1", "cube", "log1p:2", "power:x"):
        with pytest.raises(ValidationError):
            EigTransform.parse(bad)
