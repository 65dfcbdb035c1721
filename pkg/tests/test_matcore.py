from __future__ import annotations

import numpy as np
import pytest

from core.matcore import (
    MatrixSeries,
    center,
    inv_sqrt,
    matrix_from_dict,
    matrix_to_dict,
    orthonormality_error,
    sqrt_sym,
    sym_eig,
)
from utils.errors import (
    MalformedInputError,
    NonFiniteError,
    NotPositiveSemidefiniteError,
    ValidationError,
)


def _spd(d: int, seed: int = 0) -> np.ndarray:
    M = np.random.default_rng(seed).standard_normal((d, d))
    return M @ M.T + d * np.eye(d)


def test_matrix_series_rejects_bad_shapes_and_values() -> None:
    with pytest.raises(ValidationError):
        MatrixSeries(np.zeros((10, 3)))
    with pytest.raises(ValidationError):
        MatrixSeries(np.zeros((1, 2, 2)))
    values = np.zeros((5, 2, 2))
    values[3, 1, 0] = np.nan
    with pytest.raises(NonFiniteError):
        MatrixSeries(values)


def test_matrix_series_dims_transpose_and_head() -> None:
    values = np.arange(24, dtype=float).reshape(4, 2, 3)
    X = MatrixSeries(values, "x")
    assert X.dims == (4, 2, 3)
    assert len(X) == 4
    assert X.transposed().dims == (4, 3, 2)
    np.testing.assert_array_equal(X.transposed().values[1], values[1].T)
    assert X.head(2).T == 2
    with pytest.raises(ValidationError):
        X.head(5)


def test_center_removes_elementwise_mean() -> None:
    values = np.random.default_rng(1).standard_normal((50, 3, 2)) + 4.0
    Xc, mean = center(MatrixSeries(values))
    np.testing.assert_allclose(Xc.values.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Xc.values + mean, values)


def test_sym_eig_orders_descending_with_sign_rule() -> None:
    S = _spd(5)
    eig = sym_eig(S)
    assert np.all(np.diff(eig.eigenvalues) <= 0)
    V = eig.eigenvectors
    np.testing.assert_allclose(V @ np.diag(eig.eigenvalues) @ V.T, S, atol=1e-10)
    lead = np.argmax(np.abs(V), axis=0)
    assert np.all(V[lead, np.arange(5)] > 0)
    assert orthonormality_error(V) < 1e-12


def test_sym_eig_rejects_non_square() -> None:
    with pytest.raises(ValidationError):
        sym_eig(np.zeros((2, 3)))


def test_inv_sqrt_and_sqrt_sym_invert_each_other() -> None:
    S = _spd(4, seed=3)
    M = inv_sqrt(S)
    R = sqrt_sym(S)
    np.testing.assert_allclose(M @ S @ M, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(R @ R, S, atol=1e-10)
    np.testing.assert_allclose(M @ R, np.eye(4), atol=1e-10)


def test_inv_sqrt_floors_singular_directions() -> None:
    S = np.diag([2.0, 0.0])
    M = inv_sqrt(S, floor=1e-6)
    assert np.isclose(M[0, 0], 2.0**-0.5)
    assert np.isclose(M[1, 1], 1e3)


def test_negative_definite_input_is_rejected() -> None:
    with pytest.raises(NotPositiveSemidefiniteError):
        inv_sqrt(np.diag([1.0, -1.0]))
    with pytest.raises(NotPositiveSemidefiniteError):
        sqrt_sym(np.diag([1.0, -1.0]))


def test_matrix_dict_encoding_is_row_major() -> None:
    M = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    encoded = matrix_to_dict(M)
    assert encoded == {"rows": 2, "cols": 3, "data": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]}
    np.testing.assert_array_equal(matrix_from_dict(encoded), M)


def test_matrix_dict_size_mismatch_is_malformed() -> None:
    with pytest.raises(MalformedInputError):
        matrix_from_dict({"rows": 2, "cols": 2, "data": [1.0, 2.0, 3.0]})
    with pytest.raises(MalformedInputError):
        matrix_from_dict({"rows": 2})
