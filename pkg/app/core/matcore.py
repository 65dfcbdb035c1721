"""
Dense symmetric linear algebra and the matrix time series container.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from core.base import EIG_FLOOR_SCALE
from utils.errors import (
    MalformedInputError,
    NonFiniteError,
    NotPositiveSemidefiniteError,
    ValidationError,
)


@dataclass(frozen=True, slots=True)
class MatrixSeries:
    """
    T real p x q matrices stored as one (T, p, q) float array.
    """

    values: np.ndarray
    label: str | None = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 3:
            raise ValidationError(
                f"matrix series needs a (T, p, q) array, got shape {arr.shape}"
            )
        T, p, q = arr.shape
        if T < 2 or p < 1 or q < 1:
            raise ValidationError(f"matrix series needs T >= 2, p, q >= 1; got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("matrix series contains non-finite entries")
        object.__setattr__(self, "values", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def q(self) -> int:
        return self.values.shape[2]

    def __len__(self) -> int:
        return self.T

    def transposed(self) -> "MatrixSeries":
        """Series of X_t transposed (q x p)."""
        return MatrixSeries(np.ascontiguousarray(self.values.transpose(0, 2, 1)), self.label)

    def head(self, n: int) -> "MatrixSeries":
        """First `n` observations."""
        if n < 2 or n > self.T:
            raise ValidationError(f"cannot take {n} of {self.T} observations")
        return MatrixSeries(self.values[:n], self.label)


@dataclass(frozen=True, slots=True)
class SymEig:
    """
    Eigen-decomposition of a symmetric matrix, eigenvalues descending.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]


def _check_square(S: np.ndarray, what: str) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"{what}: expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NonFiniteError(f"{what}: matrix contains non-finite entries")
    return S


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def center(series: MatrixSeries) -> tuple[MatrixSeries, np.ndarray]:
    """
    Subtract the elementwise sample mean; returns the centred series and the mean.
    """
    mean = series.values.mean(axis=0)
    return MatrixSeries(series.values - mean, series.label), mean


def sym_eig(S: np.ndarray) -> SymEig:
    """
    Deterministic symmetric eigensolver.

    The input is symmetrized first. Eigenvalues come back non-increasing and
    each eigenvector is signed so that its largest-magnitude component is
    positive (first such component on ties).
    """
    S = symmetrize(_check_square(S, "sym_eig"))
    values, vectors = linalg.eigh(S)
    values = values[::-1].copy()
    vectors = vectors[:, ::-1].copy()
    if vectors.size:
        lead = np.argmax(np.abs(vectors), axis=0)
        signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
        signs[signs == 0] = 1.0
        vectors *= signs
    return SymEig(eigenvalues=values, eigenvectors=vectors)


def default_floor(S: np.ndarray) -> float:
    """Eigenvalue floor 1e-10 * trace(S) / d, never below the smallest normal float."""
    d = S.shape[0]
    return max(EIG_FLOOR_SCALE * float(np.trace(S)) / d, np.finfo(float).tiny)


def inv_sqrt(S: np.ndarray, floor: float | None = None) -> np.ndarray:
    """
    Inverse square root V diag(max(l, floor)^-1/2) V^T of a PSD matrix.
    """
    S = _check_square(S, "inv_sqrt")
    if floor is None:
        floor = default_floor(S)
    if not floor > 0:
        raise ValidationError(f"inv_sqrt: floor must be positive, got {floor}")
    eig = sym_eig(S)
    lowest = float(eig.eigenvalues[-1])
    if lowest < -10.0 * floor:
        raise NotPositiveSemidefiniteError(
            f"matrix is not positive semidefinite (smallest eigenvalue {lowest:.3e})"
        )
    scaled = np.maximum(eig.eigenvalues, floor) ** -0.5
    V = eig.eigenvectors
    return symmetrize((V * scaled) @ V.T)


def sqrt_sym(S: np.ndarray) -> np.ndarray:
    """
    Symmetric square root V diag(max(l, 0)^1/2) V^T of a PSD matrix.
    """
    S = _check_square(S, "sqrt_sym")
    eig = sym_eig(S)
    scale = float(np.max(np.abs(eig.eigenvalues))) if eig.size else 0.0
    lowest = float(eig.eigenvalues[-1])
    if lowest < -1e-8 * max(scale, np.finfo(float).tiny):
        raise NotPositiveSemidefiniteError(
            f"matrix is not positive semidefinite (smallest eigenvalue {lowest:.3e})"
        )
    roots = np.sqrt(np.maximum(eig.eigenvalues, 0.0))
    V = eig.eigenvectors
    return symmetrize((V * roots) @ V.T)


def orthonormality_error(V: np.ndarray) -> float:
    """max |V^T V - I| entry."""
    V = np.asarray(V, dtype=float)
    return float(np.max(np.abs(V.T @ V - np.eye(V.shape[1])))) if V.size else 0.0


def matrix_to_dict(M: np.ndarray) -> dict:
    """Row-major JSON encoding with explicit dims."""
    M = np.asarray(M, dtype=float)
    rows, cols = M.shape
    return {"rows": rows, "cols": cols, "data": [float(x) for x in M.ravel()]}


def matrix_from_dict(data: dict) -> np.ndarray:
    try:
        rows, cols = int(data["rows"]), int(data["cols"])
        values = np.asarray(data["data"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInputError(f"malformed matrix entry: {exc}") from exc
    if values.size != rows * cols:
        raise MalformedInputError(
            f"matrix entry holds {values.size} values, expected {rows} x {cols}"
        )
    return values.reshape(rows, cols)
