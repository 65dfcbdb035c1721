"""
Covariance normalizers, lagged cross-moment blocks and the W accumulation
matrices whose eigenvectors give the column and row transforms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from core.base import DEFAULT_TAU0
from core.matcore import MatrixSeries, SymEig, inv_sqrt, sym_eig, symmetrize
from utils.errors import InsufficientDataError, InvalidWindowError, ValidationError
from utils.string import parse_float, split_option

log = logging.getLogger(__name__)


class Mode(StrEnum):
    """Columns targets A* (X_t as-is); Rows targets B* (X_t transposed)."""

    COLUMNS = "columns"
    ROWS = "rows"


class WMethod(StrEnum):
    NAIVE = "naive"
    OPTIMIZED = "optimized"


@dataclass(frozen=True, slots=True)
class EigTransform:
    """
    Monotone map applied to the eigenvalues of every V V^T summand.
    """

    kind: str = "identity"
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in {"identity", "log1p", "power"}:
            raise ValidationError(f"unknown eigenvalue transform {self.kind!r}")
        if self.kind == "power" and not self.alpha > 0:
            raise ValidationError(f"power transform needs alpha > 0, got {self.alpha}")

    @classmethod
    def parse(cls, text: str) -> "EigTransform":
        """`identity`, `log1p` or `power:<alpha>`."""
        name, arg = split_option(text)
        if name == "power":
            if arg is None:
                raise ValidationError("power transform needs an exponent, e.g. power:0.5")
            return cls("power", parse_float(arg, "power exponent"))
        if arg is not None:
            raise ValidationError(f"transform {name!r} takes no argument")
        return cls(name)

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity" or (self.kind == "power" and self.alpha == 1.0)

    @property
    def label(self) -> str:
        return f"power:{self.alpha:g}" if self.kind == "power" else self.kind

    def scalar(self, values: np.ndarray) -> np.ndarray:
        values = np.maximum(values, 0.0)
        if self.kind == "log1p":
            return np.log1p(values)
        if self.kind == "power":
            return values**self.alpha
        return values

    def apply(self, S: np.ndarray) -> np.ndarray:
        """Apply to a symmetric PSD matrix or a stack of them, shape (..., d, d)."""
        if self.is_identity:
            return S
        values, vectors = np.linalg.eigh(S)
        mapped = self.scalar(values)
        return vectors @ (mapped[..., :, None] * np.swapaxes(vectors, -1, -2))


@dataclass(frozen=True, slots=True)
class WEstimate:
    mode: Mode
    w: np.ndarray = field(repr=False)
    tau0: int
    sigma: np.ndarray = field(repr=False)
    sigma_inv_sqrt: np.ndarray = field(repr=False)
    eig: SymEig = field(repr=False)
    eigengaps: np.ndarray = field(repr=False)
    transform_label: str = "identity"

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def eigengap_for(self, group) -> float:
        """
        Smallest distance between eigenvalues inside `group` and those outside it
        (positions in the descending eigenvalue order); inf when nothing is outside.
        """
        members = sorted(set(int(k) for k in group))
        if not members or members[0] < 0 or members[-1] >= self.dim:
            raise ValidationError(f"group {members} outside 0..{self.dim - 1}")
        inside = self.eig.eigenvalues[members]
        mask = np.ones(self.dim, dtype=bool)
        mask[members] = False
        outside = self.eig.eigenvalues[mask]
        if outside.size == 0:
            return float("inf")
        return float(np.min(np.abs(inside[:, None] - outside[None, :])))


def oriented(X: MatrixSeries, mode: Mode) -> np.ndarray:
    """(T, r, d) array: X_t for Columns, X_t^T for Rows."""
    return X.values if Mode(mode) is Mode.COLUMNS else X.values.transpose(0, 2, 1)


def _mode_covariance(arr: np.ndarray) -> np.ndarray:
    T, r, _ = arr.shape
    return symmetrize(np.einsum("tij,tik->jk", arr, arr) / (T * r))


def covariance_pair(X: MatrixSeries) -> tuple[np.ndarray, np.ndarray]:
    """
    (sigma1, sigma2) = ((Tp)^-1 sum X_t^T X_t, (Tq)^-1 sum X_t X_t^T) of a centred series.
    """
    if X.T < 2:
        raise InsufficientDataError(f"need at least 2 observations, got {X.T}")
    sigma1 = _mode_covariance(oriented(X, Mode.COLUMNS))
    sigma2 = _mode_covariance(oriented(X, Mode.ROWS))
    return sigma1, sigma2


def _lagged_block(arr: np.ndarray, tau: int, i: int, j: int) -> np.ndarray:
    if tau < 0:
        return _lagged_block(arr, -tau, j, i).T
    n = arr.shape[0] - tau
    return arr[tau:, i, :].T @ arr[:n, j, :] / n


def lagged_block(X: MatrixSeries, mode: Mode, tau: int, i: int, j: int) -> np.ndarray:
    """
    Average of X_{t+tau}^T E_ij X_t over t (Columns mode), i.e. the outer product
    of row i of X_{t+tau} with row j of X_t; Rows mode works on X_t^T.

    Negative lags use the identity S(-tau, i, j) = S(tau, j, i)^T.
    """
    arr = oriented(X, mode)
    T, r, _ = arr.shape
    if abs(tau) >= T:
        raise InvalidWindowError(f"lag {tau} needs |tau| < T = {T}")
    if not (0 <= i < r and 0 <= j < r):
        raise ValidationError(f"block index ({i}, {j}) outside 0..{r - 1}")
    return _lagged_block(arr, tau, i, j)


def _w_naive(
    arr: np.ndarray, M: np.ndarray, tau0: int, f: EigTransform
) -> np.ndarray:
    _, r, d = arr.shape
    acc = np.zeros((d, d))
    for tau in range(-tau0, tau0 + 1):
        for i in range(r):
            for j in range(r):
                V = M @ _lagged_block(arr, tau, i, j) @ M
                acc += f.apply(V @ V.T)
    return acc


def _w_optimized(
    arr: np.ndarray, M: np.ndarray, tau0: int, f: EigTransform
) -> np.ndarray:
    T, r, d = arr.shape
    Y = arr @ M
    acc = np.zeros((d, d))
    for tau in range(tau0 + 1):
        n = T - tau
        lead = Y[tau:].reshape(n, r * d)
        lag = Y[:n].reshape(n, r * d)
        # C[i, a, j, b] = V(tau, i, j)[a, b]
        C = (lead.T @ lag / n).reshape(r, d, r, d)
        if f.is_identity:
            K = C.transpose(1, 0, 2, 3).reshape(d, -1)
            acc += K @ K.T
            if tau > 0:
                L = C.transpose(3, 0, 1, 2).reshape(d, -1)
                acc += L @ L.T
        else:
            V = C.transpose(0, 2, 1, 3).reshape(r * r, d, d)
            Vt = V.transpose(0, 2, 1)
            acc += f.apply(V @ Vt).sum(axis=0)
            if tau > 0:
                acc += f.apply(Vt @ V).sum(axis=0)
    return acc


def w_estimate(
    X: MatrixSeries,
    mode: Mode = Mode.COLUMNS,
    tau0: int = DEFAULT_TAU0,
    f: EigTransform | None = None,
    method: WMethod = WMethod.OPTIMIZED,
) -> WEstimate:
    """
    W = r^-2 sum_{|tau| <= tau0} sum_{i,j} f(V V^T), V = M S(tau, i, j) M with
    M the inverse square root of the mode covariance and r the summed index count.
    """
    f = f or EigTransform()
    mode = Mode(mode)
    if not 0 <= tau0 < X.T:
        raise InvalidWindowError(f"tau0 = {tau0} needs 0 <= tau0 < T = {X.T}")
    arr = oriented(X, mode)
    _, r, _ = arr.shape
    sigma = _mode_covariance(arr)
    M = inv_sqrt(sigma)
    if WMethod(method) is WMethod.NAIVE:
        acc = _w_naive(arr, M, tau0, f)
    else:
        acc = _w_optimized(arr, M, tau0, f)
    w = symmetrize(acc) / (r * r)
    eig = sym_eig(w)
    gaps = np.maximum(-np.diff(eig.eigenvalues), 0.0)
    log.debug(
        "W(%s): tau0=%d, eigenvalues=%s",
        mode.value,
        tau0,
        np.array2string(eig.eigenvalues, precision=4),
    )
    return WEstimate(
        mode=mode,
        w=w,
        tau0=tau0,
        sigma=sigma,
        sigma_inv_sqrt=M,
        eig=eig,
        eigengaps=gaps,
        transform_label=f.label,
    )


def estimate_transforms(
    X: MatrixSeries,
    tau0: int = DEFAULT_TAU0,
    f: EigTransform | None = None,
    method: WMethod = WMethod.OPTIMIZED,
) -> tuple[WEstimate, WEstimate]:
    """
    Column (A*) and row (B*) estimates; the two are computed independently.
    """
    col = w_estimate(X, Mode.COLUMNS, tau0, f, method)
    row = w_estimate(X, Mode.ROWS, tau0, f, method)
    return col, row
