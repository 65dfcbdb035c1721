"""
The bilinear transform X_t <-> U_t and its estimation from data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from core.base import SCHEMA
from core.config import PipelineSettings
from core.estimation import Mode, WEstimate, covariance_pair, estimate_transforms
from core.matcore import (
    MatrixSeries,
    center,
    inv_sqrt,
    matrix_from_dict,
    matrix_to_dict,
    orthonormality_error,
    sqrt_sym,
)
from core.segmentation import SegmentationResult, segment
from utils.errors import MalformedInputError, ValidationError

log = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-8

Groups = tuple[tuple[int, ...], ...]


def _contiguous(groups, size: int, what: str) -> Groups:
    groups = tuple(tuple(int(k) for k in g) for g in groups)
    flat = [k for g in groups for k in g]
    if flat != list(range(size)):
        raise ValidationError(f"{what} must be contiguous blocks covering 0..{size - 1}")
    return groups


@dataclass(frozen=True, slots=True)
class TransformPair:
    """
    Ordered eigenvector matrices with their covariance square-root factors.

    Group members are positions in the latent matrix (contiguous blocks).
    """

    a_star: np.ndarray = field(repr=False)
    b_star: np.ndarray = field(repr=False)
    sigma1_inv_sqrt: np.ndarray = field(repr=False)
    sigma2_inv_sqrt: np.ndarray = field(repr=False)
    sigma1_sqrt: np.ndarray = field(repr=False)
    sigma2_sqrt: np.ndarray = field(repr=False)
    col_groups: Groups = ()
    row_groups: Groups = ()
    col_eigenvalues: tuple[float, ...] = ()
    row_eigenvalues: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        q, p = self.a_star.shape[0], self.b_star.shape[0]
        for name, size in (
            ("a_star", q),
            ("sigma1_inv_sqrt", q),
            ("sigma1_sqrt", q),
            ("b_star", p),
            ("sigma2_inv_sqrt", p),
            ("sigma2_sqrt", p),
        ):
            if getattr(self, name).shape != (size, size):
                raise ValidationError(f"{name} must be {size} x {size}")
        col_groups = self.col_groups or tuple((k,) for k in range(q))
        row_groups = self.row_groups or tuple((k,) for k in range(p))
        object.__setattr__(self, "col_groups", _contiguous(col_groups, q, "col_groups"))
        object.__setattr__(self, "row_groups", _contiguous(row_groups, p, "row_groups"))

    @property
    def p(self) -> int:
        return self.b_star.shape[0]

    @property
    def q(self) -> int:
        return self.a_star.shape[0]

    @classmethod
    def identity(cls, p: int, q: int) -> "TransformPair":
        return cls(
            a_star=np.eye(q),
            b_star=np.eye(p),
            sigma1_inv_sqrt=np.eye(q),
            sigma2_inv_sqrt=np.eye(p),
            sigma1_sqrt=np.eye(q),
            sigma2_sqrt=np.eye(p),
        )

    @classmethod
    def from_covariances(
        cls,
        a_star: np.ndarray,
        b_star: np.ndarray,
        sigma1: np.ndarray,
        sigma2: np.ndarray,
        col_groups=(),
        row_groups=(),
    ) -> "TransformPair":
        return cls(
            a_star=a_star,
            b_star=b_star,
            sigma1_inv_sqrt=inv_sqrt(sigma1),
            sigma2_inv_sqrt=inv_sqrt(sigma2),
            sigma1_sqrt=sqrt_sym(sigma1),
            sigma2_sqrt=sqrt_sym(sigma2),
            col_groups=col_groups,
            row_groups=row_groups,
        )

    def check_orthonormal(self, tol: float = ORTHONORMAL_TOL) -> None:
        for name in ("a_star", "b_star"):
            err = orthonormality_error(getattr(self, name))
            if err > tol:
                raise ValidationError(f"{name} is not orthonormal (error {err:.2e})")

    def block_slices(self) -> list[tuple[slice, slice]]:
        """(row slice, column slice) of every latent block, row-major."""
        return [
            (slice(rg[0], rg[-1] + 1), slice(cg[0], cg[-1] + 1))
            for rg in self.row_groups
            for cg in self.col_groups
        ]

    @property
    def left(self) -> np.ndarray:
        return self.b_star.T @ self.sigma2_inv_sqrt

    @property
    def right(self) -> np.ndarray:
        return self.sigma1_inv_sqrt @ self.a_star

    @property
    def left_inverse(self) -> np.ndarray:
        return self.sigma2_sqrt @ self.b_star

    @property
    def right_inverse(self) -> np.ndarray:
        return self.a_star.T @ self.sigma1_sqrt

    def project(self, values: np.ndarray) -> np.ndarray:
        """Latent value(s) of one p x q matrix or a (T, p, q) stack."""
        return self.left @ np.asarray(values, dtype=float) @ self.right

    def reconstruct(self, values: np.ndarray) -> np.ndarray:
        """Inverse of `project`."""
        return self.left_inverse @ np.asarray(values, dtype=float) @ self.right_inverse

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "index_base": 0,
            "p": self.p,
            "q": self.q,
            "a_star": matrix_to_dict(self.a_star),
            "b_star": matrix_to_dict(self.b_star),
            "sigma1_inv_sqrt": matrix_to_dict(self.sigma1_inv_sqrt),
            "sigma2_inv_sqrt": matrix_to_dict(self.sigma2_inv_sqrt),
            "sigma1_sqrt": matrix_to_dict(self.sigma1_sqrt),
            "sigma2_sqrt": matrix_to_dict(self.sigma2_sqrt),
            "col_groups": [list(g) for g in self.col_groups],
            "row_groups": [list(g) for g in self.row_groups],
            "col_eigenvalues": list(self.col_eigenvalues),
            "row_eigenvalues": list(self.row_eigenvalues),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TransformPair":
        if data.get("schema") != SCHEMA:
            raise MalformedInputError(
                f"unsupported transform schema {data.get('schema')!r}, expected {SCHEMA!r}"
            )
        try:
            pair = cls(
                a_star=matrix_from_dict(data["a_star"]),
                b_star=matrix_from_dict(data["b_star"]),
                sigma1_inv_sqrt=matrix_from_dict(data["sigma1_inv_sqrt"]),
                sigma2_inv_sqrt=matrix_from_dict(data["sigma2_inv_sqrt"]),
                sigma1_sqrt=matrix_from_dict(data["sigma1_sqrt"]),
                sigma2_sqrt=matrix_from_dict(data["sigma2_sqrt"]),
                col_groups=data.get("col_groups", ()),
                row_groups=data.get("row_groups", ()),
                col_eigenvalues=tuple(data.get("col_eigenvalues", ())),
                row_eigenvalues=tuple(data.get("row_eigenvalues", ())),
            )
        except KeyError as exc:
            raise MalformedInputError(f"transform document lacks {exc}") from exc
        pair.check_orthonormal()
        return pair


def _check_dims(X: MatrixSeries, tp: TransformPair) -> None:
    if (X.p, X.q) != (tp.p, tp.q):
        raise ValidationError(
            f"series is {X.p} x {X.q} but the transform expects {tp.p} x {tp.q}"
        )


def to_latent(X: MatrixSeries, tp: TransformPair) -> MatrixSeries:
    """U_t = B*^T Sigma2^-1/2 X_t Sigma1^-1/2 A*."""
    _check_dims(X, tp)
    return MatrixSeries(tp.project(X.values), X.label)


def from_latent(U: MatrixSeries, tp: TransformPair) -> MatrixSeries:
    """X_t = Sigma2^1/2 B* U_t A*^T Sigma1^1/2."""
    _check_dims(U, tp)
    return MatrixSeries(tp.reconstruct(U.values), U.label)


def build_transform(
    col_w: WEstimate,
    row_w: WEstimate,
    col_seg: SegmentationResult,
    row_seg: SegmentationResult,
) -> TransformPair:
    if col_w.mode is not Mode.COLUMNS or row_w.mode is not Mode.ROWS:
        raise ValidationError("build_transform needs a Columns and a Rows estimate")
    col_order = list(col_seg.permutation)
    row_order = list(row_seg.permutation)
    return TransformPair(
        a_star=col_seg.ordered_eigenvectors(col_w),
        b_star=row_seg.ordered_eigenvectors(row_w),
        sigma1_inv_sqrt=col_w.sigma_inv_sqrt,
        sigma2_inv_sqrt=row_w.sigma_inv_sqrt,
        sigma1_sqrt=sqrt_sym(col_w.sigma),
        sigma2_sqrt=sqrt_sym(row_w.sigma),
        col_groups=col_seg.positional_groups(),
        row_groups=row_seg.positional_groups(),
        col_eigenvalues=tuple(float(v) for v in col_w.eig.eigenvalues[col_order]),
        row_eigenvalues=tuple(float(v) for v in row_w.eig.eigenvalues[row_order]),
    )


@dataclass(frozen=True, slots=True)
class FittedTransform:
    pair: TransformPair
    col_w: WEstimate = field(repr=False)
    row_w: WEstimate = field(repr=False)
    col_seg: SegmentationResult = field(repr=False)
    row_seg: SegmentationResult = field(repr=False)
    mean: np.ndarray = field(repr=False)


def fit_transform(X: MatrixSeries, settings: PipelineSettings | None = None) -> FittedTransform:
    """
    Centre X, estimate both W matrices and segment each mode independently.
    """
    settings = (settings or PipelineSettings()).validate()
    Xc, mean = center(X)
    col_w, row_w = estimate_transforms(
        Xc, settings.tau0, settings.eig_transform, settings.w_method
    )
    segs = [
        segment(
            Xc,
            w,
            tau1=settings.tau1,
            c_r=settings.c_r,
            prewhiten_series=settings.prewhiten,
            selector=settings.selector,
            rho_floor=settings.rho_floor,
            max_order=settings.max_ar_order,
        )
        for w in (col_w, row_w)
    ]
    pair = build_transform(col_w, row_w, segs[0], segs[1])
    return FittedTransform(
        pair=pair, col_w=col_w, row_w=row_w, col_seg=segs[0], row_seg=segs[1], mean=mean
    )


def proxy_targets(
    A: np.ndarray, B: np.ndarray, U: MatrixSeries, X: MatrixSeries
) -> tuple[np.ndarray, np.ndarray]:
    """
    Normalized targets A* = Sigma1x^-1/2 A Sigma1u^1/2 and
    B* = Sigma2x^-1/2 B Sigma2u^1/2, where Sigma1u = (Tp)^-1 sum U_t^T B^T B U_t
    and Sigma2u = (Tq)^-1 sum U_t A^T A U_t^T. Both series are centred first.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != (X.q, X.q) or B.shape != (X.p, X.p):
        raise ValidationError("A must be q x q and B p x p for the given series")
    if U.dims != X.dims:
        raise ValidationError(f"latent dims {U.dims} differ from observed {X.dims}")
    Xc, _ = center(X)
    Uc, _ = center(U)
    sigma1_x, sigma2_x = covariance_pair(Xc)
    BU = B @ Uc.values
    UA = Uc.values @ A.T
    T, p, q = X.dims
    sigma1_u = np.einsum("tij,tik->jk", BU, BU) / (T * p)
    sigma2_u = np.einsum("tij,tkj->ik", UA, UA) / (T * q)
    a_proxy = inv_sqrt(sigma1_x) @ A @ sqrt_sym(sigma1_u)
    b_proxy = inv_sqrt(sigma2_x) @ B @ sqrt_sym(sigma2_u)
    return a_proxy, b_proxy
