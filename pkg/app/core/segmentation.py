"""
Group the eigenvectors of a W estimate into mutually uncorrelated blocks.

Pipeline: transformed series Z -> optional per-series AR prewhitening ->
maximum lagged cross-correlation table -> edge selection (ratio statistic or
fixed threshold) -> connected components -> ordered permutation.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from core.base import (
    DEFAULT_C_R,
    DEFAULT_MAX_AR_ORDER,
    DEFAULT_RHO_FLOOR,
    DEFAULT_TAU1,
    RATIO_DENOM_FLOOR,
)
from core.estimation import Mode, WEstimate, oriented
from core.matcore import MatrixSeries
from utils.errors import InsufficientDataError, InvalidWindowError, ValidationError
from utils.string import parse_float, split_option

log = logging.getLogger(__name__)

Pair = tuple[int, int]


# ---------------------------------------------------------------------------
# Transformed series
# ---------------------------------------------------------------------------


def transformed_columns(X: MatrixSeries, w: WEstimate) -> MatrixSeries:
    """
    Z_t = X_t M Gamma for Columns mode (X_t^T for Rows), where M is the inverse
    square root of the mode covariance and Gamma holds the eigenvectors of W.
    Column k of Z_t is the candidate k-th latent column.
    """
    arr = oriented(X, w.mode)
    if arr.shape[2] != w.dim:
        raise ValidationError(
            f"{w.mode.value} estimate has dimension {w.dim}, series has {arr.shape[2]}"
        )
    loading = w.sigma_inv_sqrt @ w.eig.eigenvectors
    return MatrixSeries(arr @ loading, X.label)


# ---------------------------------------------------------------------------
# Prewhitening
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Prewhitened:
    series: np.ndarray = field(repr=False)
    order: int
    coefficients: tuple[float, ...] = ()
    degenerate: bool = False


def prewhiten(z, max_order: int = DEFAULT_MAX_AR_ORDER) -> Prewhitened:
    """
    Replace a scalar series by its AR(k) residuals, k = 0..max_order chosen by
    AIC = n log(sigma^2) + 2k. All orders are compared on the common sample
    t >= max_order (n = T - max_order); the chosen filter is then applied to
    the whole series, giving T - k residuals. Order 0 returns the centred series.
    """
    z = np.asarray(z, dtype=float).ravel()
    T = z.size
    if max_order < 0:
        raise ValidationError(f"max_order must be >= 0, got {max_order}")
    if T <= 2 * max_order + 2:
        raise InsufficientDataError(
            f"prewhitening up to order {max_order} needs T > {2 * max_order + 2}, got {T}"
        )
    if np.ptp(z) == 0:
        log.warning("prewhiten: zero-variance series left unchanged")
        return Prewhitened(series=z.copy(), order=0, degenerate=True)

    centred = z - z.mean()
    n = T - max_order
    y = centred[max_order:]
    tiny = np.finfo(float).tiny

    best_order = 0
    best_coef = np.zeros(0)
    best_aic = n * math.log(max(float(np.mean(y**2)), tiny))
    for k in range(1, max_order + 1):
        lags = np.column_stack([centred[max_order - l : T - l] for l in range(1, k + 1)])
        coef, *_ = np.linalg.lstsq(lags, y, rcond=None)
        sigma2 = float(np.mean((y - lags @ coef) ** 2))
        aic = n * math.log(max(sigma2, tiny)) + 2 * k
        if aic < best_aic:
            best_order, best_coef, best_aic = k, coef, aic

    if best_order == 0:
        return Prewhitened(series=centred, order=0)
    k = best_order
    lags = np.column_stack([centred[k - l : T - l] for l in range(1, k + 1)])
    resid = centred[k:] - lags @ best_coef
    return Prewhitened(
        series=resid, order=k, coefficients=tuple(float(c) for c in best_coef)
    )


def _prewhiten_array(arr: np.ndarray, max_order: int) -> tuple[np.ndarray, np.ndarray]:
    """Prewhiten every scalar series of a (T, r, d) array and right-align them."""
    T, r, d = arr.shape
    fitted = [[prewhiten(arr[:, i, k], max_order) for k in range(d)] for i in range(r)]
    orders = np.array([[fit.order for fit in row] for row in fitted], dtype=int)
    length = T - int(orders.max())
    out = np.empty((length, r, d))
    for i in range(r):
        for k in range(d):
            out[:, i, k] = fitted[i][k].series[-length:]
    return out, orders


# ---------------------------------------------------------------------------
# Cross-correlation table
# ---------------------------------------------------------------------------


def _standardize(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centre and scale each scalar series; zero-variance series become all-zero."""
    centred = arr - arr.mean(axis=0)
    sd = np.sqrt(np.mean(centred**2, axis=0))
    valid = (np.ptp(arr, axis=0) > 0) & (sd > 0)
    scale = np.where(valid, sd, 1.0)
    return np.where(valid, centred / scale, 0.0), valid


def _rho_matrix(arr: np.ndarray, tau1: int) -> np.ndarray:
    """
    d x d matrix of max |corr(z_{t+tau, i, k}, z_{t, j, l})| over rows i, j and
    |tau| <= tau1, with full-sample means and variances (divisor T).
    """
    T, r, d = arr.shape
    if not 0 <= tau1 < T / 2:
        raise InvalidWindowError(f"tau1 = {tau1} needs 0 <= tau1 < T/2 = {T / 2:g}")
    S, valid = _standardize(arr)
    if not valid.all():
        log.warning(
            "cross-correlation: %d zero-variance series skipped", int((~valid).sum())
        )
    best = np.zeros((d, d))
    for tau in range(tau1 + 1):
        n = T - tau
        lead = S[tau:].reshape(n, r * d)
        lag = S[:n].reshape(n, r * d)
        G = np.abs(lead.T @ lag / T).reshape(r, d, r, d)
        lagged = G.max(axis=(0, 2))
        best = np.maximum(best, np.maximum(lagged, lagged.T))
    np.fill_diagonal(best, 0.0)
    return np.minimum(best, 1.0)


def max_cross_corr(Z: MatrixSeries, k: int, l: int, tau1: int = DEFAULT_TAU1) -> float:
    """
    Largest absolute lagged correlation between any scalar series of column k
    and any scalar series of column l, over lags -tau1..tau1.
    """
    d = Z.q
    if not (0 <= k < d and 0 <= l < d) or k == l:
        raise ValidationError(f"column pair ({k}, {l}) invalid for {d} columns")
    sub = Z.values[:, :, [k, l]]
    rho = _rho_matrix(sub, tau1)
    if rho[0, 1] == 0.0 and (np.ptp(sub, axis=0) == 0).any():
        log.warning("max_cross_corr: columns %d and %d have no usable pair", k, l)
    return float(rho[0, 1])


@dataclass(frozen=True, slots=True)
class CorrelationTable:
    """rho[(k, l)] for every unordered pair k < l (0-based columns of Z)."""

    rho: dict[Pair, float]
    tau1: int
    prewhitened: bool
    dim: int
    orders: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_matrix(
        cls,
        matrix: np.ndarray,
        tau1: int,
        prewhitened: bool,
        orders: np.ndarray | None = None,
    ) -> "CorrelationTable":
        d = matrix.shape[0]
        rho = {
            (k, l): float(matrix[k, l]) for k in range(d) for l in range(k + 1, d)
        }
        return cls(rho=rho, tau1=tau1, prewhitened=prewhitened, dim=d, orders=orders)

    def __len__(self) -> int:
        return len(self.rho)

    def ranked(self) -> list[tuple[Pair, float]]:
        """Pairs by decreasing rho; equal values keep pair order."""
        return sorted(self.rho.items(), key=lambda item: -item[1])

    def matrix(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for (k, l), value in self.rho.items():
            out[k, l] = out[l, k] = value
        return out

    def to_dict(self) -> dict:
        return {
            "tau1": self.tau1,
            "prewhitened": self.prewhitened,
            "pairs": [
                {"k": k, "l": l, "rho": value} for (k, l), value in sorted(self.rho.items())
            ],
        }


def correlation_table(
    Z: MatrixSeries,
    tau1: int = DEFAULT_TAU1,
    prewhiten_series: bool = False,
    max_order: int = DEFAULT_MAX_AR_ORDER,
) -> CorrelationTable:
    arr = Z.values
    orders = None
    if prewhiten_series:
        arr, orders = _prewhiten_array(arr, max_order)
        log.debug("prewhitening orders:\n%s", orders)
    matrix = _rho_matrix(arr, tau1)
    return CorrelationTable.from_matrix(matrix, tau1, prewhiten_series, orders)


# ---------------------------------------------------------------------------
# Edge selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Selector:
    """`ratio` (data-driven edge count) or `threshold:<rho0>`."""

    kind: str = "ratio"
    rho0: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "ratio":
            if self.rho0 is not None:
                raise ValidationError("ratio selector takes no threshold")
        elif self.kind == "threshold":
            if self.rho0 is None or not 0 < self.rho0 < 1:
                raise ValidationError(f"threshold rho0 must lie in (0, 1), got {self.rho0}")
        else:
            raise ValidationError(f"unknown selector {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "Selector":
        name, arg = split_option(text)
        if name == "threshold":
            if arg is None:
                raise ValidationError("threshold selector needs a value, e.g. threshold:0.5")
            return cls("threshold", parse_float(arg, "threshold rho0"))
        if arg is not None:
            raise ValidationError(f"selector {name!r} takes no argument")
        return cls(name)

    @property
    def label(self) -> str:
        return f"threshold:{self.rho0:g}" if self.kind == "threshold" else "ratio"


def ratio_sequence(rho_sorted: Sequence[float], c_r: float = DEFAULT_C_R) -> np.ndarray:
    """
    rho_(j) / rho_(j+1) for j = 1..J with J = min(floor(c_r q0), q0 - 1);
    denominators are floored at 1e-12.
    """
    values = np.asarray(rho_sorted, dtype=float).ravel()
    q0 = values.size
    if q0 == 0:
        raise ValidationError("ratio selection needs at least one correlation value")
    if q0 < 2:
        raise ValidationError("ratio selection needs at least two correlation values")
    if not 0 < c_r < 1:
        raise ValidationError(f"c_r must lie in (0, 1), got {c_r}")
    if values.min() < 0 or values.max() > 1:
        raise ValidationError("correlation values must lie in [0, 1]")
    if np.any(np.diff(values) > 1e-12):
        raise ValidationError("correlation values must be non-increasing")
    upper = min(math.floor(c_r * q0), q0 - 1)
    return values[:upper] / np.maximum(values[1 : upper + 1], RATIO_DENOM_FLOOR)


def ratio_select(rho_sorted: Sequence[float], c_r: float = DEFAULT_C_R) -> int:
    """
    1-based index j maximizing rho_(j) / rho_(j+1); ties go to the smallest j.
    Returns 0 when c_r q0 < 1 leaves no admissible index.
    """
    ratios = ratio_sequence(rho_sorted, c_r)
    if ratios.size == 0:
        return 0
    return int(np.argmax(ratios)) + 1


def threshold_select(table: CorrelationTable, rho0: float) -> list[tuple[Pair, float]]:
    """Every pair with rho >= rho0, strongest first."""
    if not 0 < rho0 < 1:
        raise ValidationError(f"threshold rho0 must lie in (0, 1), got {rho0}")
    return [(pair, value) for pair, value in table.ranked() if value >= rho0]


# ---------------------------------------------------------------------------
# Grouping
# ---------------------------------------------------------------------------


class UnionFind:
    """
    Disjoint sets over 0..n-1 with union by rank and path compression.
    """

    def __init__(self, n: int) -> None:
        self._leader = list(range(n))
        self._rank = [0] * n
        self.n_clusters = n
        self.n_unions = 0

    def __repr__(self) -> str:
        return f"UnionFind: contains {self.n_clusters} clusters."

    def find(self, s: int) -> int:
        path = [s]
        parent = self._leader[s]
        while parent != self._leader[parent]:
            path.append(parent)
            parent = self._leader[parent]
        for node in path:
            self._leader[node] = parent
        return parent

    def union(self, a: int, b: int) -> bool:
        """Merge the sets holding a and b; False if they were already joined."""
        s1, s2 = self.find(a), self.find(b)
        if s1 == s2:
            return False
        if self._rank[s2] > self._rank[s1]:
            s1, s2 = s2, s1
        if self._rank[s1] == self._rank[s2]:
            self._rank[s1] += 1
        self._leader[s2] = s1
        self.n_clusters -= 1
        self.n_unions += 1
        return True

    def components(self) -> list[tuple[int, ...]]:
        """Members ascending, components ordered by smallest member."""
        buckets: dict[int, list[int]] = {}
        for s in range(len(self._leader)):
            buckets.setdefault(self.find(s), []).append(s)
        return sorted((tuple(members) for members in buckets.values()), key=lambda g: g[0])


@dataclass(frozen=True, slots=True)
class Grouping:
    groups: tuple[tuple[int, ...], ...]
    permutation: tuple[int, ...]
    n_unions: int


def group_columns(d: int, edges: Iterable[Pair]) -> Grouping:
    """
    Connected components of the edge graph on 0..d-1; the permutation lists the
    groups contiguously.
    """
    if d < 1:
        raise ValidationError(f"need at least one column, got {d}")
    uf = UnionFind(d)
    for k, l in edges:
        if not (0 <= k < d and 0 <= l < d):
            raise ValidationError(f"edge ({k}, {l}) outside 0..{d - 1}")
        uf.union(k, l)
    groups = tuple(uf.components())
    permutation = tuple(k for group in groups for k in group)
    return Grouping(groups=groups, permutation=permutation, n_unions=uf.n_unions)


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class SegmentationResult:
    mode: Mode
    dim: int
    permutation: tuple[int, ...]
    groups: tuple[tuple[int, ...], ...]
    r_hat: int
    edges: tuple[tuple[int, int, float], ...]
    n_groups: int
    ratios: tuple[float, ...]
    table: CorrelationTable = field(repr=False)
    selector: str = "ratio"
    floor_applied: bool = False
    eigengaps: tuple[float, ...] = ()

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    def positional_groups(self) -> tuple[tuple[int, ...], ...]:
        """Groups as contiguous positions after applying the permutation."""
        out, start = [], 0
        for size in self.group_sizes:
            out.append(tuple(range(start, start + size)))
            start += size
        return tuple(out)

    def ordered_eigenvectors(self, w: WEstimate) -> np.ndarray:
        if w.dim != self.dim or w.mode is not self.mode:
            raise ValidationError("segmentation and W estimate do not match")
        return w.eig.eigenvectors[:, list(self.permutation)]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "dim": self.dim,
            "permutation": list(self.permutation),
            "groups": [list(g) for g in self.groups],
            "n_groups": self.n_groups,
            "r_hat": self.r_hat,
            "edges": [{"k": k, "l": l, "rho": rho} for k, l, rho in self.edges],
            "ratios": list(self.ratios),
            "selector": self.selector,
            "floor_applied": self.floor_applied,
            "eigengaps": [_finite_or_none(g) for g in self.eigengaps],
            "correlations": self.table.to_dict(),
        }


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


def segment(
    X: MatrixSeries,
    w: WEstimate,
    tau1: int = DEFAULT_TAU1,
    c_r: float = DEFAULT_C_R,
    prewhiten_series: bool = True,
    selector: Selector | None = None,
    rho_floor: float = DEFAULT_RHO_FLOOR,
    max_order: int = DEFAULT_MAX_AR_ORDER,
) -> SegmentationResult:
    selector = selector or Selector()
    if not 0 <= rho_floor < 1:
        raise ValidationError(f"rho_floor must lie in [0, 1), got {rho_floor}")
    if not 0 <= tau1 < X.T / 2:
        raise InvalidWindowError(f"tau1 = {tau1} needs 0 <= tau1 < T/2 = {X.T / 2:g}")

    d = w.dim
    Z = transformed_columns(X, w)
    if d == 1:
        table = CorrelationTable(rho={}, tau1=tau1, prewhitened=prewhiten_series, dim=1)
        return SegmentationResult(
            mode=w.mode,
            dim=1,
            permutation=(0,),
            groups=((0,),),
            r_hat=0,
            edges=(),
            n_groups=1,
            ratios=(),
            table=table,
            selector=selector.label,
            eigengaps=(w.eigengap_for((0,)),),
        )

    table = correlation_table(Z, tau1, prewhiten_series, max_order)
    ranked = table.ranked()
    ratios: tuple[float, ...] = ()
    floor_applied = False

    if selector.kind == "threshold":
        chosen = threshold_select(table, selector.rho0)
        r_hat = len(chosen)
    else:
        values = [value for _, value in ranked]
        if len(values) <= 1:
            r_hat = 0
        else:
            seq = ratio_sequence(values, c_r)
            ratios = tuple(float(x) for x in seq)
            r_hat = int(np.argmax(seq)) + 1 if seq.size else 0
            if r_hat and values[r_hat - 1] < rho_floor:
                log.warning(
                    "%s: strongest selected correlation %.4f below floor %.4f; "
                    "no pairs selected",
                    w.mode.value,
                    values[r_hat - 1],
                    rho_floor,
                )
                r_hat = 0
                floor_applied = True
        chosen = ranked[:r_hat]

    grouping = group_columns(d, (pair for pair, _ in chosen))
    n_groups = d - grouping.n_unions
    gaps = tuple(w.eigengap_for(g) for g in grouping.groups)
    log.debug("%s: selected edges %s", w.mode.value, chosen)
    log.info(
        "%s: %d group(s) with sizes %s",
        w.mode.value,
        n_groups,
        [len(g) for g in grouping.groups],
    )
    return SegmentationResult(
        mode=w.mode,
        dim=d,
        permutation=grouping.permutation,
        groups=grouping.groups,
        r_hat=r_hat,
        edges=tuple((k, l, value) for (k, l), value in chosen),
        n_groups=n_groups,
        ratios=ratios,
        table=table,
        selector=selector.label,
        floor_applied=floor_applied,
        eigengaps=gaps,
    )
