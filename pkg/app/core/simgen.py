"""
Seeded simulation designs with ground truth, plus the evaluation metrics
(D, D1, segmentation outcome) used to score estimated transforms.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from scipy import signal
from scipy.optimize import linear_sum_assignment

from core.base import BURN_IN
from core.matcore import MatrixSeries, matrix_to_dict
from utils.errors import IncomparableSegmentationError, ValidationError

log = logging.getLogger(__name__)

Groups = tuple[tuple[int, ...], ...]

MAX_MIXING_COND = 1e8
EXAMPLE3_LAMBDAS = (0.81, 0.64, 0.25, 0.25)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ArmaSeries:
    """z_t = b z_{t-1} + e_t + a1 e_{t-1} + a2 e_{t-2}."""

    values: np.ndarray = field(repr=False)
    b: float
    a1: float
    a2: float

    def variance(self) -> float:
        """Stationary variance for unit innovations."""
        psi1 = self.b + self.a1
        psi2 = self.b * psi1 + self.a2
        return 1.0 + psi1**2 + psi2**2 / (1.0 - self.b**2)


def _two_sided(rng: np.random.Generator, low: float, high: float) -> float:
    """Uniform draw on (-high, -low) U (low, high)."""
    magnitude = rng.uniform(low, high)
    return float(magnitude if rng.random() < 0.5 else -magnitude)


def gen_arma12(
    T: int,
    rng: np.random.Generator,
    b: float | None = None,
    a1: float | None = None,
    a2: float | None = None,
) -> ArmaSeries:
    """
    ARMA(1, 2) draw of length T after a burn-in. Coefficients not given are drawn
    as b ~ U(+-(0.5, 0.98)) and a1, a2 ~ U(+-(0.3, 0.98)).
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    b = _two_sided(rng, 0.5, 0.98) if b is None else float(b)
    a1 = _two_sided(rng, 0.3, 0.98) if a1 is None else float(a1)
    a2 = _two_sided(rng, 0.3, 0.98) if a2 is None else float(a2)
    if not abs(b) < 1:
        raise ValidationError(f"AR coefficient must satisfy |b| < 1, got {b}")
    eps = rng.standard_normal(T + BURN_IN)
    z = signal.lfilter([1.0, a1, a2], [1.0, -b], eps)[BURN_IN:]
    return ArmaSeries(values=z, b=b, a1=a1, a2=a2)


def _mixing(d: int, rng: np.random.Generator) -> np.ndarray:
    """Entries i.i.d. U(-1, 1), redrawn until the condition number is below 1e8."""
    while True:
        M = rng.uniform(-1.0, 1.0, size=(d, d))
        if np.linalg.cond(M) < MAX_MIXING_COND:
            return M


def _orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def _singletons(d: int) -> Groups:
    return tuple((k,) for k in range(d))


def _design_groups(d: int) -> Groups:
    """Blocks {0,1,2}, {3,4} and singletons for the rest."""
    return ((0, 1, 2), (3, 4)) + tuple((k,) for k in range(5, d))


def _check_dims(T: int, p: int, q: int) -> None:
    if T < 2 or p < 1 or q < 1:
        raise ValidationError(f"need T >= 2 and p, q >= 1; got T={T}, p={p}, q={q}")


@dataclass(frozen=True, slots=True)
class SimTruth:
    """
    Generator parts: X_t = B U_t A^T. `transition` is the one-step map of the
    row-major vectorized U_t when the design has one.
    """

    design: str
    seed: int
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    U: MatrixSeries = field(repr=False)
    col_groups: Groups
    row_groups: Groups
    transition: np.ndarray | None = field(default=None, repr=False)
    dynamics: tuple[dict, ...] = field(default=(), repr=False)

    def observed(self) -> MatrixSeries:
        return MatrixSeries(self.B @ self.U.values @ self.A.T, self.design)

    def conditional_mean(self, targets: Sequence[int], h: int = 1) -> np.ndarray:
        """
        E(X_s | X_{s-h}, X_{s-h-1}, ...) for each target s, shape (n, p, q).
        """
        if self.transition is None:
            raise ValidationError(f"design {self.design} has no closed-form conditional mean")
        if h < 1:
            raise ValidationError(f"horizon must be >= 1, got {h}")
        T, p, q = self.U.dims
        power = np.linalg.matrix_power(self.transition, h)
        out = np.empty((len(targets), p, q))
        for n, s in enumerate(targets):
            if not h <= s < T:
                raise ValidationError(f"target {s} needs {h} <= s < {T}")
            latent = (power @ self.U.values[s - h].ravel()).reshape(p, q)
            out[n] = self.B @ latent @ self.A.T
        return out

    def cond_mean(self, holdout: int, h: int = 1) -> np.ndarray:
        """Conditional means for the forecast targets of the last `holdout` steps."""
        T = self.U.T
        start = T - holdout
        return self.conditional_mean([start + i + h - 1 for i in range(holdout - h + 1)], h)

    def to_dict(self) -> dict:
        data = {
            "design": self.design,
            "seed": self.seed,
            "index_base": 0,
            "A": matrix_to_dict(self.A),
            "B": matrix_to_dict(self.B),
            "col_groups": [list(g) for g in self.col_groups],
            "row_groups": [list(g) for g in self.row_groups],
            "dynamics": list(self.dynamics),
        }
        if self.transition is not None:
            data["transition"] = matrix_to_dict(self.transition)
        return data


def gen_example1(
    T: int,
    p: int,
    q: int,
    seed: int,
    A: np.ndarray | None = None,
    B: np.ndarray | None = None,
) -> tuple[MatrixSeries, SimTruth]:
    """Independent ARMA(1, 2) latent entries, random mixing on both sides."""
    _check_dims(T, p, q)
    rng = np.random.default_rng(seed)
    A = _mixing(q, rng) if A is None else np.asarray(A, dtype=float)
    B = _mixing(p, rng) if B is None else np.asarray(B, dtype=float)
    U = np.empty((T, p, q))
    dynamics = []
    for i in range(p):
        for j in range(q):
            draw = gen_arma12(T, rng)
            U[:, i, j] = draw.values
            dynamics.append({"row": i, "col": j, "b": draw.b, "a1": draw.a1, "a2": draw.a2})
    truth = SimTruth(
        design="example1",
        seed=seed,
        A=A,
        B=B,
        U=MatrixSeries(U),
        col_groups=_singletons(q),
        row_groups=_singletons(p),
        dynamics=tuple(dynamics),
    )
    return truth.observed(), truth


def gen_example2(
    T: int, p: int, q: int, seed: int, A: np.ndarray | None = None
) -> tuple[MatrixSeries, SimTruth]:
    """
    Column-only model X_t = U_t A^T: columns 1-2 are lead copies of column 0,
    column 4 a lead copy of column 3, the rest independent.
    """
    _check_dims(T, p, q)
    if q < 5:
        raise ValidationError(f"example2 needs q >= 5, got {q}")
    rng = np.random.default_rng(seed)
    A = _mixing(q, rng) if A is None else np.asarray(A, dtype=float)
    U = np.empty((T, p, q))
    dynamics = []
    for i in range(p):
        first = gen_arma12(T + 2, rng)
        second = gen_arma12(T + 1, rng)
        U[:, i, 0] = first.values[:T]
        U[:, i, 1] = first.values[1 : T + 1]
        U[:, i, 2] = first.values[2 : T + 2]
        U[:, i, 3] = second.values[:T]
        U[:, i, 4] = second.values[1 : T + 1]
        dynamics.append({"row": i, "col": 0, "b": first.b, "a1": first.a1, "a2": first.a2})
        dynamics.append({"row": i, "col": 3, "b": second.b, "a1": second.a1, "a2": second.a2})
        for j in range(5, q):
            draw = gen_arma12(T, rng)
            U[:, i, j] = draw.values
            dynamics.append({"row": i, "col": j, "b": draw.b, "a1": draw.a1, "a2": draw.a2})
    truth = SimTruth(
        design="example2",
        seed=seed,
        A=A,
        B=np.eye(p),
        U=MatrixSeries(U),
        col_groups=_design_groups(q),
        row_groups=_singletons(p),
        dynamics=tuple(dynamics),
    )
    return truth.observed(), truth


def _block_transition(
    rows: int, cols: int, lam: float, rng: np.random.Generator
) -> tuple[np.ndarray, dict]:
    """One-step map of a row-major vectorized block and its description."""
    if rows > 1 and cols > 1:
        phi1 = _orthogonal(rows, rng)
        phi2 = _orthogonal(cols, rng)
        # vec_r(lam Phi1 U Phi2^T) = lam (Phi1 kron Phi2) vec_r(U)
        return lam * np.kron(phi1, phi2), {
            "kind": "mar1",
            "lambda": lam,
            "phi1": matrix_to_dict(phi1),
            "phi2": matrix_to_dict(phi2),
        }
    if rows > 1 or cols > 1:
        d = rows * cols
        M = rng.uniform(0.0, 1.0, size=(d, d))
        top = rng.uniform(0.1, 0.3)
        phi = M * (top / np.linalg.norm(M, 2))
        return phi, {"kind": "var1", "phi": matrix_to_dict(phi)}
    phi = rng.uniform(0.1, 0.3)
    return np.array([[phi]]), {"kind": "ar1", "phi": float(phi)}


def gen_example3(
    T: int,
    p: int,
    q: int,
    seed: int,
    lambdas: Sequence[float] = EXAMPLE3_LAMBDAS,
) -> tuple[MatrixSeries, SimTruth]:
    """
    Block-dynamic latent series: MAR(1) on the four matrix blocks (scaled by
    `lambdas` in row-major block order), VAR(1) on vector blocks, AR(1) on
    single cells; independent N(0, 1) innovations.
    """
    _check_dims(T, p, q)
    if p < 6 or q < 6:
        raise ValidationError(f"example3 needs p, q >= 6, got p={p}, q={q}")
    if len(lambdas) != 4:
        raise ValidationError("example3 needs four MAR scale coefficients")
    rng = np.random.default_rng(seed)
    A = _mixing(q, rng)
    B = _mixing(p, rng)
    row_groups = _design_groups(p)
    col_groups = _design_groups(q)

    G = np.zeros((p * q, p * q))
    dynamics = []
    for bi, rg in enumerate(row_groups):
        for bj, cg in enumerate(col_groups):
            lam = lambdas[2 * bi + bj] if bi < 2 and bj < 2 else 1.0
            K, info = _block_transition(len(rg), len(cg), lam, rng)
            idx = [r * q + c for r in rg for c in cg]
            G[np.ix_(idx, idx)] = K
            dynamics.append({"rows": list(rg), "cols": list(cg), **info})

    u = np.zeros(p * q)
    U = np.empty((T, p * q))
    innovations = rng.standard_normal((BURN_IN + T, p * q))
    for t in range(BURN_IN + T):
        u = G @ u + innovations[t]
        if t >= BURN_IN:
            U[t - BURN_IN] = u
    truth = SimTruth(
        design="example3",
        seed=seed,
        A=A,
        B=B,
        U=MatrixSeries(U.reshape(T, p, q)),
        col_groups=col_groups,
        row_groups=row_groups,
        transition=G,
        dynamics=tuple(dynamics),
    )
    return truth.observed(), truth


GENERATORS = {
    "example1": gen_example1,
    "example2": gen_example2,
    "example3": gen_example3,
}


def generate(design: str, T: int, p: int, q: int, seed: int) -> tuple[MatrixSeries, SimTruth]:
    try:
        generator = GENERATORS[design]
    except KeyError as exc:
        raise ValidationError(
            f"unknown design {design!r}; choose from {', '.join(GENERATORS)}"
        ) from exc
    return generator(T, p, q, seed)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def metric_D(a_hat: np.ndarray, a_star: np.ndarray) -> float:
    """
    Column-permutation and sign invariant distance in [0, 1] between two square
    transforms, from the largest entries of each row and column of a_hat^T a_star.
    """
    a_hat = np.asarray(a_hat, dtype=float)
    a_star = np.asarray(a_star, dtype=float)
    if a_hat.ndim != 2 or a_hat.shape[0] != a_hat.shape[1] or a_hat.shape != a_star.shape:
        raise ValidationError(
            f"metric_D needs square matrices of equal size, got {a_hat.shape} and {a_star.shape}"
        )
    q = a_hat.shape[0]
    if q == 1:
        return 0.0
    d = np.abs(a_hat.T @ a_star)
    col_max = d.max(axis=0)
    row_max = d.max(axis=1)
    if np.any(col_max == 0) or np.any(row_max == 0):
        log.warning("metric_D: zero row or column in the product; value capped at 1")
        return 1.0
    total = float(np.sum(1.0 / col_max + 1.0 / row_max - 2.0))
    return float(np.clip(total / (2.0 * q * (np.sqrt(q) - 1.0)), 0.0, 1.0))


def _basis(M: np.ndarray) -> np.ndarray:
    Q, _ = np.linalg.qr(np.asarray(M, dtype=float))
    return Q


def metric_D1(a_hat_groups: Sequence[np.ndarray], a_star_groups: Sequence[np.ndarray]) -> float:
    """
    Mean over blocks of 1 - tr(P_true P_hat) / rank(true block), with P the
    orthogonal projector onto each block's column space.
    """
    if len(a_hat_groups) != len(a_star_groups) or not a_star_groups:
        raise IncomparableSegmentationError(
            f"cannot compare {len(a_hat_groups)} estimated blocks with {len(a_star_groups)} true blocks"
        )
    values = []
    for hat, star in zip(a_hat_groups, a_star_groups):
        hat = np.asarray(hat, dtype=float)
        star = np.asarray(star, dtype=float)
        if hat.shape != star.shape:
            raise IncomparableSegmentationError(
                f"block shapes differ: {hat.shape} vs {star.shape}"
            )
        Q_hat, Q_star = _basis(hat), _basis(star)
        overlap = float(np.sum((Q_star.T @ Q_hat) ** 2))
        values.append(1.0 - overlap / Q_star.shape[1])
    return float(np.clip(np.mean(values), 0.0, 1.0))


class SegmentationOutcome(StrEnum):
    CORRECT = "correct"
    MERGING = "merging"
    SPLITTING = "splitting"
    OTHER = "other"


def _as_partition(groups: Iterable[Iterable[int]]) -> frozenset[frozenset[int]]:
    return frozenset(frozenset(int(k) for k in g) for g in groups)


def classify_segmentation(found, truth) -> SegmentationOutcome:
    """
    Correct when identical; Merging when exactly two true blocks were united;
    Splitting when exactly one true block was split in two; Other otherwise.
    """
    found_p, truth_p = _as_partition(found), _as_partition(truth)
    if frozenset().union(*found_p) != frozenset().union(*truth_p):
        raise ValidationError("partitions cover different index sets")
    if found_p == truth_p:
        return SegmentationOutcome.CORRECT
    only_found = found_p - truth_p
    only_truth = truth_p - found_p
    if len(only_found) == 1 and len(only_truth) == 2:
        (block,) = only_found
        if block == frozenset().union(*only_truth):
            return SegmentationOutcome.MERGING
    if len(only_truth) == 1 and len(only_found) == 2:
        (block,) = only_truth
        if block == frozenset().union(*only_found):
            return SegmentationOutcome.SPLITTING
    return SegmentationOutcome.OTHER


def align_to_truth(vectors: np.ndarray, target: np.ndarray, groups) -> np.ndarray:
    """
    One-to-one map from estimated columns to true column indices maximizing the
    total squared projection of each estimated column onto the span of its true
    block. Returns mapping[k] = true column index of estimated column k.
    """
    vectors = np.asarray(vectors, dtype=float)
    target = np.asarray(target, dtype=float)
    d = vectors.shape[1]
    if target.shape[1] != d:
        raise ValidationError(f"cannot align {d} columns with {target.shape[1]} targets")
    owner = np.empty(d, dtype=int)
    affinity = np.empty((d, len(groups)))
    norms = np.maximum(np.sum(vectors**2, axis=0), np.finfo(float).tiny)
    for g, members in enumerate(groups):
        owner[list(members)] = g
        Q = _basis(target[:, list(members)])
        affinity[:, g] = np.sum((Q.T @ vectors) ** 2, axis=0) / norms
    cost = -affinity[:, owner]
    rows, cols = linear_sum_assignment(cost)
    mapping = np.empty(d, dtype=int)
    mapping[rows] = cols
    return mapping


def map_groups(groups, mapping: np.ndarray) -> Groups:
    """Re-express groups of estimated columns in true column indices."""
    mapped = (tuple(sorted(int(mapping[k]) for k in g)) for g in groups)
    return tuple(sorted(mapped, key=lambda g: g[0]))
