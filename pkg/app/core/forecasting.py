"""
Per-block AR(1) / VAR(1) / MAR(1) models, iterated forecasts and rolling-origin
backtests of the segmentation pipeline, its oracles and the direct baselines.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from scipy import linalg

from core.base import AR1_CLAMP, MAR_MAX_ITER, MAR_REL_TOL, WEEK_LENGTH
from core.config import PipelineSettings, Scheme
from core.estimation import covariance_pair, estimate_transforms
from core.matcore import MatrixSeries, center, matrix_to_dict, sqrt_sym
from core.simgen import SimTruth, align_to_truth
from core.transform import FittedTransform, TransformPair, fit_transform, proxy_targets
from utils.errors import InsufficientDataError, NumericError, ValidationError

log = logging.getLogger(__name__)

ProgressCallback = Callable[[str, dict], None]

RIDGE_SCALE = 1e-8
COND_LIMIT = 1e12


class ModelKind(StrEnum):
    AR1 = "ar1"
    VAR1 = "var1"
    MAR1 = "mar1"


def model_for_block(shape: tuple[int, int]) -> ModelKind:
    """AR1 for 1x1, VAR1 when exactly one side is 1, MAR1 otherwise."""
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise ValidationError(f"block shape must be positive, got {shape}")
    if rows == 1 and cols == 1:
        return ModelKind.AR1
    if rows == 1 or cols == 1:
        return ModelKind.VAR1
    return ModelKind.MAR1


@dataclass(frozen=True, slots=True)
class BlockModel:
    """
    Fitted one-step map on the centred block plus the block mean.

    coeffs: AR1 -> (1x1 phi,), VAR1 -> (Phi over the row-major vectorized block,),
    MAR1 -> (Phi1 rows x rows, Phi2 cols x cols).
    """

    kind: ModelKind
    shape: tuple[int, int]
    coeffs: tuple[np.ndarray, ...] = field(repr=False)
    intercept: np.ndarray = field(repr=False)
    converged: bool = True
    warning: str | None = None
    objective_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if model_for_block(self.shape) is not self.kind:
            raise ValidationError(f"{self.kind.value} model cannot describe a {self.shape} block")
        if np.shape(self.intercept) != self.shape:
            raise ValidationError(f"intercept must have shape {self.shape}")

    @property
    def phi(self) -> float:
        if self.kind is not ModelKind.AR1:
            raise ValidationError("phi is defined for AR1 models only")
        return float(self.coeffs[0][0, 0])

    def step(self, centred: np.ndarray) -> np.ndarray:
        """One application of the fitted map to a centred block value."""
        if self.kind is ModelKind.AR1:
            return self.coeffs[0][0, 0] * centred
        if self.kind is ModelKind.VAR1:
            return (self.coeffs[0] @ centred.ravel()).reshape(self.shape)
        phi1, phi2 = self.coeffs
        return phi1 @ centred @ phi2.T

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "shape": list(self.shape),
            "coeffs": [matrix_to_dict(c) for c in self.coeffs],
            "intercept": matrix_to_dict(self.intercept),
            "converged": self.converged,
            "warning": self.warning,
        }


def _normal_solve(gram: np.ndarray, cross: np.ndarray) -> np.ndarray:
    """
    cross @ gram^-1 for a symmetric PSD gram, ridged by 1e-8 trace when ill-conditioned.
    """
    trace = float(np.trace(gram))
    if trace <= 0:
        return np.zeros_like(cross)
    if np.linalg.cond(gram) > COND_LIMIT:
        gram = gram + RIDGE_SCALE * trace * np.eye(gram.shape[0])
    try:
        return linalg.solve(gram, cross.T, assume_a="pos").T
    except linalg.LinAlgError as exc:
        raise NumericError(f"normal equations could not be solved: {exc}") from exc


def fit_ar1(z) -> BlockModel:
    """phi = sum z_t z_{t-1} / sum z_{t-1}^2 on the centred series, |phi| <= 0.999."""
    z = np.asarray(z, dtype=float).ravel()
    if z.size < 3:
        raise InsufficientDataError(f"AR(1) needs at least 3 observations, got {z.size}")
    mean = float(z.mean())
    c = z - mean
    denom = float(c[:-1] @ c[:-1])
    warning = None
    if denom == 0:
        warning = "zero lagged variance; phi set to 0"
        log.warning("fit_ar1: %s", warning)
        phi = 0.0
    else:
        phi = float(np.clip((c[1:] @ c[:-1]) / denom, -AR1_CLAMP, AR1_CLAMP))
    return BlockModel(
        kind=ModelKind.AR1,
        shape=(1, 1),
        coeffs=(np.array([[phi]]),),
        intercept=np.array([[mean]]),
        warning=warning,
    )


def fit_var1(v, shape: tuple[int, int] | None = None) -> BlockModel:
    """
    Least-squares VAR(1) on a (T, d) array of vectors; d = 1 gives fit_ar1.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    T, d = v.shape
    if d == 1:
        return fit_ar1(v[:, 0])
    shape = shape or (d, 1)
    if shape[0] * shape[1] != d:
        raise ValidationError(f"block shape {shape} does not hold {d} values")
    if T < d + 2:
        raise InsufficientDataError(f"VAR(1) in {d} dimensions needs T >= {d + 2}, got {T}")
    mean = v.mean(axis=0)
    c = v - mean
    lead, lag = c[1:], c[:-1]
    phi = _normal_solve(lag.T @ lag, lead.T @ lag)
    return BlockModel(
        kind=ModelKind.VAR1,
        shape=shape,
        coeffs=(phi,),
        intercept=mean.reshape(shape),
    )


def _mar_objective(lead: np.ndarray, lag: np.ndarray, phi1: np.ndarray, phi2: np.ndarray) -> float:
    resid = lead - phi1 @ lag @ phi2.T
    return float(np.sum(resid**2))


def fit_mar1(U, max_iter: int = MAR_MAX_ITER, rel_tol: float = MAR_REL_TOL) -> BlockModel:
    """
    Alternating least squares for U_t = Phi1 U_{t-1} Phi2^T + E_t, starting at Phi2 = I.

    The objective is checked to be non-increasing after every half step; on exit
    the scale is normalized so that ||Phi1||_F = sqrt(rows).
    """
    values = U.values if isinstance(U, MatrixSeries) else np.asarray(U, dtype=float)
    if values.ndim != 3:
        raise ValidationError(f"MAR(1) needs a (T, rows, cols) array, got shape {values.shape}")
    T, rows, cols = values.shape
    if rows < 2 or cols < 2:
        raise ValidationError(f"MAR(1) needs both dimensions > 1, got {rows} x {cols}; use VAR(1)")
    if T < rows + cols + 2:
        raise InsufficientDataError(
            f"MAR(1) on {rows} x {cols} blocks needs T >= {rows + cols + 2}, got {T}"
        )
    mean = values.mean(axis=0)
    c = values - mean
    lead, lag = c[1:], c[:-1]

    phi1 = np.zeros((rows, rows))
    phi2 = np.eye(cols)
    previous = float(np.sum(lead**2))
    history: list[float] = []
    converged = False
    for iteration in range(1, max_iter + 1):
        Z = lag @ phi2.T
        phi1 = _normal_solve(
            np.einsum("tij,tkj->ik", Z, Z), np.einsum("tij,tkj->ik", lead, Z)
        )
        half = _mar_objective(lead, lag, phi1, phi2)
        W = phi1 @ lag
        phi2 = _normal_solve(
            np.einsum("tji,tjk->ik", W, W), np.einsum("tji,tjk->ik", lead, W)
        )
        current = _mar_objective(lead, lag, phi1, phi2)
        for value in (half, current):
            if value > previous + 1e-9 * max(previous, 1.0):
                raise NumericError(
                    f"MAR(1) objective increased at iteration {iteration}: {previous} -> {value}"
                )
            history.append(value)
            previous = min(previous, value)
        start = history[-3] if len(history) >= 3 else float(np.sum(lead**2))
        if start <= 0 or (start - current) / start < rel_tol:
            converged = True
            log.debug("fit_mar1: converged after %d iterations", iteration)
            break

    warning = None
    if not converged:
        warning = f"ALS did not converge in {max_iter} iterations"
        log.warning("fit_mar1: %s", warning)
    norm = float(np.linalg.norm(phi1))
    if norm > 0:
        scale = np.sqrt(rows) / norm
        phi1 = phi1 * scale
        phi2 = phi2 / scale
    return BlockModel(
        kind=ModelKind.MAR1,
        shape=(rows, cols),
        coeffs=(phi1, phi2),
        intercept=mean,
        converged=converged,
        warning=warning,
        objective_history=tuple(history),
    )


def fit_block(values: np.ndarray) -> BlockModel:
    """Fit the model matching the block shape of a (T, rows, cols) array."""
    T, rows, cols = values.shape
    kind = model_for_block((rows, cols))
    if kind is ModelKind.AR1:
        return fit_ar1(values[:, 0, 0])
    if kind is ModelKind.VAR1:
        return fit_var1(values.reshape(T, rows * cols), (rows, cols))
    return fit_mar1(values)


def forecast_block(model: BlockModel, last: np.ndarray, h: int = 1) -> np.ndarray:
    """Iterate the one-step map h times on the centred block and re-add the mean."""
    if h < 1:
        raise ValidationError(f"horizon must be >= 1, got {h}")
    value = np.asarray(last, dtype=float).reshape(model.shape) - model.intercept
    for _ in range(h):
        value = model.step(value)
    return value + model.intercept


# ---------------------------------------------------------------------------
# Rolling-origin evaluation
# ---------------------------------------------------------------------------


class TruthKind(StrEnum):
    REALIZED = "realized"
    CONDITIONAL_MEAN = "conditional-mean"


class Oracle(StrEnum):
    """O1: true blocks, estimated transform. O2: true blocks and true transform."""

    O1 = "o1"
    O2 = "o2"


class Baseline(StrEnum):
    VAR1 = "var1"
    MAR1 = "mar1"
    AR1 = "ar1"

    @property
    def label(self) -> str:
        return {"var1": "var1_stacked", "mar1": "mar1_direct", "ar1": "ar1_per_cell"}[self.value]


@dataclass(frozen=True, slots=True)
class ForecastReport:
    method: str
    horizon: int
    holdout: int
    scheme: Scheme
    truth_kind: TruthKind
    targets: tuple[int, ...]
    predictions: np.ndarray = field(repr=False)
    truth: np.ndarray = field(repr=False)
    per_cell_errors: np.ndarray = field(repr=False)
    mse: float
    step_mse: tuple[float, ...] = field(repr=False)
    initial_fit: FittedTransform | None = field(default=None, repr=False, compare=False)

    @property
    def n_origins(self) -> int:
        return len(self.targets)

    def weekly(self, week_length: int = WEEK_LENGTH) -> list[dict]:
        """Mean of the per-origin errors over consecutive runs of `week_length` origins."""
        if week_length < 1:
            raise ValidationError(f"week length must be >= 1, got {week_length}")
        rows = []
        for week, start in enumerate(range(0, self.n_origins, week_length)):
            chunk = self.step_mse[start : start + week_length]
            rows.append(
                {
                    "week": week,
                    "first_target": self.targets[start],
                    "last_target": self.targets[start + len(chunk) - 1],
                    "n": len(chunk),
                    "mspe": float(np.mean(chunk)),
                }
            )
        return rows

    def to_dict(self) -> dict:
        data = {
            "method": self.method,
            "horizon": self.horizon,
            "holdout": self.holdout,
            "scheme": self.scheme.value,
            "truth_kind": self.truth_kind.value,
            "n_origins": self.n_origins,
            "targets": list(self.targets),
            "mse": self.mse,
            "per_cell_errors": matrix_to_dict(self.per_cell_errors),
            "step_mse": list(self.step_mse),
        }
        if self.initial_fit is not None:
            data["col_groups"] = [list(g) for g in self.initial_fit.col_seg.groups]
            data["row_groups"] = [list(g) for g in self.initial_fit.row_seg.groups]
        return data


def _targets(T: int, holdout: int, horizon: int) -> list[int]:
    if holdout < 1 or horizon < 1:
        raise ValidationError("holdout and horizon must be >= 1")
    if horizon > holdout:
        raise ValidationError(f"horizon {horizon} exceeds holdout {holdout}")
    if holdout >= T:
        raise ValidationError(f"holdout {holdout} must be smaller than T = {T}")
    if T - holdout < 3:
        raise InsufficientDataError(f"training window of {T - holdout} observations is too short")
    start = T - holdout
    return [start + i + horizon - 1 for i in range(holdout - horizon + 1)]


def truth_mean_for_targets(
    values: np.ndarray, first_t: int, X: MatrixSeries, holdout: int, horizon: int = 1
) -> np.ndarray:
    """
    Rows of a conditional-mean table whose first row belongs to the 1-based
    time `first_t`, picked to match the forecast targets of X.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 3 or values.shape[1:] != (X.p, X.q):
        raise ValidationError(
            f"conditional means have shape {values.shape}, expected (n, {X.p}, {X.q})"
        )
    targets = _targets(X.T, holdout, horizon)
    rows = [s + 1 - first_t for s in targets]
    if rows[0] < 0 or rows[-1] >= values.shape[0]:
        raise ValidationError(
            f"conditional means cover t={first_t}..{first_t + values.shape[0] - 1} "
            f"but the targets need t={targets[0] + 1}..{targets[-1] + 1}"
        )
    return values[rows]


def _truth_values(
    X: MatrixSeries, targets: list[int], truth_mean: np.ndarray | None
) -> tuple[np.ndarray, TruthKind]:
    if truth_mean is None:
        return X.values[targets], TruthKind.REALIZED
    truth_mean = np.asarray(truth_mean, dtype=float)
    expected = (len(targets), X.p, X.q)
    if truth_mean.shape != expected:
        raise ValidationError(
            f"conditional-mean truth has shape {truth_mean.shape}, expected {expected}"
        )
    return truth_mean, TruthKind.CONDITIONAL_MEAN


def _evaluate(
    X: MatrixSeries,
    holdout: int,
    horizon: int,
    predict: Callable[[int], np.ndarray],
    truth_mean: np.ndarray | None,
    method: str,
    scheme: Scheme,
    progress_cb: ProgressCallback | None,
) -> tuple[list[int], np.ndarray, np.ndarray, TruthKind, np.ndarray, np.ndarray]:
    targets = _targets(X.T, holdout, horizon)
    truth, truth_kind = _truth_values(X, targets, truth_mean)

    def _emit(event: str, **payload) -> None:
        if progress_cb is not None:
            progress_cb(event, payload)

    _emit("start", method=method, total=len(targets))
    predictions = np.empty_like(truth)
    for n, target in enumerate(targets):
        n_obs = target - horizon + 1
        predictions[n] = predict(n_obs)
        _emit("step_done", method=method, done=n + 1, total=len(targets))
    sq = (predictions - truth) ** 2
    per_cell = sq.mean(axis=0)
    step = sq.mean(axis=(1, 2))
    _emit("finished", method=method, total=len(targets), mse=float(per_cell.mean()))
    return targets, predictions, truth, truth_kind, per_cell, step


def _report(
    method: str,
    horizon: int,
    holdout: int,
    scheme: Scheme,
    evaluated,
    initial_fit: FittedTransform | None = None,
) -> ForecastReport:
    targets, predictions, truth, truth_kind, per_cell, step = evaluated
    report = ForecastReport(
        method=method,
        horizon=horizon,
        holdout=holdout,
        scheme=scheme,
        truth_kind=truth_kind,
        targets=tuple(targets),
        predictions=predictions,
        truth=truth,
        per_cell_errors=per_cell,
        mse=float(per_cell.mean()),
        step_mse=tuple(float(s) for s in step),
        initial_fit=initial_fit,
    )
    log.info(
        "%s: %d origin(s), h=%d, %s truth, MSE %.6g",
        method,
        report.n_origins,
        horizon,
        truth_kind.value,
        report.mse,
    )
    return report


def forecast_latent(pair: TransformPair, history: np.ndarray, h: int) -> np.ndarray:
    """Fit every latent block on the projected history and map the h-step forecast back."""
    latent = pair.project(history)
    predicted = np.empty(latent.shape[1:])
    for rows, cols in pair.block_slices():
        model = fit_block(latent[:, rows, cols])
        predicted[rows, cols] = forecast_block(model, latent[-1, rows, cols], h)
    return pair.reconstruct(predicted)


def _positional(groups) -> tuple[tuple[int, ...], ...]:
    out, start = [], 0
    for g in groups:
        out.append(tuple(range(start, start + len(g))))
        start += len(g)
    return tuple(out)


def _ordered_by_truth(vectors: np.ndarray, target: np.ndarray, groups) -> np.ndarray:
    mapping = align_to_truth(vectors, target, groups)
    # position of each true column -> the eigenvector assigned to it
    owner = {int(column): k for k, column in enumerate(mapping)}
    order = [owner[column] for g in groups for column in sorted(g)]
    return vectors[:, order]


def oracle_pair(
    train: MatrixSeries,
    truth: SimTruth,
    oracle: Oracle,
    settings: PipelineSettings,
) -> TransformPair:
    """
    Transform with the true blocks: O1 orders estimated eigenvectors by their
    best match to the true blocks; O2 uses the nearest orthogonal matrices to
    the normalized true transforms.
    """
    Xc, _ = center(train)
    latent = MatrixSeries(truth.U.values[: train.T])
    a_proxy, b_proxy = proxy_targets(truth.A, truth.B, latent, train)
    col_groups, row_groups = truth.col_groups, truth.row_groups
    if Oracle(oracle) is Oracle.O2:
        sigma1, sigma2 = covariance_pair(Xc)
        a_orth = linalg.polar(a_proxy)[0][:, [k for g in col_groups for k in g]]
        b_orth = linalg.polar(b_proxy)[0][:, [k for g in row_groups for k in g]]
        return TransformPair.from_covariances(
            a_orth, b_orth, sigma1, sigma2, _positional(col_groups), _positional(row_groups)
        )
    col_w, row_w = estimate_transforms(
        Xc, settings.tau0, settings.eig_transform, settings.w_method
    )
    return TransformPair(
        a_star=_ordered_by_truth(col_w.eig.eigenvectors, a_proxy, col_groups),
        b_star=_ordered_by_truth(row_w.eig.eigenvectors, b_proxy, row_groups),
        sigma1_inv_sqrt=col_w.sigma_inv_sqrt,
        sigma2_inv_sqrt=row_w.sigma_inv_sqrt,
        sigma1_sqrt=sqrt_sym(col_w.sigma),
        sigma2_sqrt=sqrt_sym(row_w.sigma),
        col_groups=_positional(col_groups),
        row_groups=_positional(row_groups),
    )


def rolling_backtest(
    X: MatrixSeries,
    holdout: int,
    horizon: int = 1,
    scheme: Scheme = Scheme.REFIT,
    settings: PipelineSettings | None = None,
    truth_mean: np.ndarray | None = None,
    oracle: Oracle | None = None,
    sim_truth: SimTruth | None = None,
    progress_cb: ProgressCallback | None = None,
) -> ForecastReport:
    """
    Forecast the last `holdout` observations from rolling origins.

    With origin index n_obs the first n_obs observations are used: REFIT
    re-estimates transform and blocks each time, FIXED keeps the transform
    fitted on the initial training window and refits only the block models.
    `truth_mean`, aligned with the forecast targets, switches the comparison
    from realized values to conditional means.
    """
    settings = (settings or PipelineSettings()).validate()
    scheme = Scheme(scheme)
    if oracle is not None and sim_truth is None:
        raise ValidationError("oracle forecasts need the simulation truth")
    if sim_truth is not None and sim_truth.U.dims != X.dims:
        raise ValidationError("simulation truth does not match the series")
    method = Oracle(oracle).value if oracle is not None else "segmentation"
    T_train = X.T - holdout
    cache: dict[str, object] = {}

    def _pair(n_obs: int) -> TransformPair:
        if scheme is Scheme.FIXED and "pair" in cache:
            return cache["pair"]  # type: ignore[return-value]
        train = MatrixSeries(X.values[:n_obs], X.label)
        if oracle is not None:
            pair = oracle_pair(train, sim_truth, oracle, settings)
        else:
            fitted = fit_transform(train, settings)
            if n_obs == T_train:
                cache["fit"] = fitted
            pair = fitted.pair
        cache["pair"] = pair
        return pair

    def _predict(n_obs: int) -> np.ndarray:
        pair = _pair(n_obs)
        return forecast_latent(pair, X.values[:n_obs], horizon)

    evaluated = _evaluate(X, holdout, horizon, _predict, truth_mean, method, scheme, progress_cb)
    return _report(method, horizon, holdout, scheme, evaluated, cache.get("fit"))  # type: ignore[arg-type]


def baseline_forecasts(
    X: MatrixSeries,
    holdout: int,
    horizon: int,
    kind: Baseline,
    truth_mean: np.ndarray | None = None,
    progress_cb: ProgressCallback | None = None,
) -> ForecastReport:
    """
    Same rolling protocol on the raw series: VAR(1) on vec(X_t), a model fitted
    to X_t directly (MAR(1) when p, q > 1), or AR(1) per cell.
    """
    kind = Baseline(kind)
    p, q = X.p, X.q

    def _predict(n_obs: int) -> np.ndarray:
        history = X.values[:n_obs]
        if kind is Baseline.VAR1:
            model = fit_var1(history.reshape(n_obs, p * q), (p * q, 1))
            return forecast_block(model, history[-1].reshape(p * q, 1), horizon).reshape(p, q)
        if kind is Baseline.MAR1:
            model = fit_block(history)
            return forecast_block(model, history[-1], horizon)
        out = np.empty((p, q))
        for i in range(p):
            for j in range(q):
                model = fit_ar1(history[:, i, j])
                out[i, j] = forecast_block(model, history[-1, i, j], horizon)[0, 0]
        return out

    evaluated = _evaluate(
        X, holdout, horizon, _predict, truth_mean, kind.value, Scheme.REFIT, progress_cb
    )
    return _report(kind.value, horizon, holdout, Scheme.REFIT, evaluated)
