from __future__ import annotations

import json

import numpy as np
import pytest

from core.config import PipelineSettings, Scheme
from core.forecasting import (
    Baseline,
    BlockModel,
    ModelKind,
    Oracle,
    TruthKind,
    baseline_forecasts,
    fit_ar1,
    fit_block,
    fit_mar1,
    fit_var1,
    forecast_block,
    model_for_block,
    rolling_backtest,
    truth_mean_for_targets,
)
from core.matcore import MatrixSeries
from core.simgen import gen_example3
from utils.errors import InsufficientDataError, ValidationError

SETTINGS = PipelineSettings(tau1=5, max_ar_order=2)


def _ar1(T: int, phi: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    z = np.zeros(T + 100)
    e = rng.standard_normal(T + 100)
    for t in range(1, T + 100):
        z[t] = phi * z[t - 1] + e[t]
    return z[100:]


def _mar_series(T: int, phi1: np.ndarray, phi2: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    rows, cols = phi1.shape[0], phi2.shape[0]
    U = np.zeros((T + 100, rows, cols))
    for t in range(1, T + 100):
        U[t] = phi1 @ U[t - 1] @ phi2.T + rng.standard_normal((rows, cols))
    return U[100:]


def _panel(T: int, p: int, q: int, seed: int) -> MatrixSeries:
    rng = np.random.default_rng(seed)
    values = np.zeros((T, p, q))
    e = rng.standard_normal((T, p, q))
    for t in range(1, T):
        values[t] = 0.5 * values[t - 1] + e[t]
    return MatrixSeries(values + 3.0)


def test_model_for_block_shapes() -> None:
    assert model_for_block((1, 1)) is ModelKind.AR1
    assert model_for_block((1, 4)) is ModelKind.VAR1
    assert model_for_block((3, 1)) is ModelKind.VAR1
    assert model_for_block((2, 3)) is ModelKind.MAR1
    with pytest.raises(ValidationError):
        model_for_block((0, 2))


def test_fit_ar1_recovers_coefficient_and_guards() -> None:
    model = fit_ar1(_ar1(3000, 0.6, seed=0) + 5.0)
    assert abs(model.phi - 0.6) < 0.05
    assert abs(model.intercept[0, 0] - 5.0) < 0.2
    flat = fit_ar1(np.ones(20))
    assert flat.phi == 0.0 and flat.warning
    with pytest.raises(InsufficientDataError):
        fit_ar1([1.0, 2.0])


def test_fit_ar1_clamps_explosive_estimates() -> None:
    model = fit_ar1(np.arange(50.0) ** 2)
    assert model.phi <= 0.999


def test_var1_with_one_series_collapses_to_ar1() -> None:
    z = _ar1(400, 0.4, seed=1)
    var = fit_var1(z[:, None])
    ar = fit_ar1(z)
    assert var.kind is ModelKind.AR1
    assert var.phi == pytest.approx(ar.phi, abs=1e-12)


def test_var1_recovers_diagonal_system() -> None:
    v = np.column_stack([_ar1(3000, 0.7, seed=2), _ar1(3000, -0.3, seed=3)])
    model = fit_var1(v)
    np.testing.assert_allclose(model.coeffs[0], np.diag([0.7, -0.3]), atol=0.06)
    with pytest.raises(ValidationError):
        fit_var1(v, shape=(3, 1))
    with pytest.raises(InsufficientDataError):
        fit_var1(np.zeros((3, 4)))


def test_fit_mar1_objective_never_increases_and_recovers_kronecker() -> None:
    phi1 = np.array([[0.6, 0.2], [-0.1, 0.5]])
    phi2 = np.array([[0.9, 0.0, 0.1], [0.2, 0.7, 0.0], [0.0, -0.2, 0.8]])
    U = _mar_series(2000, phi1, phi2, seed=4)
    model = fit_mar1(U)
    history = np.array(model.objective_history)
    assert np.all(np.diff(history) <= 1e-9 * history[:-1])
    est1, est2 = model.coeffs
    assert np.linalg.norm(est1) == pytest.approx(np.sqrt(2))
    np.testing.assert_allclose(np.kron(est1, est2), np.kron(phi1, phi2), atol=0.1)


def test_fit_mar1_on_noise_is_near_zero() -> None:
    U = np.random.default_rng(5).standard_normal((2000, 3, 3))
    est1, est2 = fit_mar1(U).coeffs
    assert np.linalg.norm(est1, 2) * np.linalg.norm(est2, 2) < 0.3


def test_fit_mar1_needs_matrix_blocks() -> None:
    with pytest.raises(ValidationError):
        fit_mar1(np.zeros((50, 1, 3)))
    with pytest.raises(InsufficientDataError):
        fit_mar1(np.zeros((5, 2, 2)))


def test_fit_block_dispatches_on_shape() -> None:
    rng = np.random.default_rng(6)
    assert fit_block(rng.standard_normal((60, 1, 1))).kind is ModelKind.AR1
    assert fit_block(rng.standard_normal((60, 1, 3))).kind is ModelKind.VAR1
    assert fit_block(rng.standard_normal((60, 2, 2))).kind is ModelKind.MAR1


def test_forecast_block_iterates_the_one_step_map() -> None:
    model = BlockModel(
        kind=ModelKind.AR1,
        shape=(1, 1),
        coeffs=(np.array([[0.5]]),),
        intercept=np.array([[1.0]]),
    )
    assert forecast_block(model, np.array([[3.0]]), h=1)[0, 0] == pytest.approx(2.0)
    assert forecast_block(model, np.array([[3.0]]), h=2)[0, 0] == pytest.approx(1.5)
    with pytest.raises(ValidationError):
        forecast_block(model, np.array([[3.0]]), h=0)
    with pytest.raises(ValidationError):
        BlockModel(kind=ModelKind.MAR1, shape=(1, 1), coeffs=(), intercept=np.zeros((1, 1)))


def test_rolling_backtest_refit_report() -> None:
    X = _panel(90, 2, 3, seed=7)
    events: list[str] = []
    report = rolling_backtest(
        X, holdout=10, horizon=1, scheme=Scheme.REFIT, settings=SETTINGS,
        progress_cb=lambda event, payload: events.append(event),
    )
    assert report.method == "segmentation"
    assert report.targets == tuple(range(80, 90))
    assert report.n_origins == 10
    assert report.truth_kind is TruthKind.REALIZED
    assert report.mse == pytest.approx(report.per_cell_errors.mean())
    assert report.mse == pytest.approx(np.mean(report.step_mse))
    np.testing.assert_array_equal(report.truth, X.values[80:90])
    assert report.initial_fit is not None
    assert events[0] == "start" and events[-1] == "finished"
    assert events.count("step_done") == 10
    weeks = report.weekly()
    assert [w["n"] for w in weeks] == [7, 3]
    assert weeks[1]["first_target"] == 87
    assert weeks[0]["mspe"] == pytest.approx(np.mean(report.step_mse[:7]))
    json.dumps(report.to_dict())


def test_rolling_backtest_fixed_scheme_and_two_steps() -> None:
    X = _panel(70, 2, 2, seed=8)
    report = rolling_backtest(X, holdout=5, horizon=2, scheme=Scheme.FIXED, settings=SETTINGS)
    assert report.scheme is Scheme.FIXED
    assert report.targets == (66, 67, 68, 69)
    single = rolling_backtest(X, holdout=1, horizon=1, settings=SETTINGS)
    assert single.n_origins == 1


def test_rolling_backtest_argument_checks() -> None:
    X = _panel(40, 2, 2, seed=9)
    with pytest.raises(ValidationError):
        rolling_backtest(X, holdout=40, settings=SETTINGS)
    with pytest.raises(ValidationError):
        rolling_backtest(X, holdout=3, horizon=4, settings=SETTINGS)
    with pytest.raises(ValidationError):
        rolling_backtest(X, holdout=3, settings=SETTINGS, truth_mean=np.zeros((2, 2, 2)))
    with pytest.raises(ValidationError):
        rolling_backtest(X, holdout=3, settings=SETTINGS, oracle=Oracle.O1)


@pytest.mark.parametrize("kind", list(Baseline))
def test_baselines_run_on_raw_series(kind: Baseline) -> None:
    X = _panel(60, 2, 2, seed=10)
    report = baseline_forecasts(X, holdout=4, horizon=1, kind=kind)
    assert report.method == kind.value
    assert report.n_origins == 4
    assert np.isfinite(report.mse)


def test_conditional_mean_truth_and_oracles() -> None:
    X, truth = gen_example3(140, 6, 6, seed=3)
    holdout = 4
    means = truth.cond_mean(holdout, 1)
    seg = rolling_backtest(X, holdout, settings=SETTINGS, truth_mean=means)
    assert seg.truth_kind is TruthKind.CONDITIONAL_MEAN
    np.testing.assert_array_equal(seg.truth, means)
    for oracle in Oracle:
        report = rolling_backtest(
            X, holdout, settings=SETTINGS, truth_mean=means, oracle=oracle, sim_truth=truth
        )
        assert report.method == oracle.value
        assert np.isfinite(report.mse)


def test_truth_mean_for_targets_selects_matching_rows() -> None:
    X = _panel(30, 2, 2, seed=11)
    table = np.arange(29 * 4, dtype=float).reshape(29, 2, 2)
    # rows belong to t = 2..30 (1-based)
    picked = truth_mean_for_targets(table, 2, X, holdout=3)
    np.testing.assert_array_equal(picked, table[[26, 27, 28]])
    with pytest.raises(ValidationError):
        truth_mean_for_targets(table[:10], 2, X, holdout=3)
    with pytest.raises(ValidationError):
        truth_mean_for_targets(np.zeros((29, 3, 2)), 2, X, holdout=3)
