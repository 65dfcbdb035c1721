"""
Command-line interface for matseg.
"""

from __future__ import annotations

import logging
import sys
import tomllib
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Annotated, Any

import typer
from rich.console import Console
from rich.markup import escape

from cli.ui import CLIRuntimeUI
from core.config import RunConfig, Scheme
from core.exporter import ReportExporter, sidecar
from core.forecasting import Baseline, baseline_forecasts, rolling_backtest, truth_mean_for_targets
from core.parser import SeriesReader, read_transform_pair
from core.replication import run_replications
from core.simgen import generate
from core.transform import fit_transform, from_latent, to_latent
from core.writer import SeriesWriter, document, write_json
from utils.errors import DataError, MatsegError, NumericError, ValidationError
from utils.logging_cfg import LOG_FILE, configure_logging

logger = logging.getLogger(__name__)
console = Console(stderr=True)


@dataclass(slots=True)
class CLIState:
    debug: bool
    progress: bool | None
    config: Path | None = None
    threads: int | None = None


app = typer.Typer(
    name="matseg",
    help="Decorrelate, segment and forecast matrix-valued time series.",
    no_args_is_help=True,
    rich_markup_mode="rich",
    add_completion=False,
)


def _project_version() -> str:
    try:
        return metadata.version("matseg")
    except metadata.PackageNotFoundError:
        pyproject_path = Path(__file__).resolve().parents[2] / "pyproject.toml"
        if pyproject_path.exists():
            project = tomllib.loads(pyproject_path.read_text(encoding="utf-8")).get(
                "project", {}
            )
            return str(project.get("version", "unknown"))
    return "unknown"


def _version_callback(value: bool) -> None:
    if not value:
        return
    console.print(f"[bold cyan]matseg[/bold cyan] [green]{_project_version()}[/green]")
    raise typer.Exit()


def _state(ctx: typer.Context) -> CLIState:
    if isinstance(ctx.obj, CLIState):
        return ctx.obj
    return CLIState(debug=False, progress=None)


def _progress_enabled(progress: bool | None) -> bool:
    if progress is None:
        return console.is_terminal and sys.stderr.isatty()
    return progress


def _validate_input_file(path: str | Path | None, option_name: str) -> None:
    if path is None:
        return
    path = Path(path)
    if not path.exists():
        raise typer.BadParameter(f"File not found: {path}", param_hint=option_name)
    if not path.is_file():
        raise typer.BadParameter(f"Expected a file path: {path}", param_hint=option_name)


def _resolve(ctx: typer.Context, command: str, flags: dict[str, Any]) -> RunConfig:
    state = _state(ctx)
    flags = {**flags, "threads": state.threads}
    return RunConfig.resolve(command, flags, state.config)


_ERROR_TITLES = (
    (ValidationError, "Validation error"),
    (DataError, "Data error"),
    (NumericError, "Numeric error"),
)


@contextmanager
def _command_errors() -> Iterator[None]:
    """Map library errors to their exit codes (2 validation, 3 data, 4 numeric)."""
    try:
        yield
    except (typer.Exit, typer.BadParameter):
        raise
    except MatsegError as exc:
        title = next((t for cls, t in _ERROR_TITLES if isinstance(exc, cls)), "Error")
        console.print(f"[bold red]{title}:[/bold red] {escape(str(exc))}")
        raise typer.Exit(code=exc.exit_code) from exc
    except Exception as exc:
        logger.exception("Unexpected error")
        console.print(f"[bold red]Unexpected error:[/bold red] {escape(str(exc))}")
        raise typer.Exit(code=1) from exc


# Options shared by every command that runs the pipeline; None means "use the default".
Tau0Opt = Annotated[
    int | None,
    typer.Option("--tau0", help="Largest lag in the W accumulation. Default 5.", rich_help_panel="Pipeline Options"),
]
Tau1Opt = Annotated[
    int | None,
    typer.Option("--tau1", help="Largest lag of the cross-correlation scan. Default 15.", rich_help_panel="Pipeline Options"),
]
CrOpt = Annotated[
    float | None,
    typer.Option("--c-r", help="Fraction of pairs searched by the ratio selector. Default 0.75.", rich_help_panel="Pipeline Options"),
]
RhoFloorOpt = Annotated[
    float | None,
    typer.Option("--rho-floor", help="Selected correlations below this give no pairs. Default 0.05.", rich_help_panel="Pipeline Options"),
]
SelectorOpt = Annotated[
    str | None,
    typer.Option("--selector", help="`ratio` or `threshold:RHO0`.", rich_help_panel="Pipeline Options"),
]
PrewhitenOpt = Annotated[
    bool | None,
    typer.Option("--prewhiten/--no-prewhiten", help="AR-prewhiten columns before correlating. Default on.", rich_help_panel="Pipeline Options"),
]
EigTransformOpt = Annotated[
    str | None,
    typer.Option("--eig-transform", help="`identity`, `log1p` or `power:ALPHA` applied to W summands.", rich_help_panel="Pipeline Options"),
]
MaxArOpt = Annotated[
    int | None,
    typer.Option("--max-ar-order", help="Largest AR order tried when prewhitening. Default 5.", rich_help_panel="Pipeline Options"),
]
WMethodOpt = Annotated[
    str | None,
    typer.Option("--w-method", help="`optimized` or `naive` W accumulation.", rich_help_panel="Pipeline Options"),
]
InputOpt = Annotated[
    Path | None,
    typer.Option("--input", help="Series CSV with header t,row,col,value.", resolve_path=True, rich_help_panel="Command Options"),
]
OutputOpt = Annotated[
    Path | None,
    typer.Option("--output", help="Output path.", resolve_path=True, rich_help_panel="Command Options"),
]
SeedOpt = Annotated[
    int | None,
    typer.Option("--seed", help="Master seed; all randomness derives from it. Default 0.", rich_help_panel="Command Options"),
]
SchemeOpt = Annotated[
    str | None,
    typer.Option("--scheme", help="`refit` re-estimates the transform at every origin, `fixed` keeps the training fit.", rich_help_panel="Forecast Options"),
]
HorizonOpt = Annotated[
    int | None,
    typer.Option("--horizon", help="Steps ahead. Default 1.", rich_help_panel="Forecast Options"),
]
HoldoutOpt = Annotated[
    int | None,
    typer.Option("--holdout", help="Number of final observations forecast. Default 10.", rich_help_panel="Forecast Options"),
]
BaselinesOpt = Annotated[
    str | None,
    typer.Option("--baselines", help="Comma separated: var1, mar1, ar1.", rich_help_panel="Forecast Options"),
]
POpt = Annotated[int | None, typer.Option("--p", help="Rows of each observation.", rich_help_panel="Command Options")]
QOpt = Annotated[int | None, typer.Option("--q", help="Columns of each observation.", rich_help_panel="Command Options")]
TOpt = Annotated[int | None, typer.Option("--T", help="Series length.", rich_help_panel="Command Options")]


def _pipeline_flags(
    tau0, tau1, c_r, rho_floor, selector, prewhiten, eig_transform, max_ar_order, w_method
) -> dict[str, Any]:
    return {
        "tau0": tau0,
        "tau1": tau1,
        "c_r": c_r,
        "rho_floor": rho_floor,
        "selector": selector,
        "prewhiten": prewhiten,
        "eig_transform": eig_transform,
        "max_ar_order": max_ar_order,
        "w_method": w_method,
    }


def _str_or_none(path: Path | None) -> str | None:
    return None if path is None else str(path)


@app.callback()
def common_options(
    ctx: typer.Context,
    debug: Annotated[
        bool,
        typer.Option(
            "--debug",
            help=f"Enable debug logging and write details to `{LOG_FILE}`.",
            rich_help_panel="Global Options",
        ),
    ] = False,
    progress: Annotated[
        bool | None,
        typer.Option(
            "--progress/--no-progress",
            help="Show/hide progress bars. Default: auto (enabled on interactive terminals).",
            rich_help_panel="Global Options",
        ),
    ] = None,
    config: Annotated[
        Path | None,
        typer.Option(
            "--config",
            help="JSON file whose settings override command flags (a previous report works too).",
            resolve_path=True,
            rich_help_panel="Global Options",
        ),
    ] = None,
    threads: Annotated[
        int | None,
        typer.Option(
            "--threads",
            envvar="MATSEG_THREADS",
            min=1,
            help="Worker processes for replications. Results do not depend on it.",
            rich_help_panel="Global Options",
        ),
    ] = None,
    version: Annotated[
        bool,
        typer.Option(
            "--version",
            callback=_version_callback,
            is_eager=True,
            help="Show version and exit.",
            rich_help_panel="Global Options",
        ),
    ] = False,
) -> None:
    """
    Global CLI options.
    """
    _ = version
    _validate_input_file(config, "--config")
    configure_logging(debug, console=console)
    ctx.obj = CLIState(debug=debug, progress=progress, config=config, threads=threads)


@app.command(
    "simulate",
    help="Generate a series from one of the simulation designs and write it as CSV.",
    rich_help_panel="Commands",
)
def simulate_command(
    ctx: typer.Context,
    design: Annotated[
        str | None,
        typer.Option("--design", help="example1, example2 or example3.", rich_help_panel="Command Options"),
    ] = None,
    p: POpt = None,
    q: QOpt = None,
    t_len: TOpt = None,
    seed: SeedOpt = None,
    output: OutputOpt = None,
    truth: Annotated[
        bool | None,
        typer.Option("--truth/--no-truth", help="Also write the generator truth as JSON.", rich_help_panel="Command Options"),
    ] = None,
) -> None:
    state = _state(ctx)
    with _command_errors():
        config = _resolve(
            ctx,
            "simulate",
            {"design": design, "p": p, "q": q, "T": t_len, "seed": seed,
             "output": _str_or_none(output), "truth": truth},
        )
        writer = SeriesWriter()
        with CLIRuntimeUI(console=console, enable_progress=_progress_enabled(state.progress)) as ui:
            series, sim = generate(config.design, config.T, config.p, config.q, config.seed)
            out = writer.write_series(series, config.output, config, progress_cb=ui.on_write_progress)
            ui.success(f"Series written to: {out}")
            if config.truth:
                truth_path = writer.write_truth(sim, sidecar(out, "truth", ".json"), config)
                ui.success(f"Truth written to: {truth_path}")
            if sim.transition is not None:
                targets = range(1, config.T)
                cond_path = writer.write_cond_mean(
                    sim.conditional_mean(targets, 1), targets, sidecar(out, "cond_mean"), config
                )
                ui.success(f"One-step conditional means written to: {cond_path}")


@app.command(
    "segment",
    help="Estimate the transform and the row/column blocks of a series.",
    rich_help_panel="Commands",
)
def segment_command(
    ctx: typer.Context,
    input_path: InputOpt = None,
    output: OutputOpt = None,
    tau0: Tau0Opt = None,
    tau1: Tau1Opt = None,
    c_r: CrOpt = None,
    rho_floor: RhoFloorOpt = None,
    selector: SelectorOpt = None,
    prewhiten: PrewhitenOpt = None,
    eig_transform: EigTransformOpt = None,
    max_ar_order: MaxArOpt = None,
    w_method: WMethodOpt = None,
) -> None:
    state = _state(ctx)
    _validate_input_file(input_path, "--input")
    with _command_errors():
        config = _resolve(
            ctx,
            "segment",
            {
                "input": _str_or_none(input_path),
                "output": _str_or_none(output),
                **_pipeline_flags(tau0, tau1, c_r, rho_floor, selector, prewhiten,
                                  eig_transform, max_ar_order, w_method),
            },
        )
        _validate_input_file(config.input, "--input")
        with CLIRuntimeUI(console=console, enable_progress=_progress_enabled(state.progress)) as ui:
            series = SeriesReader().read(config.input, progress_cb=ui.on_read_progress)
            ui.ensure_task("segment", "Estimating transform and blocks", total=1)
            fitted = fit_transform(series, config.pipeline())
            ui.complete_task("segment", description="Estimated transform and blocks (1/1)")
            ui.show_table(
                "Segmentation",
                ["mode", "groups", "r_hat", "floor applied"],
                [
                    [seg.mode.value, str([list(g) for g in seg.groups]), seg.r_hat, seg.floor_applied]
                    for seg in (fitted.col_seg, fitted.row_seg)
                ],
            )
            if config.output:
                out = ReportExporter().export_segment(config, fitted, config.output)
                ui.success(f"Segmentation report written to: {out}")


@app.command(
    "transform",
    help="Map a series to its latent form (or back with --inverse).",
    rich_help_panel="Commands",
)
def transform_command(
    ctx: typer.Context,
    input_path: InputOpt = None,
    output: OutputOpt = None,
    pair: Annotated[
        Path | None,
        typer.Option("--pair", help="Saved transform (or segment report) to apply instead of fitting.", resolve_path=True, rich_help_panel="Command Options"),
    ] = None,
    save_pair: Annotated[
        Path | None,
        typer.Option("--save-pair", help="Write the transform used to this JSON file.", resolve_path=True, rich_help_panel="Command Options"),
    ] = None,
    inverse: Annotated[
        bool | None,
        typer.Option("--inverse/--forward", help="Reconstruct X from a latent series. Needs --pair.", rich_help_panel="Command Options"),
    ] = None,
    tau0: Tau0Opt = None,
    tau1: Tau1Opt = None,
    c_r: CrOpt = None,
    rho_floor: RhoFloorOpt = None,
    selector: SelectorOpt = None,
    prewhiten: PrewhitenOpt = None,
    eig_transform: EigTransformOpt = None,
    max_ar_order: MaxArOpt = None,
    w_method: WMethodOpt = None,
) -> None:
    state = _state(ctx)
    _validate_input_file(input_path, "--input")
    _validate_input_file(pair, "--pair")
    with _command_errors():
        config = _resolve(
            ctx,
            "transform",
            {
                "input": _str_or_none(input_path),
                "output": _str_or_none(output),
                "pair": _str_or_none(pair),
                "save_pair": _str_or_none(save_pair),
                "inverse": inverse,
                **_pipeline_flags(tau0, tau1, c_r, rho_floor, selector, prewhiten,
                                  eig_transform, max_ar_order, w_method),
            },
        )
        _validate_input_file(config.input, "--input")
        _validate_input_file(config.pair, "--pair")
        if config.inverse and not config.pair:
            raise ValidationError("--inverse needs a saved transform (--pair)")
        with CLIRuntimeUI(console=console, enable_progress=_progress_enabled(state.progress)) as ui:
            series = SeriesReader().read(config.input, progress_cb=ui.on_read_progress)
            if config.pair:
                tp = read_transform_pair(config.pair)
            else:
                ui.ensure_task("fit", "Estimating transform", total=1)
                tp = fit_transform(series, config.pipeline()).pair
                ui.complete_task("fit", description="Estimated transform (1/1)")
            if config.save_pair:
                saved = write_json(document("transform", config, tp.to_dict()), config.save_pair)
                ui.success(f"Transform written to: {saved}")
            result = from_latent(series, tp) if config.inverse else to_latent(series, tp)
            out = SeriesWriter().write_series(result, config.output, config, progress_cb=ui.on_write_progress)
            ui.success(f"{'Reconstructed' if config.inverse else 'Latent'} series written to: {out}")


@app.command(
    "forecast",
    help="Rolling-origin forecasts of the final observations, with optional baselines.",
    rich_help_panel="Commands",
)
def forecast_command(
    ctx: typer.Context,
    input_path: InputOpt = None,
    output: OutputOpt = None,
    holdout: HoldoutOpt = None,
    horizon: HorizonOpt = None,
    scheme: SchemeOpt = None,
    baselines: BaselinesOpt = None,
    truth_mean: Annotated[
        Path | None,
        typer.Option("--truth-mean", help="One-step conditional means (simulate's `_cond_mean.csv`) used as truth.", resolve_path=True, rich_help_panel="Forecast Options"),
    ] = None,
    tau0: Tau0Opt = None,
    tau1: Tau1Opt = None,
    c_r: CrOpt = None,
    rho_floor: RhoFloorOpt = None,
    selector: SelectorOpt = None,
    prewhiten: PrewhitenOpt = None,
    eig_transform: EigTransformOpt = None,
    max_ar_order: MaxArOpt = None,
    w_method: WMethodOpt = None,
) -> None:
    state = _state(ctx)
    _validate_input_file(input_path, "--input")
    _validate_input_file(truth_mean, "--truth-mean")
    with _command_errors():
        config = _resolve(
            ctx,
            "forecast",
            {
                "input": _str_or_none(input_path),
                "output": _str_or_none(output),
                "holdout": holdout,
                "horizon": horizon,
                "scheme": scheme,
                "baselines": baselines,
                "truth_mean": _str_or_none(truth_mean),
                **_pipeline_flags(tau0, tau1, c_r, rho_floor, selector, prewhiten,
                                  eig_transform, max_ar_order, w_method),
            },
        )
        _validate_input_file(config.input, "--input")
        _validate_input_file(config.truth_mean, "--truth-mean")
        reader = SeriesReader()
        with CLIRuntimeUI(console=console, enable_progress=_progress_enabled(state.progress)) as ui:
            series = reader.read(config.input, progress_cb=ui.on_read_progress)
            truth = None
            if config.truth_mean:
                if config.horizon != 1:
                    raise ValidationError("--truth-mean holds one-step conditional means; use --horizon 1")
                values, first_t = reader.read_array(config.truth_mean, progress_cb=ui.on_read_progress)
                truth = truth_mean_for_targets(values, first_t, series, config.holdout, config.horizon)
            reports = [
                rolling_backtest(
                    series,
                    config.holdout,
                    config.horizon,
                    Scheme(config.scheme),
                    config.pipeline(),
                    truth_mean=truth,
                    progress_cb=ui.on_backtest_progress,
                )
            ]
            for name in config.baselines:
                reports.append(
                    baseline_forecasts(
                        series,
                        config.holdout,
                        config.horizon,
                        Baseline(name),
                        truth_mean=truth,
                        progress_cb=ui.on_backtest_progress,
                    )
                )
            ui.show_table(
                f"Rolling forecasts (h={config.horizon}, M={config.holdout}, {config.scheme})",
                ["method", "origins", "truth", "MSE"],
                [[r.method, r.n_origins, r.truth_kind.value, r.mse] for r in reports],
            )
            if config.output:
                paths = ReportExporter().export_forecast(config, reports, config.output)
                ui.success(f"Forecast report written to: {', '.join(str(p) for p in paths)}")


@app.command(
    "bench",
    help="Monte-Carlo replications of a simulation table.",
    rich_help_panel="Commands",
)
def bench_command(
    ctx: typer.Context,
    table: Annotated[
        int | None,
        typer.Option("--table", help="1 (transform accuracy), 2 (segmentation), 3 (forecasting).", rich_help_panel="Command Options"),
    ] = None,
    cell: Annotated[
        str | None,
        typer.Option("--cell", help='Dimensions as `q4p4,T1000`; overrides --p/--q/--T.', rich_help_panel="Command Options"),
    ] = None,
    p: POpt = None,
    q: QOpt = None,
    t_len: TOpt = None,
    reps: Annotated[
        int | None,
        typer.Option("--reps", help="Number of replications. Default 1.", rich_help_panel="Command Options"),
    ] = None,
    seed: SeedOpt = None,
    output: OutputOpt = None,
    holdout: HoldoutOpt = None,
    horizon: HorizonOpt = None,
    scheme: SchemeOpt = None,
    baselines: BaselinesOpt = None,
    tau0: Tau0Opt = None,
    tau1: Tau1Opt = None,
    c_r: CrOpt = None,
    rho_floor: RhoFloorOpt = None,
    selector: SelectorOpt = None,
    prewhiten: PrewhitenOpt = None,
    eig_transform: EigTransformOpt = None,
    max_ar_order: MaxArOpt = None,
    w_method: WMethodOpt = None,
) -> None:
    state = _state(ctx)
    with _command_errors():
        config = _resolve(
            ctx,
            "bench",
            {
                "table": table,
                "cell": cell,
                "p": p,
                "q": q,
                "T": t_len,
                "reps": reps,
                "seed": seed,
                "output": _str_or_none(output),
                "holdout": holdout,
                "horizon": horizon,
                "scheme": scheme,
                "baselines": baselines,
                **_pipeline_flags(tau0, tau1, c_r, rho_floor, selector, prewhiten,
                                  eig_transform, max_ar_order, w_method),
            },
        )
        exporter = ReportExporter()
        with CLIRuntimeUI(console=console, enable_progress=_progress_enabled(state.progress)) as ui:
            report = run_replications(config.design, config, progress_cb=ui.on_replication_progress)
            frame = exporter.summary_frame(report)
            ui.show_table(
                f"Table {report.table} ({report.design}), p={config.p}, q={config.q}, T={config.T}",
                ["metric", "n", "mean", "sd"],
                frame[["metric", "n", "mean", "sd"]].itertuples(index=False, name=None),
            )
            if config.output:
                paths = exporter.export_bench(config, report, config.output)
                ui.success(f"Benchmark report written to: {', '.join(str(p) for p in paths)}")


def main() -> None:
    app()


if __name__ == "__main__":
    main()
