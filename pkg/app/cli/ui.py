"""
Rich progress and status rendering for long-running matseg commands.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

from rich.console import Console
from rich.markup import escape
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    SpinnerColumn,
    TaskID,
    TextColumn,
    TimeElapsedColumn,
)
from rich.table import Table


def _count(payload: Mapping[str, Any], key: str, default: int = 0) -> int:
    return int(payload.get(key, default) or default)


@dataclass(slots=True)
class CLIRuntimeUI:
    """
    Render library progress callbacks as Rich bars, or as one-line notes when
    progress is off.
    """

    console: Console
    enable_progress: bool
    progress: Progress | None = None
    task_ids: dict[str, TaskID] = field(default_factory=dict)
    announced: set[str] = field(default_factory=set)

    def __enter__(self) -> "CLIRuntimeUI":
        if self.enable_progress:
            self.progress = Progress(
                SpinnerColumn(style="cyan"),
                TextColumn("[progress.description]{task.description}"),
                BarColumn(bar_width=None),
                MofNCompleteColumn(),
                TimeElapsedColumn(),
                console=self.console,
                transient=False,
            )
            self.progress.start()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self.progress is not None:
            self.progress.stop()
            self.progress = None

    def status(self, message: str) -> None:
        self.console.print(f"[cyan]{message}[/cyan]")

    def success(self, message: str) -> None:
        self.console.print(f"[bold green]{message}[/bold green]")

    def warning(self, message: str) -> None:
        self.console.print(f"[yellow]{message}[/yellow]")

    def error(self, message: str) -> None:
        self.console.print(f"[bold red]{message}[/bold red]")

    def ensure_task(self, key: str, description: str, total: int = 1) -> None:
        if self.progress is None:
            if key not in self.announced:
                self.announced.add(key)
                self.console.print(f"[cyan]• {description}[/cyan]")
            return
        if key not in self.task_ids:
            self.task_ids[key] = self.progress.add_task(description, total=max(total, 1))

    def update_task(
        self,
        key: str,
        *,
        description: str | None = None,
        completed: int | None = None,
        total: int | None = None,
    ) -> None:
        if self.progress is None:
            return
        self.ensure_task(key, description or key, total=total or 1)
        changes: dict[str, Any] = {}
        if description is not None:
            changes["description"] = description
        if total is not None:
            changes["total"] = max(total, 1)
        if completed is not None:
            changes["completed"] = max(completed, 0)
        self.progress.update(self.task_ids[key], **changes)

    def complete_task(self, key: str, *, description: str | None = None) -> None:
        if self.progress is None or key not in self.task_ids:
            return
        task = self.progress.tasks[self.task_ids[key]]
        self.progress.update(
            self.task_ids[key],
            completed=task.total if task.total is not None else task.completed,
            description=description or task.description,
        )

    def on_read_progress(self, event: str, payload: dict[str, Any]) -> None:
        name = str(payload.get("path", "input")).rsplit("/", 1)[-1]
        if event == "start":
            self.ensure_task(f"read:{name}", f"Reading {name}", total=1)
        elif event == "finished":
            self.ensure_task(f"read:{name}", f"Reading {name}", total=1)
            self.complete_task(
                f"read:{name}",
                description=(
                    f"Read {name} (T={payload.get('T')}, p={payload.get('p')}, q={payload.get('q')})"
                ),
            )

    def on_write_progress(self, event: str, payload: dict[str, Any]) -> None:
        if event == "start":
            self.ensure_task("write", "Writing series", total=_count(payload, "total", 1))
        elif event == "finished":
            self.ensure_task("write", "Writing series")
            self.complete_task("write", description="Wrote series (1/1)")

    def on_backtest_progress(self, event: str, payload: dict[str, Any]) -> None:
        method = str(payload.get("method", "forecast"))
        label = f"Rolling forecasts {escape(f'[{method}]')}"
        key = f"forecast:{method}"
        total = _count(payload, "total", 1)
        if event == "start":
            self.ensure_task(key, label, total=total)
        elif event == "step_done":
            done = _count(payload, "done")
            self.update_task(
                key,
                description=f"{label} ({done}/{total})",
                completed=done,
                total=total,
            )
        elif event == "finished":
            self.ensure_task(key, label, total=total)
            self.complete_task(
                key, description=f"{label} MSE {float(payload.get('mse', 0.0)):.4g}"
            )

    def on_replication_progress(self, event: str, payload: dict[str, Any]) -> None:
        total = _count(payload, "total", 1)
        if event == "start":
            table = payload.get("table", "?")
            self.ensure_task("bench", f"Table {table} replications", total=total)
        elif event == "rep_done":
            done = _count(payload, "done")
            self.update_task(
                "bench",
                description=f"Replications ({done}/{total}) last: {payload.get('outcome', '')}",
                completed=done,
                total=total,
            )
        elif event == "finished":
            failures = _count(payload, "failures")
            self.ensure_task("bench", "Replications", total=total)
            self.complete_task("bench", description=f"Replications done ({failures} failed)")
            if failures:
                self.warning(f"{failures} replication(s) failed; see the report's failures list")

    def show_table(self, title: str, columns: Iterable[str], rows: Iterable[Iterable[Any]]) -> None:
        table = Table(title=title, header_style="bold")
        for column in columns:
            table.add_column(column)
        for row in rows:
            table.add_row(*(_cell(v) for v in row))
        self.console.print(table)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.4g}"
    return str(value)
