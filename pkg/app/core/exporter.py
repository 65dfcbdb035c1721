"""
ReportExporter: write segmentation, forecast and benchmark reports as JSON, CSV and .xlsx.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Font, PatternFill

from core.config import RunConfig
from core.estimation import WEstimate
from core.forecasting import ForecastReport
from core.matcore import matrix_to_dict
from core.replication import ReplicationReport
from core.segmentation import SegmentationResult
from core.transform import FittedTransform
from core.writer import document, write_frame, write_json

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["table", "design", "p", "q", "T", "metric", "n", "mean", "sd"]
STEP_COLUMNS = ["method", "origin", "t", "step_mse"]
WEEKLY_COLUMNS = ["method", "week", "first_t", "last_t", "n", "mspe"]


def sidecar(path: str | Path, suffix: str, extension: str = ".csv") -> Path:
    """`out/report.json` -> `out/report_<suffix><extension>`."""
    path = Path(path)
    return path.with_name(f"{path.stem}_{suffix}{extension}")


def _mode_section(w: WEstimate, seg: SegmentationResult) -> dict:
    section = seg.to_dict()
    section["eigenvalues"] = [float(v) for v in w.eig.eigenvalues]
    section["eigenvectors"] = matrix_to_dict(w.eig.eigenvectors)
    section["tau0"] = w.tau0
    section["eig_transform"] = w.transform_label
    return section


class ReportExporter:
    """
    Turn library results into the documents the CLI writes.
    """

    def segment_document(self, config: RunConfig | None, fitted: FittedTransform) -> dict:
        return document(
            "segment",
            config,
            {
                "index_base": 0,
                "dims": {"p": int(fitted.mean.shape[0]), "q": int(fitted.mean.shape[1])},
                "columns": _mode_section(fitted.col_w, fitted.col_seg),
                "rows": _mode_section(fitted.row_w, fitted.row_seg),
                "col_groups": [list(g) for g in fitted.col_seg.groups],
                "row_groups": [list(g) for g in fitted.row_seg.groups],
                "mean": matrix_to_dict(fitted.mean),
                "transform": fitted.pair.to_dict(),
            },
        )

    def export_segment(
        self, config: RunConfig | None, fitted: FittedTransform, path: str | Path
    ) -> Path:
        out = write_json(self.segment_document(config, fitted), path)
        log.info("Segmentation report written to %s", out)
        return out

    def forecast_document(
        self, config: RunConfig | None, reports: Sequence[ForecastReport]
    ) -> dict:
        return document(
            "forecast",
            config,
            {
                "index_base": 0,
                "reports": {r.method: r.to_dict() for r in reports},
                "mse": {r.method: r.mse for r in reports},
            },
        )

    def export_forecast(
        self,
        config: RunConfig | None,
        reports: Sequence[ForecastReport],
        path: str | Path,
    ) -> list[Path]:
        """
        Write the forecast JSON plus two plot-ready CSVs next to it: per-step
        MSE (`_steps.csv`) and weekly-averaged MSPE (`_weekly.csv`).

        CSV rows use the 1-based t of the forecast target.
        """
        json_path = write_json(self.forecast_document(config, reports), path)

        steps = pd.DataFrame(
            [
                {"method": r.method, "origin": n, "t": target + 1, "step_mse": value}
                for r in reports
                for n, (target, value) in enumerate(zip(r.targets, r.step_mse))
            ],
            columns=STEP_COLUMNS,
        )
        weekly = pd.DataFrame(
            [
                {
                    "method": r.method,
                    "week": row["week"],
                    "first_t": row["first_target"] + 1,
                    "last_t": row["last_target"] + 1,
                    "n": row["n"],
                    "mspe": row["mspe"],
                }
                for r in reports
                for row in r.weekly()
            ],
            columns=WEEKLY_COLUMNS,
        )
        steps_path = write_frame(steps, sidecar(path, "steps"), config)
        weekly_path = write_frame(weekly, sidecar(path, "weekly"), config)
        log.info("Forecast report written to %s (+ %s, %s)", json_path, steps_path.name, weekly_path.name)
        return [json_path, steps_path, weekly_path]

    def summary_frame(self, report: ReplicationReport) -> pd.DataFrame:
        return pd.DataFrame(report.summary_rows(), columns=SUMMARY_COLUMNS)

    def export_bench(
        self,
        config: RunConfig | None,
        report: ReplicationReport,
        path: str | Path,
    ) -> list[Path]:
        """
        Write the replication JSON, its flat summary CSV and an .xlsx rendering
        of the same summary.
        """
        json_path = write_json(document("bench", config, {"report": report.to_dict()}), path)
        csv_path = write_frame(self.summary_frame(report), sidecar(path, "summary"), config)
        xlsx_path = self.export_workbook([report], sidecar(path, "summary", ".xlsx"), config)
        log.info("Benchmark report written to %s (+ %s, %s)", json_path, csv_path.name, xlsx_path.name)
        return [json_path, csv_path, xlsx_path]

    def export_workbook(
        self,
        reports: Sequence[ReplicationReport],
        excel_path: str | Path,
        config: RunConfig | None = None,
    ) -> Path:
        """
        One sheet per table with the summary rows, plus a `config` sheet when a
        config is given.

        Header row is formatted with Arial 10pt bold black on #F2F2F2, panes
        are frozen below the header and columns are sized to their content.
        """
        wb = Workbook()
        wb.remove(wb.active)

        sheets: dict[str, tuple[list[str], list[list]]] = {}
        for report in reports:
            name = f"Table {report.table}"
            header, rows = sheets.setdefault(name, (SUMMARY_COLUMNS, []))
            for row in report.summary_rows():
                rows.append([row.get(col) for col in header])
            log.info("Prepared %d rows for sheet %s", len(rows), name)
        if config is not None:
            sheets["config"] = (
                ["key", "value"],
                [[k, str(v)] for k, v in config.to_dict().items()],
            )

        # styling objects
        header_font = Font(name="Arial", size=10, bold=True, color="000000")
        header_fill = PatternFill("solid", fgColor="F2F2F2")

        for name, (header, rows) in sheets.items():
            ws = wb.create_sheet(name)
            ws.append(header)
            for cell in ws[1]:
                cell.font = header_font
                cell.fill = header_fill
            ws.freeze_panes = "A2"
            for row in rows:
                ws.append(row)

            for col_cells in ws.columns:
                width = max(len(str(c.value)) for c in col_cells if c.value is not None)
                ws.column_dimensions[col_cells[0].column_letter].width = width + 2

        excel_path = Path(excel_path)
        excel_path.parent.mkdir(parents=True, exist_ok=True)
        wb.save(excel_path)
        log.info("Excel written to %s", excel_path)
        return excel_path
