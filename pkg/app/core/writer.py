"""
SeriesWriter: serialize matrix series, simulation truth and conditional means to disk.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from core.base import CSV_COLUMNS, FORMAT_VERSION, SCHEMA
from core.config import RunConfig
from core.matcore import MatrixSeries
from core.simgen import SimTruth
from utils.errors import ValidationError

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def echo_line(config: RunConfig | None) -> str:
    """Leading `#` line of every CSV output: schema, format version and config echo."""
    line = f"# schema={SCHEMA} format_version={FORMAT_VERSION}"
    if config is not None:
        line += " config=" + json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return line + "\n"


def document(kind: str, config: RunConfig | None, body: dict[str, Any]) -> dict[str, Any]:
    """JSON envelope shared by every output document."""
    doc = {"schema": SCHEMA, "format_version": FORMAT_VERSION, "kind": kind}
    if config is not None:
        doc["config"] = config.to_dict()
    doc.update(body)
    return doc


def write_json(doc: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.debug("JSON written to %s", path)
    return path


def write_frame(
    frame: pd.DataFrame, path: str | Path, config: RunConfig | None = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(echo_line(config))
        frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    log.debug("CSV written to %s (%d rows)", path, len(frame))
    return path


def long_frame(values: np.ndarray, first_t: int = 1) -> pd.DataFrame:
    """Long `t,row,col,value` layout of a (n, p, q) array, 1-based row and col."""
    values = np.asarray(values, dtype=float)
    n, p, q = values.shape
    t, row, col = np.indices((n, p, q)).reshape(3, -1)
    return pd.DataFrame(
        {
            CSV_COLUMNS[0]: t + first_t,
            CSV_COLUMNS[1]: row + 1,
            CSV_COLUMNS[2]: col + 1,
            CSV_COLUMNS[3]: values.ravel(),
        }
    )


class SeriesWriter:
    """
    Write series CSVs and the sidecar files of a simulation.
    """

    def write_series(
        self,
        series: MatrixSeries,
        path: str | Path,
        config: RunConfig | None = None,
        progress_cb: Callable[[str, dict], None] | None = None,
    ) -> Path:
        """
        Write `series` in long format with 17 significant digits, so reading
        it back reproduces every value exactly.
        """

        def _emit(event: str, **payload) -> None:
            if progress_cb is not None:
                progress_cb(event, payload)

        _emit("start", total=1)
        out = write_frame(long_frame(series.values), path, config)
        log.info("Series T=%d, p=%d, q=%d written to %s", *series.dims, out)
        _emit("file_written", index=1, total=1, filename=out.name, output_path=str(out))
        _emit("finished", total=1, output_dir=str(out.parent))
        return out

    def write_truth(
        self, truth: SimTruth, path: str | Path, config: RunConfig | None = None
    ) -> Path:
        out = write_json(document("truth", config, {"truth": truth.to_dict()}), path)
        log.info("Simulation truth written to %s", out)
        return out

    def write_cond_mean(
        self,
        values: np.ndarray,
        targets: Sequence[int],
        path: str | Path,
        config: RunConfig | None = None,
    ) -> Path:
        """
        Conditional means for consecutive 0-based `targets`, written with the
        1-based t of the series they belong to.
        """
        targets = list(targets)
        if targets != list(range(targets[0], targets[0] + len(targets))):
            raise ValidationError("conditional-mean targets must be consecutive")
        out = write_frame(long_frame(values, first_t=targets[0] + 1), path, config)
        log.info("Conditional means for t=%d..%d written to %s", targets[0] + 1, targets[-1] + 1, out)
        return out
