"""
Readers for long-format series CSV files and the JSON documents the CLI exchanges.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from core.base import CSV_COLUMNS, SCHEMA
from core.matcore import MatrixSeries
from core.transform import TransformPair
from utils.errors import MalformedInputError, NonFiniteError

log = logging.getLogger(__name__)

_INDEX_COLUMNS = CSV_COLUMNS[:3]


class SeriesReader:
    """
    Load a `t,row,col,value` CSV (1-based indices, any row order) into a (T, p, q) array.

    Lines starting with `#` carry the config echo and are skipped.
    """

    def read_array(
        self,
        path: str | Path,
        progress_cb: Callable[[str, dict], None] | None = None,
    ) -> tuple[np.ndarray, int]:
        """
        Read the file and return the value array together with its first `t`.

        The `t` column may start anywhere but must be contiguous; every
        (t, row, col) cell has to appear exactly once. Rows and columns are
        numbered from 1 and their largest values fix p and q.
        """

        def _emit(event: str, **payload) -> None:
            if progress_cb is not None:
                progress_cb(event, payload)

        path = Path(path)
        _emit("start", path=str(path), total=1)
        try:
            frame = pd.read_csv(path, comment="#", float_precision="round_trip")
        except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise MalformedInputError(f"{path}: cannot read CSV ({exc})") from exc

        frame.columns = [str(c).strip() for c in frame.columns]
        if sorted(frame.columns) != sorted(CSV_COLUMNS):
            raise MalformedInputError(
                f"{path}: expected header {','.join(CSV_COLUMNS)}, got {','.join(frame.columns)}"
            )
        if frame.empty:
            raise MalformedInputError(f"{path}: no data rows")

        index = {}
        for name in _INDEX_COLUMNS:
            column = pd.to_numeric(frame[name], errors="coerce")
            invalid = column.isna() | (column.fillna(0) % 1 != 0)
            if invalid.any():
                bad = int(np.flatnonzero(invalid)[0])
                raise MalformedInputError(
                    f"{path}: non-integer {name} {frame[name].iloc[bad]!r} on data line {bad + 1}"
                )
            index[name] = column.astype(np.int64).to_numpy()

        values = pd.to_numeric(frame["value"], errors="coerce")
        # blanks and NaN literals are already NaN after read_csv
        garbage = values.isna() & frame["value"].notna()
        if garbage.any():
            bad = int(np.flatnonzero(garbage)[0])
            raise MalformedInputError(
                f"{path}: value {frame['value'].iloc[bad]!r} on data line {bad + 1} is not a number"
            )
        values = values.to_numpy(dtype=float)
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise NonFiniteError(
                f"{path}: non-finite value at t={index['t'][bad]}, "
                f"row={index['row'][bad]}, col={index['col'][bad]}"
            )

        t, row, col = index["t"], index["row"], index["col"]
        if row.min() < 1 or col.min() < 1:
            raise MalformedInputError(f"{path}: row and col indices are 1-based")
        first_t = int(t.min())
        T = int(t.max()) - first_t + 1
        p, q = int(row.max()), int(col.max())

        keys = pd.DataFrame({"t": t, "row": row, "col": col})
        duplicated = keys.duplicated()
        if duplicated.any():
            bad = int(np.flatnonzero(duplicated)[0])
            raise MalformedInputError(
                f"{path}: duplicate cell t={t[bad]}, row={row[bad]}, col={col[bad]}"
            )
        expected = T * p * q
        if len(keys) != expected:
            filled = np.zeros((T, p, q), dtype=bool)
            filled[t - first_t, row - 1, col - 1] = True
            missing = np.argwhere(~filled)[0]
            raise MalformedInputError(
                f"{path}: {expected - len(keys)} missing cell(s), first at "
                f"t={missing[0] + first_t}, row={missing[1] + 1}, col={missing[2] + 1}"
            )

        arr = np.empty((T, p, q))
        arr[t - first_t, row - 1, col - 1] = values
        log.debug("Read %s: T=%d, p=%d, q=%d, first t=%d", path, T, p, q, first_t)
        _emit("finished", path=str(path), total=1, T=T, p=p, q=q)
        return arr, first_t

    def read(
        self,
        path: str | Path,
        progress_cb: Callable[[str, dict], None] | None = None,
    ) -> MatrixSeries:
        """Series files start at t = 1."""
        arr, first_t = self.read_array(path, progress_cb=progress_cb)
        if first_t != 1:
            raise MalformedInputError(f"{path}: series must start at t=1, found t={first_t}")
        series = MatrixSeries(arr, Path(path).stem)
        log.info("Loaded %s: T=%d, p=%d, q=%d", Path(path).name, *series.dims)
        return series


def read_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise MalformedInputError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise MalformedInputError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise MalformedInputError(f"{path}: expected a JSON object")
    return data


def read_transform_pair(path: str | Path) -> TransformPair:
    """
    Load a saved transform, either a transform document or a segment report
    that embeds one under "transform".
    """
    data = read_json(path)
    if "a_star" not in data and isinstance(data.get("transform"), dict):
        data = data["transform"]
    pair = TransformPair.from_dict(data)
    log.info("Loaded transform %s: p=%d, q=%d", Path(path).name, pair.p, pair.q)
    return pair


def read_config_file(path: str | Path) -> dict[str, Any]:
    """
    Configuration overrides: a flat mapping, or an output document whose
    "config" mapping is reused.
    """
    data = read_json(path)
    if "config" in data:
        if data.get("schema") not in (None, SCHEMA):
            raise MalformedInputError(
                f"{path}: unsupported schema {data.get('schema')!r}, expected {SCHEMA!r}"
            )
        data = data["config"]
        if not isinstance(data, dict):
            raise MalformedInputError(f"{path}: 'config' must be a JSON object")
    return {k: v for k, v in data.items() if k != "schema"}
