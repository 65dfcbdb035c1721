"""
Pipeline settings and the resolved run configuration shared by every command.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

from core.base import (
    BASELINES,
    DEFAULT_C_R,
    DEFAULT_MAX_AR_ORDER,
    DEFAULT_RHO_FLOOR,
    DEFAULT_TAU0,
    DEFAULT_TAU1,
    DESIGNS,
    TABLE_DESIGNS,
)
from core.estimation import EigTransform, WMethod
from core.segmentation import Selector
from utils.errors import ValidationError
from utils.string import parse_cell, parse_name_list

log = logging.getLogger(__name__)


class Scheme(StrEnum):
    """REFIT re-estimates transform and segmentation at every origin; FIXED reuses the training fit."""

    REFIT = "refit"
    FIXED = "fixed"


@dataclass(frozen=True, slots=True)
class PipelineSettings:
    tau0: int = DEFAULT_TAU0
    tau1: int = DEFAULT_TAU1
    c_r: float = DEFAULT_C_R
    rho_floor: float = DEFAULT_RHO_FLOOR
    prewhiten: bool = True
    max_ar_order: int = DEFAULT_MAX_AR_ORDER
    selector: Selector = field(default_factory=Selector)
    eig_transform: EigTransform = field(default_factory=EigTransform)
    w_method: WMethod = WMethod.OPTIMIZED

    def validate(self) -> "PipelineSettings":
        if self.tau0 < 0:
            raise ValidationError(f"tau0 must be >= 0, got {self.tau0}")
        if self.tau1 < 0:
            raise ValidationError(f"tau1 must be >= 0, got {self.tau1}")
        if not 0 < self.c_r < 1:
            raise ValidationError(f"c_r must lie in (0, 1), got {self.c_r}")
        if not 0 <= self.rho_floor < 1:
            raise ValidationError(f"rho_floor must lie in [0, 1), got {self.rho_floor}")
        if self.max_ar_order < 0:
            raise ValidationError(f"max_ar_order must be >= 0, got {self.max_ar_order}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "tau0": self.tau0,
            "tau1": self.tau1,
            "c_r": self.c_r,
            "rho_floor": self.rho_floor,
            "prewhiten": self.prewhiten,
            "max_ar_order": self.max_ar_order,
            "selector": self.selector.label,
            "eig_transform": self.eig_transform.label,
            "w_method": self.w_method.value,
        }


def _to_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in {"1", "true", "yes", "on"}:
        return True
    if text in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _to_list(value: Any) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v).strip().lower() for v in value if str(v).strip()]
    return parse_name_list(value)


_CONVERTERS: dict[str, Any] = {
    "command": str,
    "design": str,
    "p": int,
    "q": int,
    "T": int,
    "seed": int,
    "reps": int,
    "table": int,
    "cell": str,
    "tau0": int,
    "tau1": int,
    "c_r": float,
    "rho_floor": float,
    "selector": str,
    "prewhiten": _to_bool,
    "eig_transform": str,
    "max_ar_order": int,
    "w_method": str,
    "scheme": str,
    "horizon": int,
    "holdout": int,
    "baselines": _to_list,
    "truth_mean": str,
    "truth": _to_bool,
    "pair": str,
    "save_pair": str,
    "inverse": _to_bool,
    "input": str,
    "output": str,
    "threads": int,
}

# Not echoed into reports: they never change results.
_NOT_ECHOED = frozenset({"output", "threads"})

_INPUT_COMMANDS = frozenset({"segment", "transform", "forecast"})


@dataclass(slots=True)
class RunConfig:
    command: str = ""
    design: str | None = None
    p: int | None = None
    q: int | None = None
    T: int | None = None
    seed: int = 0
    reps: int = 1
    table: int | None = None
    cell: str | None = None
    tau0: int = DEFAULT_TAU0
    tau1: int = DEFAULT_TAU1
    c_r: float = DEFAULT_C_R
    rho_floor: float = DEFAULT_RHO_FLOOR
    selector: str = "ratio"
    prewhiten: bool = True
    eig_transform: str = "identity"
    max_ar_order: int = DEFAULT_MAX_AR_ORDER
    w_method: str = WMethod.OPTIMIZED.value
    scheme: str | None = None
    horizon: int = 1
    holdout: int = 10
    baselines: list[str] = field(default_factory=list)
    truth_mean: str | None = None
    truth: bool = False
    pair: str | None = None
    save_pair: str | None = None
    inverse: bool = False
    input: str | None = None
    output: str | None = None
    threads: int = 1

    @classmethod
    def resolve(
        cls,
        command: str,
        flags: dict[str, Any] | None = None,
        config_file: str | Path | None = None,
    ) -> "RunConfig":
        """
        Merge defaults <- explicit flags (None means "not given") <- config file,
        then validate. A config file may be a flat mapping of field names or a
        previous report carrying a "config" mapping.
        """
        values: dict[str, Any] = {}
        for key, value in (flags or {}).items():
            if value is not None:
                values[key] = value
        if config_file is not None:
            from core.parser import read_config_file

            loaded = read_config_file(config_file)
            loaded.pop("command", None)
            log.debug("config file %s overrides %s", config_file, sorted(loaded))
            values.update({k: v for k, v in loaded.items() if v is not None})

        unknown = sorted(set(values) - set(_CONVERTERS))
        if unknown:
            raise ValidationError(f"unknown configuration key(s): {', '.join(unknown)}")

        converted: dict[str, Any] = {"command": command}
        for key, value in values.items():
            if key == "command" or value is None:
                continue
            try:
                converted[key] = _CONVERTERS[key](value)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{key}: invalid value {value!r}") from exc

        config = cls(**converted)
        config._fill_derived()
        return config.validate()

    def _fill_derived(self) -> None:
        if self.cell:
            for key, value in parse_cell(self.cell).items():
                setattr(self, key, value)
        if self.command == "bench" and self.table is not None and self.design is None:
            self.design = TABLE_DESIGNS.get(self.table)
        if self.scheme is None:
            self.scheme = Scheme.REFIT.value if self.command == "bench" else Scheme.FIXED.value
        self.selector = self.selector.strip().lower()
        self.eig_transform = self.eig_transform.strip().lower()
        self.scheme = self.scheme.strip().lower()

    def validate(self) -> "RunConfig":
        if self.w_method not in {m.value for m in WMethod}:
            raise ValidationError(f"w_method must be naive or optimized, got {self.w_method!r}")
        self.pipeline()
        if self.scheme not in {s.value for s in Scheme}:
            raise ValidationError(f"scheme must be refit or fixed, got {self.scheme!r}")
        for name in ("horizon", "holdout", "reps", "threads"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")
        if self.horizon > self.holdout:
            raise ValidationError(
                f"horizon {self.horizon} exceeds holdout {self.holdout}"
            )
        bad = [b for b in self.baselines if b not in BASELINES]
        if bad:
            raise ValidationError(
                f"unknown baseline(s) {', '.join(bad)}; choose from {', '.join(BASELINES)}"
            )
        if self.design is not None and self.design not in DESIGNS:
            raise ValidationError(
                f"unknown design {self.design!r}; choose from {', '.join(DESIGNS)}"
            )
        for name in ("p", "q", "T"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValidationError(f"{name} must be >= 1, got {value}")

        if self.command == "simulate":
            self._require("design", "p", "q", "T", "output")
        elif self.command == "bench":
            self._require("table", "p", "q", "T")
            if self.table not in TABLE_DESIGNS:
                raise ValidationError(f"table must be one of 1, 2, 3; got {self.table}")
        elif self.command in _INPUT_COMMANDS:
            self._require("input")
            if self.command == "transform":
                self._require("output")
        return self

    def _require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValidationError(
                f"{self.command}: missing required option(s): {', '.join(missing)}"
            )

    def pipeline(self) -> PipelineSettings:
        return PipelineSettings(
            tau0=self.tau0,
            tau1=self.tau1,
            c_r=self.c_r,
            rho_floor=self.rho_floor,
            prewhiten=self.prewhiten,
            max_ar_order=self.max_ar_order,
            selector=Selector.parse(self.selector),
            eig_transform=EigTransform.parse(self.eig_transform),
            w_method=WMethod(self.w_method),
        ).validate()

    def to_dict(self) -> dict[str, Any]:
        """Config echo embedded in every output."""
        data = asdict(self)
        return {k: data[k] for k in sorted(data) if k not in _NOT_ECHOED}
