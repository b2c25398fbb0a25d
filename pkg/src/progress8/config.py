"""Run configuration: plain-text key=value files, flag overrides, presets.

The format is deliberately dumb — one `key = value` per line, `#` comments —
so a run's configuration can be read in any editor and recorded verbatim in
run metadata. Unknown keys are rejected rather than ignored: a typo should
fail loudly, not silently fall back to a default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .adjustment import DESIGN_PRESETS
from .attainment import SLOT_PRESETS
from .cohort import PupilRecord
from .scoring import PagIntervals

__all__ = [
    "RunConfig",
    "ConfigError",
    "parse_config_file",
    "load_pag_table",
    "write_pag_table",
    "build_partition",
    "SUBGROUP_PARTITIONS",
]

ENV_OUT_DIR = "P8_OUT_DIR"

SIGMA_SOURCES = ("national", "within_school", "pooled_within")
MULTIPLIERS = ("z", "t_df_n", "t_df_n_minus_1")
SCHEMES = ("inverse_variance", "recency_weighted")


class ConfigError(ValueError):
    """Raised for unknown keys or out-of-range configuration values."""


@dataclass(frozen=True)
class RunConfig:
    pupils: str | None = None
    qualifications: str | None = None
    enrollments: str | None = None
    catalog: str | None = None
    year_label: str = "cohort"
    ks2_low: float = 80.0
    ks2_high: float = 120.0
    pag_table: str | None = None
    slot_preset: str = "official"
    sigma_source: str = "national"
    multiplier: str = "z"
    level: float = 0.95
    cap: str = "auto"  # "auto" | "none" | a number of SDs
    suppression_threshold: float = 0.5
    design: str = "background"
    thresholds: str = "500,1000"
    subgroups: str = ""
    annual_gains: str = "1.0,0.4"
    funnel_levels: str = "0.95,0.998"
    scheme: str = "inverse_variance"
    decay: float = 1.0
    seed: int = 0
    out_dir: str = ""
    figures: bool = True
    sources: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.slot_preset not in SLOT_PRESETS:
            raise ConfigError(f"unknown slot preset {self.slot_preset!r}")
        if self.sigma_source not in SIGMA_SOURCES:
            raise ConfigError(f"unknown sigma_source {self.sigma_source!r}")
        if self.multiplier not in MULTIPLIERS:
            raise ConfigError(f"unknown multiplier {self.multiplier!r}")
        if self.design not in DESIGN_PRESETS:
            raise ConfigError(f"unknown design {self.design!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown pooling scheme {self.scheme!r}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        if not 0.0 < self.suppression_threshold <= 1.0:
            raise ConfigError(
                f"suppression_threshold must lie in (0, 1], got {self.suppression_threshold}"
            )
        if not self.ks2_low < self.ks2_high:
            raise ConfigError("ks2_low must be below ks2_high")
        self.cap_value()  # validates

    def cap_value(self) -> float | str | None:
        if self.cap == "auto":
            return "auto"
        if self.cap == "none":
            return None
        try:
            value = float(self.cap)
        except ValueError:
            raise ConfigError(f"cap must be 'auto', 'none', or a number, got {self.cap!r}") from None
        if value < 0:
            raise ConfigError(f"cap multiplier must be non-negative, got {value}")
        return value

    def ks2_range(self) -> tuple[float, float]:
        return (self.ks2_low, self.ks2_high)

    def intervals(self) -> PagIntervals:
        if self.pag_table:
            return load_pag_table(self.pag_table)
        return PagIntervals.equal_width(self.ks2_range())

    def threshold_list(self) -> list[int]:
        return [int(t) for t in self.thresholds.split(",") if t.strip()]

    def gain_list(self) -> list[float]:
        return [float(g) for g in self.annual_gains.split(",") if g.strip()]

    def funnel_level_list(self) -> list[float]:
        return [float(v) for v in self.funnel_levels.split(",") if v.strip()]

    def subgroup_list(self) -> list[str]:
        return [s.strip() for s in self.subgroups.split(",") if s.strip()]

    def resolved_out_dir(self) -> str:
        if self.out_dir:
            return self.out_dir
        return os.environ.get(ENV_OUT_DIR, "p8_out")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig) if f.name != "sources"}

_BOOL_KEYS = {"figures"}
_INT_KEYS = {"seed"}
_FLOAT_KEYS = {
    "ks2_low", "ks2_high", "level", "suppression_threshold", "decay",
}


def parse_config_file(path: str) -> dict[str, str]:
    """key = value lines; '#' starts a comment; keys must be known."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
            values[key] = value
    return values


def _coerce(key: str, value: str):
    if key in _BOOL_KEYS:
        token = value.strip().lower()
        if token in ("1", "true", "yes"):
            return True
        if token in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if key in _INT_KEYS:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return value


def build_config(
    file_values: dict[str, str] | None = None,
    flag_values: dict[str, object] | None = None,
) -> RunConfig:
    """Defaults, then config file, then flags — highest wins; origin recorded."""
    merged: dict[str, object] = {}
    sources: list[tuple[str, str]] = []
    for key, raw in (file_values or {}).items():
        merged[key] = _coerce(key, raw)
        sources.append((key, "config_file"))
    for key, value in (flag_values or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown configuration key {key!r}")
        merged[key] = value
        sources = [(k, s) for k, s in sources if k != key]
        sources.append((key, "flag"))
    config = RunConfig(**merged)  # type: ignore[arg-type]
    return replace(config, sources=tuple(sorted(sources)))


def load_pag_table(path: str) -> PagIntervals:
    """pag_table.csv: group_index, low, high — must partition the range."""
    import csv

    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["group_index", "low", "high"]:
            raise ConfigError(f"{path}: expected header group_index,low,high, got {header}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            try:
                rows.append((int(row[0]), float(row[1]), float(row[2])))
            except (ValueError, IndexError):
                raise ConfigError(f"{path}:{line_no}: malformed row {row}") from None
    try:
        return PagIntervals.from_rows(rows)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def write_pag_table(intervals: PagIntervals, path: str) -> None:
    from .ingest import format_number, write_csv

    rows = [
        [index, format_number(low), format_number(high)]
        for index, low, high in intervals.rows()
    ]
    write_csv(path, ["group_index", "low", "high"], rows)


def _flag_is(name: str, expected: bool):
    def predicate(pupil: PupilRecord) -> bool:
        return getattr(pupil.background, name) is expected

    return predicate


SUBGROUP_PARTITIONS: dict[str, list] = {
    "fsm": [("fsm", _flag_is("fsm_flag", True)), ("non_fsm", _flag_is("fsm_flag", False))],
    "eal": [("eal", _flag_is("eal_flag", True)), ("non_eal", _flag_is("eal_flag", False))],
    "sen": [("sen", _flag_is("sen_flag", True)), ("non_sen", _flag_is("sen_flag", False))],
    "gender": [
        ("female", lambda p: p.background.gender == "F"),
        ("male", lambda p: p.background.gender == "M"),
    ],
}


def build_partition(name: str) -> list:
    try:
        return SUBGROUP_PARTITIONS[name]
    except KeyError:
        raise ConfigError(
            f"unknown subgroup partition {name!r}; available: {sorted(SUBGROUP_PARTITIONS)}"
        ) from None
