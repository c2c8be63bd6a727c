"""CSV ingestion and flat key=value run configuration."""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .model import ModelConfig
from .preprocess import DatasetError
from .tensor import ConfigError
from .training import TrainConfig

MISSING_POLICIES = ("reject", "ffill")
_MISSING_TOKENS = {"", "na", "nan", "null", "none"}
_DATE_HEADERS = {"date", "time", "datetime", "timestamp"}


@dataclass
class RawSeries:
    values: np.ndarray
    names: list[str]
    timestamps: list[str] | None = None
    path: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def load_csv(path, missing: str = "reject", date_column: bool | None = None) -> RawSeries:
    """Read an ETT-style CSV: optional leading date column, then one column per channel.

    ``date_column=None`` detects the date column from its header name or a
    non-numeric first cell. Gaps (empty, NA, NaN) are rejected or filled with
    the previous row's value depending on ``missing``.
    """
    if missing not in MISSING_POLICIES:
        raise ConfigError(f"missing-value policy must be one of {MISSING_POLICIES}, got {missing!r}")
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DatasetError(f"{path}: empty file or missing header")
        rows = [(reader.line_num, r) for r in reader if r]
    header = [h.strip() for h in header]
    if date_column is None:
        first = rows[0][1][0] if rows else ""
        date_column = header[0].lower() in _DATE_HEADERS or not _is_number(first)
    names = header[1:] if date_column else header
    if not names:
        raise DatasetError(f"{path}: no value columns")

    values = np.empty((len(rows), len(names)))
    stamps = [] if date_column else None
    for i, (line, row) in enumerate(rows):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
        if date_column:
            stamps.append(row[0])
            row = row[1:]
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell.lower() in _MISSING_TOKENS:
                if missing == "reject":
                    raise DatasetError(f"{path}:{line}: missing value in column {names[j]!r}")
                if i == 0:
                    raise DatasetError(f"{path}:{line}: cannot forward-fill column {names[j]!r} on the first row")
                values[i, j] = values[i - 1, j]
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(f"{path}:{line}: non-numeric value {cell!r} in column {names[j]!r}") from None
            if not math.isfinite(v):
                raise DatasetError(f"{path}:{line}: non-finite value in column {names[j]!r}")
            values[i, j] = v
    if values.shape[0] < 2:
        raise DatasetError(f"{path}: need at least 2 rows, found {values.shape[0]}")
    return RawSeries(values, names, stamps, str(path))


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return s.strip().lower() in _MISSING_TOKENS
    return True


# run configuration ---------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str = ""
    split_ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    out_dir: str = "runs"
    missing: str = "reject"

    def __post_init__(self):
        if len(self.split_ratios) != 3 or any(r < 0 for r in self.split_ratios) or not math.isclose(sum(self.split_ratios), 1.0):
            raise ConfigError("split_ratios must be three non-negative numbers summing to 1")
        if self.missing not in MISSING_POLICIES:
            raise ConfigError(f"missing must be one of {MISSING_POLICIES}")
        if self.model.seed != self.train.seed:
            raise ConfigError("model and training seeds differ; set the single 'seed' key")

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def dataset_name(self) -> str:
        return Path(self.data).stem if self.data else "series"

    def run_name(self) -> str:
        return f"{self.dataset_name}_{self.model.lookback}_{self.model.horizon}_{self.seed}"


_MODEL_KEYS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_RUN_KEYS = ("data", "split_ratios", "out_dir", "missing")
# documented defaults double as type witnesses for parsing
CONFIG_KEYS = tuple(sorted(set(_MODEL_KEYS) | set(_TRAIN_KEYS) | set(_RUN_KEYS)))


def _defaults() -> dict[str, object]:
    out = dataclasses.asdict(ModelConfig())
    out.update(dataclasses.asdict(TrainConfig()))
    rc = RunConfig()
    out.update(data=rc.data, split_ratios=rc.split_ratios, out_dir=rc.out_dir, missing=rc.missing)
    return out


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if key == "lr_midpoint":
            return None if raw.lower() in ("", "none") else float(raw)
        if key == "split_ratios":
            vals = tuple(float(v) for v in raw.split(","))
            if len(vals) != 3:
                raise ValueError
            return vals
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    pairs: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{n}: unknown config key {key!r}")
        pairs[key] = value
    return pairs


def build_config(pairs: Mapping[str, object]) -> RunConfig:
    """Resolve string or typed values over the defaults into a RunConfig."""
    values = _defaults()
    for key, raw in pairs.items():
        if key not in values:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw, values[key]) if isinstance(raw, str) else raw
    model = {k: values[k] for k in _MODEL_KEYS}
    train = {k: values[k] for k in _TRAIN_KEYS}
    try:
        return RunConfig(
            ModelConfig(**model),
            TrainConfig(**train),
            str(values["data"]),
            tuple(values["split_ratios"]),
            str(values["out_dir"]),
            str(values["missing"]),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path=None, overrides: Mapping[str, object] | None = None) -> RunConfig:
    """Defaults, then the file (if any), then explicit overrides."""
    pairs: dict[str, object] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        pairs.update(parse_config_text(text, str(path)))
    pairs.update(overrides or {})
    return build_config(pairs)


def echo_config(rc: RunConfig) -> str:
    """Fully resolved config as sorted ``key = value`` lines (re-parses to ``rc``)."""
    values = dataclasses.asdict(rc.model)
    values.update(dataclasses.asdict(rc.train))
    values.update(data=rc.data, out_dir=rc.out_dir, missing=rc.missing)
    values["split_ratios"] = ",".join(repr(float(r)) for r in rc.split_ratios)
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, float):
            v = repr(v)
        elif v is None:
            v = "none"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
