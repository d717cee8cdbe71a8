"""libsvm datasets, CSV output and the flat ``key = value`` experiment config."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import MISSING, dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _finite(token: str, lineno: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"bad {what} {token!r}", lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {token!r}", lineno)
    return value


def parse_libsvm(text: str, scale: bool = False) -> Dataset:
    """Parse ``label idx:val ...`` lines (1-based indices) into a dense dataset.

    Missing entries are zero. With ``scale`` each column is min-max scaled to
    [-1, 1]; constant columns become 0.
    """
    labels, rows = [], []
    d = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        labels.append(_finite(tokens[0], lineno, "label"))
        row = {}
        for tok in tokens[1:]:
            idx, sep, val = tok.partition(":")
            if not sep or not idx.isdigit() or int(idx) < 1:
                raise ParseError(f"bad feature {tok!r}", lineno)
            j = int(idx)
            if j in row:
                raise ParseError(f"duplicate feature index {j}", lineno)
            row[j] = _finite(val, lineno, "feature value")
            d = max(d, j)
        rows.append(row)
    if not rows:
        raise ParseError("no data rows")
    X = np.zeros((len(rows), d))
    for r, row in enumerate(rows):
        for j, v in row.items():
            X[r, j - 1] = v
    if scale:
        lo, hi = X.min(axis=0), X.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        X = np.where(hi > lo, 2.0 * (X - lo) / span - 1.0, 0.0)
    return Dataset(X, np.array(labels))


def load_libsvm(path, scale: bool = False) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh.read(), scale=scale)


def write_libsvm(dataset: Dataset) -> str:
    out = []
    for label, row in zip(dataset.y, dataset.X):
        feats = " ".join(f"{j + 1}:{v:.17g}" for j, v in enumerate(row) if v != 0)
        out.append(f"{label:.17g} {feats}".rstrip())
    return "\n".join(out) + "\n"


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(records: Iterable[dict], columns: Sequence[str]) -> str:
    """Header plus one LF-terminated line per record, floats at 17 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        writer.writerow([format_value(rec[c]) for c in columns])
    return buf.getvalue()


def read_csv(text: str) -> list:
    return list(csv.DictReader(io.StringIO(text)))


# ---------------------------------------------------------------------------
# experiment config


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


def _opt(kind, default, *, lo=None, hi=None, lo_open=False, hi_open=False, choices=None, doc=""):
    meta = dict(kind=kind, lo=lo, hi=hi, lo_open=lo_open, hi_open=hi_open, choices=choices, doc=doc)
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata=meta)
    return field(default=default, metadata=meta)


@dataclass
class ExperimentConfig:
    # pipeline
    mode: str = _opt(str, "pipemare", choices=("gpipe", "pipedream", "pipemare"))
    P: int = _opt(int, 4, lo=1)
    N: Optional[int] = _opt(int, None, lo=1, doc="defaults to ceil(B/M)")
    M: int = _opt(int, 1, lo=1)
    B: Optional[int] = _opt(int, None, lo=1)
    recompute_segment: Optional[int] = _opt(int, None, lo=1)
    total_epochs: float = _opt(float, 100.0, lo=0)
    bytes_per_scalar: int = _opt(int, 4, lo=1)
    # optimizer
    optimizer: str = _opt(str, "sgd", choices=("sgd", "momentum", "adamw"))
    beta: float = _opt(float, 0.9, lo=0, hi=1, hi_open=True)
    beta1: float = _opt(float, 0.9, lo=0, hi=1, hi_open=True)
    beta2: float = _opt(float, 0.98, lo=0, hi=1, hi_open=True)
    eps: float = _opt(float, 1e-8, lo=0, lo_open=True)
    weight_decay: float = _opt(float, 0.0, lo=0)
    # schedule
    lr_schedule: str = _opt(str, "constant", choices=("constant", "step", "inverse_sqrt"))
    lr: float = _opt(float, 0.1, lo=0, lo_open=True)
    lr_every: int = _opt(int, 1000, lo=1)
    lr_factor: float = _opt(float, 0.1, lo=0, lo_open=True)
    lr_warmup: int = _opt(int, 1000, lo=1)
    K: int = _opt(int, 0, lo=0)
    warmup_epochs: int = _opt(int, 0, lo=0)
    steps_per_epoch: int = _opt(int, 1, lo=1)
    correction: bool = _opt(bool, False)
    D: float = _opt(float, 0.135, lo=0, hi=1, lo_open=True, hi_open=True)
    # objective
    objective: str = _opt(str, "quadratic", choices=("quadratic", "least_squares", "mlp"))
    lam: float = _opt(float, 1.0, lo=0, lo_open=True)
    delta: float = _opt(float, 0.0)
    phi: float = _opt(float, 0.0)
    sigma: float = _opt(float, 1.0, lo=0)
    noise: str = _opt(str, "gaussian", choices=("gaussian", "uniform"))
    w0: float = _opt(float, 1.0)
    dataset: Optional[str] = _opt(str, None)
    scale: bool = _opt(bool, False)
    synthetic_n: int = _opt(int, 8192, lo=1)
    synthetic_d: int = _opt(int, 12, lo=1)
    batch_size: Optional[int] = _opt(int, None, lo=1)
    hidden: list = _opt("ints", [16, 16])
    activation: str = _opt(str, "tanh", choices=("tanh", "relu"))
    # delays
    tau_fwd: Optional[int] = _opt(int, None, lo=0, doc="single-stage override of the pipeline delays")
    tau_bkwd: Optional[int] = _opt(int, None, lo=0)
    tau_recomp: Optional[int] = _opt(int, None, lo=0)
    hogwild_tau_max: Optional[int] = _opt(int, None, lo=0)
    hogwild_means: list = _opt("floats", [])
    # run and grids
    steps: int = _opt(int, 1000, lo=1)
    seeds: list = _opt("ints", [0])
    record_every: int = _opt(int, 1, lo=1)
    alpha_min: float = _opt(float, 1e-3, lo=0, lo_open=True)
    alpha_max: float = _opt(float, 1.0, lo=0, lo_open=True)
    alpha_points: int = _opt(int, 32, lo=1)
    taus: list = _opt("ints", [1, 4, 16, 64])
    lams: list = _opt("floats", [1.0])
    deltas: list = _opt("floats", [0.0])
    betas: list = _opt("floats", [])
    tau_bkwd_list: list = _opt("ints", [])
    probe_alpha: float = _opt(float, 0.1, lo=0)
    output: Optional[str] = _opt(str, None)

    def validate(self):
        if self.alpha_min > self.alpha_max:
            raise ConfigError("alpha_min", "must not exceed alpha_max")
        if self.tau_bkwd is not None and self.tau_fwd is None:
            raise ConfigError("tau_bkwd", "requires tau_fwd")
        tf = self.tau_fwd if self.tau_fwd is not None else 0
        if self.tau_bkwd is not None and self.tau_bkwd > tf:
            raise ConfigError("tau_bkwd", "must not exceed tau_fwd")
        if self.tau_recomp is not None:
            tb = self.tau_bkwd or 0
            if not tb <= self.tau_recomp <= tf:
                raise ConfigError("tau_recomp", "must lie between tau_bkwd and tau_fwd")
        if self.B is not None and self.N is not None and self.M * self.N < self.B:
            raise ConfigError("N", "M * N must cover B")
        if any(m <= 0 for m in self.hogwild_means):
            raise ConfigError("hogwild_means", "means must be > 0")
        if any(t < 0 for t in self.taus + self.tau_bkwd_list):
            raise ConfigError("taus", "delays must be >= 0")
        if any(v <= 0 for v in self.lams):
            raise ConfigError("lams", "curvatures must be > 0")
        if any(not 0 <= b < 1 for b in self.betas):
            raise ConfigError("betas", "momentum must lie in [0, 1)")
        if not self.seeds:
            raise ConfigError("seeds", "need at least one seed")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden", "layer widths must be >= 1")
        return self


CONFIG_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_TRUE, _FALSE = {"true", "yes", "on", "1"}, {"false", "no", "off", "0"}


def _convert(key: str, kind, raw: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if kind == "ints":
            return [int(x) for x in raw.split(",") if x.strip()]
        if kind == "floats":
            return [float(x) for x in raw.split(",") if x.strip()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        name = {bool: "boolean", int: "integer", float: "number"}.get(kind, f"list of {kind}")
        raise ConfigError(key, f"expected {name}, got {raw!r}") from None


def _check_range(key: str, meta: dict, value):
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(key, "must be finite")
    if isinstance(value, list) and any(isinstance(v, float) and not math.isfinite(v) for v in value):
        raise ConfigError(key, "entries must be finite")
    choices = meta["choices"]
    if choices and value not in choices:
        raise ConfigError(key, f"must be one of {', '.join(choices)}")
    lo, hi = meta["lo"], meta["hi"]
    if lo is not None and (value < lo or (meta["lo_open"] and value == lo)):
        raise ConfigError(key, f"must be {'>' if meta['lo_open'] else '>='} {lo}")
    if hi is not None and (value > hi or (meta["hi_open"] and value == hi)):
        raise ConfigError(key, f"must be {'<' if meta['hi_open'] else '<='} {hi}")


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse and fully validate a flat ``key = value`` document.

    ``overrides`` (already-typed values) are applied after the text. Every
    failure raises ``ConfigError`` carrying the offending key.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(key or f"line {lineno}", "expected 'key = value'")
        if key not in CONFIG_FIELDS:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "given twice")
        meta = CONFIG_FIELDS[key].metadata
        if val.lower() == "none" and CONFIG_FIELDS[key].default is None:
            values[key] = None
        else:
            values[key] = _convert(key, meta["kind"], val)
    for key, val in overrides.items():
        if key not in CONFIG_FIELDS:
            raise ConfigError(key, "unknown key")
        values[key] = val
    for key, val in values.items():
        if val is not None:
            _check_range(key, CONFIG_FIELDS[key].metadata, val)
    return ExperimentConfig(**values).validate()


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), **overrides)


def config_defaults_table() -> str:
    """Markdown table of every config key with its type and default."""
    lines = ["| key | type | default | notes |", "|---|---|---|---|"]
    for name, f in CONFIG_FIELDS.items():
        meta = f.metadata
        kind = meta["kind"]
        kind = kind.__name__ if isinstance(kind, type) else f"list of {kind}"
        note = meta["doc"] or (", ".join(meta["choices"]) if meta["choices"] else "")
        default = f.default_factory() if f.default is MISSING else f.default
        if isinstance(default, list):
            default = ",".join(map(str, default)) or "(empty)"
        lines.append(f"| {name} | {kind} | {default} | {note} |")
    return "\n".join(lines)
