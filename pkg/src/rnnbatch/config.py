"""Plain-text run configuration: one ``key = value`` per line, ``#`` comments."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ParseError
from .hydro import WatershedParams
from .trainer import STRATEGIES, TrainConfig

TARGETS = ("sw", "sno", "sf")


@dataclass
class RunConfig:
    data_seed: int = 7
    data_years: int = 200
    data_params: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"

    @property
    def watershed(self) -> WatershedParams:
        return WatershedParams.from_mapping(self.data_params)

    def to_text(self) -> str:
        t = self.train
        lines = [
            f"data.seed = {self.data_seed}",
            f"data.years = {self.data_years}",
            *(f"data.params.{k} = {v!r}" for k, v in sorted(self.data_params.items())),
            f"train.strategy = {t.strategy}",
            f"train.variable = {t.variable}",
            f"train.bs = {t.bs}",
            f"train.lr = {t.lr!r}",
            f"train.max_epochs = {t.max_epochs}",
            f"train.patience = {t.patience}",
            f"train.hidden_size = {t.hidden_size}",
            f"train.seeds = {','.join(map(str, t.seeds))}",
            f"eval.out_dir = {self.out_dir}",
        ]
        return "\n".join(lines) + "\n"


def _int(key, v):
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {v!r}") from None


def _float(key, v):
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None


def _strategy(key, v):
    s = v.upper()
    if s not in STRATEGIES:
        raise ConfigError(f"{key}: unknown strategy {v!r}; choose from {', '.join(STRATEGIES)}")
    return s


def _variable(key, v):
    s = v.lower()
    if s not in TARGETS:
        raise ConfigError(f"{key}: unknown target {v!r}; choose from {', '.join(TARGETS)}")
    return s


def _seeds(key, v):
    parts = [p.strip() for p in v.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{key}: need at least one seed")
    return tuple(_int(key, p) for p in parts)


# config key -> (TrainConfig field, converter)
_TRAIN_KEYS = {
    "train.strategy": ("strategy", _strategy),
    "train.variable": ("variable", _variable),
    "train.bs": ("bs", _int),
    "train.lr": ("lr", _float),
    "train.max_epochs": ("max_epochs", _int),
    "train.patience": ("patience", _int),
    "train.hidden_size": ("hidden_size", _int),
    "train.seeds": ("seeds", _seeds),
}
_PARAM_NAMES = set(WatershedParams.__dataclass_fields__)


def parse_config(text: str) -> RunConfig:
    """Parse config text. Unknown keys and malformed lines are errors; absent keys keep defaults."""
    data_seed, data_years, params, out_dir = 7, 200, {}, "runs"
    train = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key or not value:
            raise ParseError(f"empty key or value in {raw.strip()!r}", line=lineno)
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        seen.add(key)
        if key == "data.seed":
            data_seed = _int(key, value)
        elif key == "data.years":
            data_years = _int(key, value)
        elif key.startswith("data.params."):
            name = key[len("data.params."):]
            if name not in _PARAM_NAMES:
                raise ConfigError(f"unknown config key {key!r}")
            params[name] = _float(key, value)
        elif key in _TRAIN_KEYS:
            name, conv = _TRAIN_KEYS[key]
            train[name] = conv(key, value)
        elif key == "eval.out_dir":
            out_dir = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if data_years < 1:
        raise ConfigError(f"data.years must be >= 1, got {data_years}")
    cfg = RunConfig(data_seed, data_years, params, TrainConfig(**train), out_dir)
    cfg.watershed.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
