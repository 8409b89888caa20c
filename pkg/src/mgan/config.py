"""Strict TOML experiment configuration.

Every section maps onto one of the library's config dataclasses. Unknown
sections or keys, wrong value types and invalid values all raise
:class:`ConfigError` before any computation starts.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .detection import EvalConfig
from .errors import ConfigError, InputError
from .losses import LossConfig
from .phantom import PhantomConfig
from .trainer import ARMS, ProtocolConfig, TrainConfig

DEFAULT_WORKSPACE = "mgan-runs"

# fields the protocol sets per arm, so they may not appear in a config file
_TRAIN_RESERVED = {"seed", "channel_mode"}


@dataclass(frozen=True)
class CorpusConfig:
    patients: int = 25
    slices_per_patient: int = 8

    def __post_init__(self):
        if self.patients < 2:
            raise ConfigError("corpus.patients must be >= 2 for a two-fold split")
        if self.slices_per_patient < 1:
            raise ConfigError("corpus.slices_per_patient must be >= 1")


@dataclass(frozen=True)
class PathsConfig:
    workspace: str = ""
    run_id: str = "run"
    corpus: str = ""

    def __post_init__(self):
        if not self.run_id or "/" in self.run_id or self.run_id in (".", ".."):
            raise ConfigError(f"paths.run_id must be a plain directory name, got {self.run_id!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomConfig = PhantomConfig()
    corpus: CorpusConfig = CorpusConfig()
    train: TrainConfig = TrainConfig()
    detector: TrainConfig = ProtocolConfig().detector
    loss: LossConfig = LossConfig()
    eval: EvalConfig = EvalConfig()
    paths: PathsConfig = PathsConfig()
    arms: tuple[str, ...] = ARMS
    seed: int = 0
    threads: int = 1
    figure_rows: int = 4

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(gan=self.train, detector=self.detector, loss=self.loss,
                              eval=self.eval, arms=self.arms, seed=self.seed)

    def workspace(self) -> Path:
        root = self.paths.workspace or os.environ.get("MGAN_WORKSPACE") or DEFAULT_WORKSPACE
        return Path(root)

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("train", "detector"):
            for key in _TRAIN_RESERVED:
                d[name].pop(key)
        return json.loads(json.dumps(d))

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_SECTIONS = {
    "phantom": PhantomConfig,
    "corpus": CorpusConfig,
    "train": TrainConfig,
    "detector": TrainConfig,
    "loss": LossConfig,
    "eval": EvalConfig,
    "paths": PathsConfig,
}
_TOP_LEVEL = {"arms", "seed", "threads", "figure_rows"}


def _check_type(where: str, value, default):
    if isinstance(default, bool) or isinstance(value, bool):
        ok = type(value) is type(default)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float))
    elif isinstance(default, int):
        ok = isinstance(value, int)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and len(value) == len(default) and all(
            not isinstance(v, bool) and isinstance(v, (int, float) if isinstance(d, float) else int)
            for d, v in zip(default, value))
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{where}: expected a value like {default!r}, got {value!r}")
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(type(d)(v) if isinstance(d, float) else v for d, v in zip(default, value))
    return value


def _section(name: str, cls, table, base):
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    allowed = {f.name for f in fields(cls)}
    if cls is TrainConfig:
        allowed -= _TRAIN_RESERVED
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    values = {k: _check_type(f"{name}.{k}", v, getattr(base, k)) for k, v in table.items()}
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(data: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from an already-parsed TOML document."""
    unknown = sorted(set(data) - set(_SECTIONS) - _TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    base = ExperimentConfig()
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _section(name, cls, data[name], getattr(base, name))
    if "arms" in data:
        arms = data["arms"]
        if not isinstance(arms, list) or not all(isinstance(a, str) for a in arms):
            raise ConfigError("arms must be a list of strings")
        if len(set(arms)) != len(arms):
            raise ConfigError("arms must not repeat")
        kwargs["arms"] = tuple(arms)
    for key in ("seed", "threads", "figure_rows"):
        if key in data:
            kwargs[key] = _check_type(key, data[key], getattr(base, key))
    cfg = replace(base, **kwargs)
    if cfg.threads < 0:
        raise ConfigError("threads must be >= 0 (0 keeps the torch default)")
    if cfg.figure_rows < 0:
        raise ConfigError("figure_rows must be >= 0")
    cfg.protocol()  # validates the arm list
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return parse_config(data)


def default_config_path() -> Path:
    return Path(str(resources.files("mgan") / "configs" / "desk.toml"))
