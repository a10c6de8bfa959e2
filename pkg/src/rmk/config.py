"""Run configuration: a flat ``section.key = value`` text format with
environment and command-line overrides.

Precedence, lowest first: built-in defaults, the config file, ``RMK_*``
environment variables, then explicit flags.  An environment variable names
a key by upper-casing it and replacing the dot with a double underscore,
so ``RMK_MODEL__D_H=64`` sets ``model.d_h``.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .model import ModelConfig
from .training import TrainConfig

ENV_PREFIX = "RMK_"


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    candidates: int = 100
    n_objects: int = 36
    min_freq: int = 5

    def __post_init__(self):
        if self.candidates < 1 or self.n_objects < 1 or self.min_freq < 1:
            raise ValueError("data sizes must be positive")


@dataclass
class PathsConfig:
    dataset: str = ""
    val_dataset: str = ""
    triples: str = ""
    features: str = ""
    word_vectors: str = ""
    embeddings: str = ""
    checkpoint: str = ""
    log: str = ""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    SECTIONS = ("model", "optim", "data", "paths")

    def items(self) -> list[tuple[str, Any]]:
        out: list[tuple[str, Any]] = [("run.seed", self.seed)]
        for sec in self.SECTIONS:
            for f in dataclasses.fields(getattr(self, sec)):
                out.append((f"{sec}.{f.name}", getattr(getattr(self, sec), f.name)))
        return out

    def to_flat(self) -> dict[str, Any]:
        return dict(self.items())

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """New config with dotted-key overrides; string values are parsed."""
        flat = self.to_flat()
        for key, value in overrides.items():
            if key not in flat:
                raise ConfigError(f"unknown config key {key!r}")
            flat[key] = _coerce(key, value, flat[key]) if isinstance(value, str) else value
        return from_flat(flat)


_TYPES: dict[str, type] = {}


def _field_types() -> dict[str, type]:
    if not _TYPES:
        _TYPES["run.seed"] = int
        defaults = RunConfig()
        for sec in RunConfig.SECTIONS:
            for f in dataclasses.fields(getattr(defaults, sec)):
                _TYPES[f"{sec}.{f.name}"] = type(getattr(getattr(defaults, sec), f.name))
    return _TYPES


def _coerce(key: str, raw: str, _current: Any = None) -> Any:
    kind = _field_types()[key]
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None
    return text


def from_flat(flat: Mapping[str, Any]) -> RunConfig:
    sections: dict[str, dict[str, Any]] = {s: {} for s in RunConfig.SECTIONS}
    seed = 0
    types = _field_types()
    for key, value in flat.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "run.seed":
            seed = value
            continue
        sec, name = key.split(".", 1)
        sections[sec][name] = value
    try:
        return RunConfig(
            model=ModelConfig(**sections["model"]),
            optim=TrainConfig(**sections["optim"]),
            data=DataConfig(**sections["data"]),
            paths=PathsConfig(**sections["paths"]),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Read ``key = value`` lines; ``#`` starts a comment line.

    Keys not mentioned keep their defaults.  Repeated keys are an error.
    """
    seen: dict[str, Any] = {}
    types = _field_types()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: {key} set twice")
        seen[key] = _coerce(key, value)
    flat = RunConfig().to_flat()
    flat.update(seen)
    return from_flat(flat)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    section = None
    for key, value in cfg.items():
        sec = key.split(".", 1)[0]
        if sec != section:
            if section is not None:
                lines.append("")
            section = sec
        lines.append(f"{key} = {_format(value)}".rstrip())
    return "\n".join(lines) + "\n"


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    types = _field_types()
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower().replace("__", ".", 1)
        if key not in types:
            raise ConfigError(f"environment variable {name} does not name a config key")
        out[key] = value
    return out


def resolve_config(
    path: str | Path | None,
    flags: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
    sets: Iterable[str] = (),
) -> RunConfig:
    """File, then environment, then ``--set key=value`` pairs, then flags."""
    cfg = load_config(path)
    cfg = cfg.with_overrides(env_overrides(environ))
    pairs = {}
    for item in sets:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        pairs[key.strip()] = value
    cfg = cfg.with_overrides(pairs)
    return cfg.with_overrides({k: v for k, v in (flags or {}).items() if v is not None})
