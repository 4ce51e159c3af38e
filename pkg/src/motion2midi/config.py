"""Plain-text ``section.key = value`` run configuration.

Keys mirror the fields of the config dataclasses (``encoder.channels``,
``schedule.peak_lr``, ``gen.beam``, ...); top-level training knobs live
under ``train.``.  Missing keys take their defaults, unknown keys are
rejected.  :func:`render` writes every key in sorted order, and
``parse(render(cfg)) == cfg``.

Value syntax: integers and floats as Python literals, booleans as
``true``/``false``, tuples as comma-separated items, ``none`` for unset
optionals, strings verbatim.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import ToyInstrumentSpec
from .decoder import DecoderConfig
from .encoder import StgcnConfig
from .generator import GenConfig
from .numerics import LrSchedule
from .pose import AffineRanges
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    run_dir: str = "run"
    log_name: str = "train.log.jsonl"


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    gen: GenConfig = field(default_factory=GenConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def config_hash(self) -> str:
        # checkpoints record the training part only; generation knobs never change weights
        return self.train.config_hash()


# key prefix -> dataclass holding those fields
_NESTED = ("encoder", "decoder", "spec", "affine", "schedule")
_SECTIONS = {
    "train": TrainConfig, "encoder": StgcnConfig, "decoder": DecoderConfig,
    "spec": ToyInstrumentSpec, "affine": AffineRanges, "schedule": LrSchedule,
    "gen": GenConfig, "paths": PathsConfig,
}


def _scalar_fields(kind) -> dict[str, object]:
    hints = typing.get_type_hints(kind)
    return {f.name: hints[f.name] for f in dataclasses.fields(kind)
            if not (kind is TrainConfig and f.name in _NESTED)}


def _is_optional(hint) -> tuple[bool, object]:
    args = typing.get_args(hint)
    if (typing.get_origin(hint) in (typing.Union, types.UnionType)) and type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return True, rest[0]
    return False, hint


def _format(value, hint) -> str:
    _, hint = _is_optional(hint)
    if value is None:
        return "none"
    if typing.get_origin(hint) is tuple:
        return ",".join(_format(v, typing.get_args(hint)[0]) for v in value)
    if hint is bool:
        return "true" if value else "false"
    if hint is float:
        return repr(float(value))
    return str(value)


def _parse_value(text: str, hint, key: str):
    optional, hint = _is_optional(hint)
    if optional and text == "none":
        return None
    try:
        if typing.get_origin(hint) is tuple:
            item = typing.get_args(hint)[0]
            return tuple(_parse_value(part.strip(), item, key) for part in text.split(",")) if text else ()
        if hint is bool:
            if text not in ("true", "false"):
                raise ValueError("expected true or false")
            return text == "true"
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None


def _sections(cfg: RunConfig) -> dict[str, object]:
    out = {"train": cfg.train, "gen": cfg.gen, "paths": cfg.paths}
    out.update({name: getattr(cfg.train, name) for name in _NESTED})
    return out


def known_keys() -> list[str]:
    return sorted(f"{s}.{k}" for s, kind in _SECTIONS.items() for k in _scalar_fields(kind))


def render(cfg: RunConfig) -> str:
    lines = []
    for section, obj in _sections(cfg).items():
        for name, hint in _scalar_fields(type(obj)).items():
            lines.append(f"{section}.{name} = {_format(getattr(obj, name), hint)}")
    return "\n".join(sorted(lines)) + "\n"


def parse(text: str) -> RunConfig:
    values: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"line {lineno}: expected section.key = value, got {raw!r}")
        if section not in _SECTIONS or name not in _scalar_fields(_SECTIONS[section]):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if name in values[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[section][name] = _parse_value(value, _scalar_fields(_SECTIONS[section])[name], key)
    try:
        nested = {name: _SECTIONS[name](**values[name]) for name in _NESTED}
        return RunConfig(
            train=TrainConfig(**nested, **values["train"]),
            gen=GenConfig(**values["gen"]),
            paths=PathsConfig(**values["paths"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse(Path(path).read_text())
