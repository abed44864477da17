"""One declarative TOML file drives every command.

Sections mirror the config dataclasses: [generator], [model], [train],
[eval], [compare], [paths]. Values round-trip losslessly through
to_toml/parse, so an emitted config reproduces the run that made it.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .evaluation import EvalConfig
from .model import ModelConfig
from .synthgen import GeneratorConfig
from .training import TrainConfig


@dataclass(frozen=True)
class RunPaths:
    data: str = ""        # events.ndjson
    manifest: str = ""    # manifest.json
    checkpoint: str = ""  # model checkpoint (read side; train writes into out)
    out: str = ""         # output directory


@dataclass(frozen=True)
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: RunPaths = field(default_factory=RunPaths)
    compare_seeds: tuple[int, ...] = (0, 1, 2)


_SECTIONS = {
    "generator": GeneratorConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "paths": RunPaths,
}


def _coerce(section: str, f: dataclasses.Field, value):
    kind = f.type
    if kind.startswith("tuple"):
        if not isinstance(value, list):
            raise ConfigError(f"[{section}] {f.name} must be an array")
        inner = int if "int" in kind else float
        return tuple(inner(v) for v in value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}] {f.name} must be a number")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section}] {f.name} must be an integer")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"[{section}] {f.name} must be a string")
        return value
    raise ConfigError(f"[{section}] {f.name} has unsupported type {kind}")


def _build(section: str, cls, raw: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in [{section}]")
    kwargs = {k: _coerce(section, known[k], v) for k, v in raw.items()}
    return cls(**kwargs)


def _reconcile_lambdas(model_raw: dict, train_raw: dict) -> None:
    """The aux-head weights appear in both [model] and [train]; keep them equal.

    An explicit value in either section applies to both; conflicting explicit
    values are rejected rather than silently preferring one.
    """
    for key in ("lambda_domain", "lambda_property"):
        m, t = model_raw.get(key), train_raw.get(key)
        if m is not None and t is not None and float(m) != float(t):
            raise ConfigError(f"{key} differs between [model] and [train]")
        v = t if t is not None else m
        if v is not None:
            model_raw[key] = v
            train_raw[key] = v


def parse(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config file: {exc}") from exc
    extra = set(doc) - set(_SECTIONS) - {"compare"}
    if extra:
        raise ConfigError(f"unknown section [{sorted(extra)[0]}]")
    for name, body in doc.items():
        if not isinstance(body, dict):
            raise ConfigError(f"top-level key {name!r} must be a section")

    raw = {name: dict(doc.get(name, {})) for name in _SECTIONS}
    _reconcile_lambdas(raw["model"], raw["train"])
    if "variant" not in raw["train"] and "variant" in raw["model"]:
        raw["train"]["variant"] = raw["model"]["variant"]

    compare_raw = dict(doc.get("compare", {}))
    seeds = compare_raw.pop("seeds", [0, 1, 2])
    if compare_raw:
        raise ConfigError(f"unknown key {sorted(compare_raw)[0]!r} in [compare]")
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in seeds
    ):
        raise ConfigError("[compare] seeds must be a non-empty array of integers")

    return RunConfig(
        generator=_build("generator", GeneratorConfig, raw["generator"]),
        model=_build("model", ModelConfig, raw["model"]),
        train=_build("train", TrainConfig, raw["train"]),
        eval=_build("eval", EvalConfig, raw["eval"]),
        paths=_build("paths", RunPaths, raw["paths"]),
        compare_seeds=tuple(seeds),
    )


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    return parse(text)


def _format_value(v) -> str:
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        out = repr(v)
        return out if any(c in out for c in ".einf") else out + ".0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, tuple):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def to_toml(rc: RunConfig) -> str:
    lines: list[str] = []
    for name, cls in _SECTIONS.items():
        lines.append(f"[{name}]")
        section = getattr(rc, name)
        for f in fields(cls):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
        lines.append("")
    lines.append("[compare]")
    lines.append(f"seeds = {_format_value(rc.compare_seeds)}")
    lines.append("")
    return "\n".join(lines)


def apply_overrides(rc: RunConfig, seed: int | None = None, out: str | None = None) -> RunConfig:
    """--seed retargets every per-module seed; --out replaces the output dir."""
    if seed is not None:
        rc = dataclasses.replace(
            rc,
            generator=dataclasses.replace(rc.generator, seed=seed),
            train=dataclasses.replace(rc.train, seed=seed),
            eval=dataclasses.replace(rc.eval, seed=seed),
        )
    if out is not None:
        rc = dataclasses.replace(rc, paths=dataclasses.replace(rc.paths, out=out))
    return rc
