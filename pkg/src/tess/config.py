"""Run configuration: a flat ``section.key = value`` text format.

Lines starting with ``#`` and blank lines are ignored. Every key has a
default; unknown keys and unparsable values are errors that name the line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

from tess.errors import ConfigError


@dataclass(frozen=True)
class Field:
    kind: type
    default: Any
    choices: tuple = ()


SCHEMA: dict[str, Field] = {
    "model.preset": Field(str, "toy-dense", ("toy-dense", "toy-conv")),
    "model.layers": Field(str, ""),
    "model.hidden": Field(int, 128),
    "lif.gamma": Field(float, 0.5),
    "lif.v_th": Field(float, 0.6),
    "lif.psi_amplitude": Field(float, 0.3),
    "trace.lambda_pre": Field(float, 0.5),
    "trace.lambda_post": Field(float, 0.2),
    "trace.alpha_pre": Field(float, 1.0),
    "trace.alpha_post": Field(float, 1.0, (-1.0, 0.0, 1.0)),
    "learn.t_l": Field(int, 0),
    "learn.update_mode": Field(str, "per-sequence", ("per-sequence", "per-step")),
    "learn.direction": Field(str, "descent", ("descent", "as-written")),
    "learn.task": Field(str, "classification", ("classification", "regression")),
    "basis.hidden": Field(str, "square-wave", ("square-wave", "identity")),
    "basis.head": Field(str, "identity", ("square-wave", "identity")),
    "optim.name": Field(str, "adam", ("adam", "sgd")),
    "optim.lr": Field(float, 0.001),
    "optim.beta1": Field(float, 0.9),
    "optim.beta2": Field(float, 0.999),
    "optim.eps": Field(float, 1e-8),
    "sched.factor": Field(float, 0.5),
    "sched.patience": Field(int, 5),
    "data.source": Field(str, "synth:2x64x10"),
    "data.noise": Field(float, 0.05),
    "data.samples": Field(int, 1000),
    "train.epochs": Field(int, 20),
    "train.batch_size": Field(int, 32),
    "train.seed": Field(int, 0),
    "train.threads": Field(int, 1),
    "out.dir": Field(str, "runs/latest"),
    "metrics.wall_time": Field(bool, False),
}

_NON_NEGATIVE = ("learn.t_l", "train.epochs", "data.samples")
_POSITIVE = ("model.hidden", "train.batch_size", "train.threads", "sched.patience")


def coerce(key: str, raw: Any) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    spec = SCHEMA[key]
    try:
        if spec.kind is bool:
            if isinstance(raw, bool):
                value = raw
            elif str(raw).strip().lower() in ("true", "1", "yes", "on"):
                value = True
            elif str(raw).strip().lower() in ("false", "0", "no", "off"):
                value = False
            else:
                raise ValueError(raw)
        elif spec.kind is int:
            value = int(str(raw).strip())
        elif spec.kind is float:
            value = float(str(raw).strip())
        else:
            value = str(raw).strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {spec.kind.__name__}") from exc
    if spec.choices and value not in spec.choices:
        raise ConfigError(f"{key}: {value!r} not in {spec.choices}")
    if key in _NON_NEGATIVE and value < 0:
        raise ConfigError(f"{key} must be >= 0")
    if key in _POSITIVE and value < 1:
        raise ConfigError(f"{key} must be >= 1")
    return value


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, raw = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        try:
            values[key.strip()] = coerce(key.strip(), raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


@dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def default(cls) -> RunConfig:
        return cls({k: f.default for k, f in SCHEMA.items()})

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> RunConfig:
        return cls.default().merged(parse_text(text, source))

    @classmethod
    def from_file(cls, path: str | Path) -> RunConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, str(path))

    def merged(self, overrides: dict[str, Any]) -> RunConfig:
        values = dict(self.values)
        for key, raw in overrides.items():
            values[key] = coerce(key, raw)
        return RunConfig(values)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def to_text(self) -> str:
        lines = []
        section = None
        for key in SCHEMA:
            head = key.split(".")[0]
            if head != section:
                if section is not None:
                    lines.append("")
                lines.append(f"# {head}")
                section = head
            value = self.values[key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
        return "\n".join(lines) + "\n"


def parse_assignments(items: list[str]) -> dict[str, str]:
    """``["a.b=1", ...]`` from repeated ``--set`` flags."""
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value
    return out
