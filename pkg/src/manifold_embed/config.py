"""Run configuration: a flat, line-oriented `key = value` file.

Blank lines and `#` comments are ignored. Unknown keys are rejected so
a typo cannot silently fall back to a default. `serialize` emits every
key in a fixed order with repr'd floats, and `parse(serialize(cfg))`
round-trips exactly; command outputs embed that canonical form as the
provenance snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    source: str = ""  # "cube" or "synthetic"
    cube_path: str | None = None
    window: int = 5
    synthetic_classes: int = 3
    synthetic_subclusters: int = 2
    synthetic_samples: int = 100
    synthetic_dim: int = 3
    synthetic_manifold: str = "arc"
    synthetic_noise: float = 0.05
    split_mode: str = "fraction"
    split_amount: float = 0.5
    seed: int = 0
    k: int = 5
    b: int = 5
    hidden_dims: tuple[int, ...] = (256, 128)
    feature_dim: int = 64
    lr: float = 0.001
    iterations: int = 5000
    batch_size: int = 84
    dmem_weight: float = 0.0001
    beta: float = 0.0001
    delta: float = 1.0
    hinge: bool = True
    log_every: int = 100
    wall_clock: bool = False
    out: str | None = None
    palette: str | None = None
    against: str | None = None
    dump_geodesics: bool = False
    sweep_k: tuple[int, ...] | None = None
    sweep_b: tuple[int, ...] | None = None
    sweep_delta: tuple[float, ...] | None = None
    sweep_lambda: tuple[float, ...] | None = None
    sweep_seeds: tuple[int, ...] | None = None

    def validate(self) -> None:
        if self.source not in ("cube", "synthetic"):
            raise ConfigError(
                f"source must be 'cube' or 'synthetic', got {self.source!r}"
            )
        if self.source == "cube" and not self.cube_path:
            raise ConfigError("source = cube requires cube_path")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and positive, got {self.window}")
        if self.synthetic_manifold not in ("swiss-roll", "arc", "gaussian-blob"):
            raise ConfigError(f"unknown manifold {self.synthetic_manifold!r}")
        for name in ("synthetic_classes", "synthetic_subclusters",
                     "synthetic_samples", "synthetic_dim", "k", "b",
                     "feature_dim", "iterations", "batch_size", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.synthetic_noise < 0:
            raise ConfigError("synthetic_noise must be non-negative")
        if self.split_mode not in ("count", "fraction"):
            raise ConfigError(
                f"split_mode must be 'count' or 'fraction', got {self.split_mode!r}"
            )
        if self.split_mode == "count":
            if self.split_amount < 1 or self.split_amount != int(self.split_amount):
                raise ConfigError("count split_amount must be a positive integer")
        elif not 0.0 < self.split_amount <= 1.0:
            raise ConfigError("fraction split_amount must be in (0, 1]")
        if any(d < 1 for d in self.hidden_dims):
            raise ConfigError("hidden_dims entries must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.dmem_weight < 0 or self.beta < 0:
            raise ConfigError("lambda and beta must be non-negative")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")


# config-file key -> dataclass field (identity unless renamed)
_KEY_TO_FIELD = {f.name: f.name for f in fields(RunConfig)}
_KEY_TO_FIELD["lambda"] = "dmem_weight"
del _KEY_TO_FIELD["dmem_weight"]
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}

_INT_FIELDS = {
    "window", "synthetic_classes", "synthetic_subclusters", "synthetic_samples",
    "synthetic_dim", "seed", "k", "b", "feature_dim", "iterations",
    "batch_size", "log_every",
}
_FLOAT_FIELDS = {"synthetic_noise", "split_amount", "lr", "dmem_weight",
                 "beta", "delta"}
_BOOL_FIELDS = {"hinge", "wall_clock", "dump_geodesics"}
_STR_FIELDS = {"source", "synthetic_manifold", "split_mode"}
_OPT_STR_FIELDS = {"cube_path", "out", "palette", "against"}
_INT_LIST_FIELDS = {"hidden_dims", "sweep_k", "sweep_b", "sweep_seeds"}
_FLOAT_LIST_FIELDS = {"sweep_delta", "sweep_lambda"}


def _parse_bool(value: str, where: str) -> bool:
    low = value.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"{where}: expected true/false, got {value!r}")


def _parse_value(field_name: str, value: str, where: str):
    try:
        if field_name in _INT_FIELDS:
            return int(value)
        if field_name in _FLOAT_FIELDS:
            return float(value)
        if field_name in _BOOL_FIELDS:
            return _parse_bool(value, where)
        if field_name in _STR_FIELDS:
            return value
        if field_name in _OPT_STR_FIELDS:
            return value or None
        parts = [p.strip() for p in value.split(",") if p.strip()]
        if field_name in _INT_LIST_FIELDS:
            items = tuple(int(p) for p in parts)
        else:
            items = tuple(float(p) for p in parts)
        if field_name == "hidden_dims":
            return items
        return items or None
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {field_name}: {exc}") from None


def parse(text: str, origin: str = "<config>") -> RunConfig:
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{ln}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEY_TO_FIELD:
            raise ConfigError(f"{origin}:{ln}: unknown key {key!r}")
        field_name = _KEY_TO_FIELD[key]
        if field_name in values:
            raise ConfigError(f"{origin}:{ln}: duplicate key {key!r}")
        values[field_name] = _parse_value(field_name, value, f"{origin}:{ln}")
    return replace(RunConfig(), **values)


def load(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse(p.read_text(encoding="utf-8"), origin=str(p))


def _format_value(field_name: str, value) -> str:
    if value is None:
        return ""
    if field_name in _BOOL_FIELDS:
        return "true" if value else "false"
    if field_name in _FLOAT_FIELDS:
        return repr(float(value))
    if field_name in _INT_LIST_FIELDS:
        return ",".join(str(v) for v in value)
    if field_name in _FLOAT_LIST_FIELDS:
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def serialize(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        key = _FIELD_TO_KEY[f.name]
        lines.append(f"{key} = {_format_value(f.name, getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"
