"""Run configuration: plain-text key=value files plus CLI flag overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


def _parse_fanouts(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _parse_bool(text):
    if isinstance(text, bool):
        return text
    val = str(text).strip().lower()
    if val in ("1", "true", "yes"):
        return True
    if val in ("0", "false", "no"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_PARSERS = {
    "graph": str,
    "features": str,
    "labels": str,
    "partition": str,
    "train_set": str,
    "out": str,
    "model": str,
    "mode": str,
    "layers": int,
    "hidden": int,
    "fanouts": _parse_fanouts,
    "batch_size": int,
    "lr": float,
    "epochs": int,
    "cache_fraction": float,
    "devices": int,
    "seed": int,
    "workers": int,
    "balance_eps": float,
}


@dataclass
class RunConfig:
    """Everything a training or bench run needs, validated up front."""

    graph: str | None = None
    features: str | None = None
    labels: str | None = None
    partition: str | None = None
    train_set: str | None = None
    out: str = "."
    model: str = "graphsage"
    mode: str = "split"
    layers: int = 2
    hidden: int = 16
    fanouts: tuple = (5, 5)
    batch_size: int = 256
    lr: float = 0.1
    epochs: int = 1
    cache_fraction: float = 0.25
    devices: int = 4
    seed: int = 0
    workers: int = 1
    balance_eps: float = 0.05

    def validate(self):
        if self.graph is None:
            raise ConfigError("a graph path is required")
        if self.model not in ("graphsage", "gat"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.mode not in ("single", "split", "data_parallel"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if len(self.fanouts) != self.layers:
            raise ConfigError(
                f"fanouts has {len(self.fanouts)} entries but layers={self.layers}"
            )
        if any(f < 0 for f in self.fanouts):
            raise ConfigError("fanouts must be non-negative")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (0.0 <= self.cache_fraction <= 1.0):
            raise ConfigError("cache_fraction must be in [0, 1]")
        if self.devices < 1:
            raise ConfigError("devices must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.balance_eps < 0:
            raise ConfigError("balance_eps must be >= 0")
        return self


def parse_config_file(path) -> dict:
    """key=value lines; blank lines and ``#`` comments ignored."""
    values = {}
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, raw = text.partition("=")
            values[key.strip()] = raw.strip()
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None):
    """Merge config-file values with CLI overrides (overrides win).

    Unknown keys are rejected; values are parsed to their typed form.
    """
    known = {f.name for f in fields(RunConfig)}
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, raw in source.items():
            if raw is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                merged[key] = _PARSERS[key](raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return RunConfig(**merged).validate()
