"""Run configuration and its flat ``key=value`` file format."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

STAGES = ("source_only", "adapt", "pseudo_label")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 4
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_step: int = 30
    lr_drop: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 0.1
    alpha: float = 0.4
    bank_capacity: int = 16
    k_levels: tuple[int, ...] = (1, 4, 16, 64)
    block_xy: float = 15.0
    coord_scale: float = 2.0
    points_per_block: int = 4096
    eps_scale: float = 0.05
    sinkhorn_iters: int = 100
    keep_fraction: float = 0.8
    stage: str = "adapt"
    num_classes: int = 4
    widths: tuple[int, ...] = (16, 32, 64, 64)
    pl_alignment: bool = True
    align_warmup: int = 0

    def __post_init__(self):
        self.k_levels = tuple(int(k) for k in self.k_levels)
        self.widths = tuple(int(w) for w in self.widths)
        self.validate()

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        positive = ("epochs", "batch_size", "lr_step", "bank_capacity", "block_xy",
                    "points_per_block", "coord_scale", "eps_scale", "sinkhorn_iters", "num_classes")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr0 < 0 or self.weight_decay < 0 or self.lambda1 < 0 or self.lambda2 < 0 or self.alpha < 0:
            raise ConfigError("lr0, weight_decay, lambda1, lambda2 and alpha must be nonnegative")
        if self.align_warmup < 0:
            raise ConfigError(f"align_warmup must be nonnegative, got {self.align_warmup}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0 < self.lr_drop <= 1:
            raise ConfigError(f"lr_drop must lie in (0, 1], got {self.lr_drop}")
        if not 0 < self.keep_fraction <= 1:
            raise ConfigError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")
        if len(self.k_levels) != 4 or min(self.k_levels) < 1:
            raise ConfigError(f"k_levels needs 4 positive values, got {self.k_levels}")
        if len(self.widths) != 4 or min(self.widths) < 1:
            raise ConfigError(f"widths needs 4 positive values, got {self.widths}")
        sizes = level_sizes(self.points_per_block)
        for j, (k, n) in enumerate(zip(self.k_levels, sizes), start=1):
            if k > n:
                raise ConfigError(f"k_levels[{j}]={k} exceeds the {n} points at level {j}")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def aligns(self) -> bool:
        return self.stage == "adapt" or (self.stage == "pseudo_label" and self.pl_alignment)


def level_sizes(n: int) -> list[int]:
    sizes = [n]
    for _ in range(3):
        sizes.append(-(-sizes[-1] // 4))
    return sizes


def _parse_value(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, float, str):
            return kind(raw)
        # tuple[int, ...]
        return tuple(int(v) for v in raw.replace("/", ",").split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


_TYPES = {"seed": int, "epochs": int, "batch_size": int, "lr0": float, "momentum": float,
          "weight_decay": float, "lr_step": int, "lr_drop": float, "lambda1": float,
          "lambda2": float, "alpha": float, "bank_capacity": int, "k_levels": tuple,
          "block_xy": float, "coord_scale": float, "points_per_block": int, "eps_scale": float,
          "sinkhorn_iters": int, "keep_fraction": float, "stage": str, "num_classes": int,
          "widths": tuple, "pl_alignment": bool, "align_warmup": int}


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    changes = {}
    for key, raw in pairs.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = _parse_value(key, raw, _TYPES[key])
    return cfg.replace(**changes)


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value
    return apply_overrides(base or RunConfig(), pairs)


def load_config(path: str | os.PathLike, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def save_config(path: str | os.PathLike, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        fh.write(format_config(cfg))
