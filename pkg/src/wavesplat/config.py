"""Pipeline configuration: dataclass defaults plus key=value file parsing.

Config files are UTF-8 lines of `key = value` with `#` comments. Every key
must name a PipelineConfig field (the loss weight is spelled `lambda`);
unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

STRATEGIES = ("orm-online", "orm-offline", "loo")
REPAIR_MODES = ("identity", "wavelet", "wavelet+hf")


@dataclass
class PipelineConfig:
    n_views: int = 4
    coarse_iters: int = 800
    dataset_iters: int = 600
    fine_iters: int = 1200
    n_m: int = 10
    coverage: float = 0.5
    lambda_: float = 0.2
    pseudo_gt_ratio: float = 0.5
    novel_view_count: int = 16
    seed: int = 0
    strategy: str = "orm-online"
    repair: str = "wavelet+hf"
    # scene / optimizer knobs
    resolution: int = 64
    n_primitives: int = 512
    support_sigma: float = 3.0
    lr_position: float = 0.01
    lr_other: float = 0.005
    dataset_init_from_coarse: bool = True
    pseudo_refresh_interval: int = 0  # 0 = pseudo ground truths stay frozen

    def validate(self) -> "PipelineConfig":
        counts = {
            "n_views": self.n_views, "coarse_iters": self.coarse_iters,
            "dataset_iters": self.dataset_iters, "fine_iters": self.fine_iters,
            "n_m": self.n_m, "novel_view_count": self.novel_view_count,
            "resolution": self.resolution, "n_primitives": self.n_primitives,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if not 0.0 < self.coverage < 1.0:
            raise ConfigError(f"coverage must be in (0, 1), got {self.coverage}")
        for name, value in (("lambda", self.lambda_), ("pseudo_gt_ratio", self.pseudo_gt_ratio)):
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.repair not in REPAIR_MODES:
            raise ConfigError(f"repair must be one of {REPAIR_MODES}, got {self.repair!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")
        if self.support_sigma <= 0 or self.lr_position <= 0 or self.lr_other <= 0:
            raise ConfigError("support_sigma and learning rates must be positive")
        return self


_KEY_TO_FIELD = {("lambda" if f.name == "lambda_" else f.name): f for f in fields(PipelineConfig)}


def _parse_value(field, raw: str, where: str):
    if field.type == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    try:
        if field.type == "int":
            return int(raw)
        if field.type == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {field.type}") from None
    return raw


def parse_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read a config file; missing keys take defaults, unknown keys error."""
    cfg = PipelineConfig()
    text = Path(path).read_text(encoding="utf-8")
    for ln, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        field = _KEY_TO_FIELD.get(key)
        if field is None:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        setattr(cfg, field.name, _parse_value(field, raw, f"{path}:{ln}"))
    if overrides:
        for key, value in overrides.items():
            setattr(cfg, key, value)
    return cfg.validate()


def config_to_text(cfg: PipelineConfig) -> str:
    lines = []
    for key, field in _KEY_TO_FIELD.items():
        value = getattr(cfg, field.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(config_to_text(cfg), encoding="utf-8")
