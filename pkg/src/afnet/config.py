"""Plain ``key=value`` run configuration shared by the CLI subcommands."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .features import TARGET_T
from .model import AfConfig, DrnConfig
from .trainer import TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> parser; defaults live on RunConfig
KEYS = {
    "target_T": int,
    "nonlinearity": str,
    "unet_levels": int,
    "unet_channels": int,
    "use_residual_S": _bool,
    "unet_activation": str,
    "drn_blocks": int,
    "drn_activation": str,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "batch_size": int,
    "max_epochs": int,
    "seed": int,
    "shuffle": _bool,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    target_T: int = TARGET_T
    nonlinearity: str = "sigmoid"  # or "none" for a plain DRN
    unet_levels: int = 4
    unet_channels: int = 8
    use_residual_S: bool = True
    unet_activation: str = "relu"
    drn_blocks: int = 5
    drn_activation: str = "relu"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    max_epochs: int = 10
    seed: int = 0
    shuffle: bool = True

    def af_config(self) -> AfConfig | None:
        if self.nonlinearity == "none":
            return None
        return AfConfig(self.nonlinearity, self.unet_levels, self.unet_channels,
                        self.use_residual_S, self.unet_activation)

    def drn_config(self) -> DrnConfig:
        if not 1 <= self.drn_blocks <= 5:
            raise ConfigError("drn_blocks must be between 1 and 5")
        return DrnConfig.micro(self.drn_blocks, self.drn_activation)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.beta1, self.beta2, self.eps, self.batch_size,
                           self.max_epochs, self.seed, self.shuffle)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Defaults, then the file's values, then non-None ``overrides``."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    try:
        cfg.af_config()
        cfg.drn_config()
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg
