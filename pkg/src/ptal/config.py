"""Run configuration shared by every CLI subcommand.

Precedence is flags > JSON config file > the defaults below. The resolved
config is written into every artifact for provenance.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .metrics import DEFAULT_IOUS


@dataclass
class RunConfig:
    seed: int = 7
    T_s: int = 64
    theta: float = 0.15
    beta: float = 1.25
    lr_main: float = 1e-4
    lr_mapper: float = 1e-5
    sg_window: int = 31
    sg_order: int = 2
    iou_thresholds: list = field(default_factory=lambda: list(DEFAULT_IOUS))
    kp_epochs: int = 50
    loc_epochs: int = 50
    loc_batch: int = 1
    mapper_pairs: int = 100_000
    mapper_epochs: int = 400
    mapper_batch: int = 64
    mapper_target: float = 0.99
    use_offset: bool = True
    use_bg_loss: bool = True
    pool_divisor: str = "T_s"
    threads: int = 1
    paths: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.T_s < 2:
            raise ConfigError(f"T_s must be >= 2, got {self.T_s}")
        if not 0.0 <= self.theta < 1.0:
            raise ConfigError(f"theta must lie in [0, 1), got {self.theta}")
        if self.sg_window < 1 or self.sg_window % 2 == 0 or self.sg_order >= self.sg_window:
            raise ConfigError(f"bad smoothing window/order {self.sg_window}/{self.sg_order}")
        if self.lr_main <= 0 or self.lr_mapper <= 0 or self.beta < 0:
            raise ConfigError("learning rates must be > 0 and beta >= 0")
        if not self.iou_thresholds or any(not 0.0 < t <= 1.0 for t in self.iou_thresholds):
            raise ConfigError(f"IoU thresholds must be non-empty and in (0, 1]: {self.iou_thresholds}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def resolve(cls, config_file=None, overrides: dict | None = None) -> "RunConfig":
        """Defaults, then the JSON file, then explicit overrides."""
        values = {}
        env_threads = os.environ.get("PTAL_THREADS")
        if env_threads:
            try:
                values["threads"] = int(env_threads)
            except ValueError as exc:
                raise ConfigError(f"PTAL_THREADS must be an integer, got {env_threads!r}") from exc
        if config_file is not None:
            path = Path(config_file)
            if not path.is_file():
                raise FileNotFoundError(f"missing config file: {path}")
            try:
                values.update(json.loads(path.read_text()))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**values)
        cfg.iou_thresholds = [float(t) for t in cfg.iou_thresholds]
        cfg.validate()
        return cfg
