"""Run configuration: one flat key=value namespace over scene, model,
loss, and optimizer settings.

Configs load from plain-text files (one key=value per line, '#'
comments) with command-line overrides applied on top. Unknown keys are
rejected by name, which catches typos before they silently train the
wrong model.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .losses import LossConfig
from .network import ModelConfig
from .training import OptimConfig


@dataclass
class RunConfig:
    # scene / dataset
    scene: str = "icosphere1"
    material: str = "checker"
    ambient: float = 0.25
    tess_level: int = 6
    alpha: float = 0.75
    res: str = "128x128"
    frames: int = 200
    # model
    scales: int = 3
    guide_channels: int = 32
    deform_channels: int = 32
    color_channels: int = 32
    flow_scale: float = 0.05
    leaky_slope: float = 0.2
    working_divisor: int = 2
    flow_compose: bool = False
    variant: str = "full"
    # loss; preset "paper" replaces the lambdas with 0.1 / 10 / 30
    loss_preset: str = "desk"
    epsilon: float = 1e-6
    k_fraction: float = 0.01
    lambda_rr: float = 0.1
    lambda_shade: float = 10.0
    lambda_percep: float = 1.0
    # optimizer / loop
    lr: float = 1e-4
    weight_decay: float = 1e-5
    steps: int = 2000
    batch_size: int = 2
    crop: int = 128
    seed: int = 7
    checkpoint_interval: int = 500

    def resolution(self):
        w, _, h = self.res.partition("x")
        try:
            return int(w), int(h)
        except ValueError as e:
            raise ValueError(f"bad resolution {self.res!r}, expected WxH") from e

    def to_model_config(self) -> ModelConfig:
        return ModelConfig(
            scales=self.scales,
            guide_channels=self.guide_channels,
            deform_channels=self.deform_channels,
            color_channels=self.color_channels,
            flow_scale=self.flow_scale,
            leaky_slope=self.leaky_slope,
            working_divisor=self.working_divisor,
            flow_compose=self.flow_compose,
            variant=self.variant,
        )

    def to_loss_config(self) -> LossConfig:
        if self.loss_preset == "paper":
            return LossConfig.paper_preset()
        if self.loss_preset != "desk":
            raise ValueError(f"unknown loss preset {self.loss_preset!r}")
        return LossConfig(
            epsilon=self.epsilon,
            k_fraction=self.k_fraction,
            lambda_rr=self.lambda_rr,
            lambda_shade=self.lambda_shade,
            lambda_percep=self.lambda_percep,
        )

    def to_optim_config(self) -> OptimConfig:
        return OptimConfig(lr=self.lr, weight_decay=self.weight_decay)


def _coerce(name: str, value: str, current):
    if isinstance(current, bool):
        low = value.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"key {name!r}: expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def apply_assignments(config: RunConfig, assignments) -> RunConfig:
    """Apply key=value string pairs in order; unknown keys are errors."""
    known = {f.name for f in fields(RunConfig)}
    for item in assignments:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"malformed assignment {item!r}, expected key=value")
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        setattr(config, key, _coerce(key, value.strip(), getattr(config, key)))
    return config


def load_run_config(path=None, overrides=()) -> RunConfig:
    config = RunConfig()
    if path is not None:
        lines = []
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if line:
                lines.append(line)
        apply_assignments(config, lines)
    apply_assignments(config, overrides)
    return config
