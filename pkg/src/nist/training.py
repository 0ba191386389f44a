"""Optimizer, deterministic training loop, and ablation variants."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .evaluation import silhouette_mask
from .losses import LossConfig, total_loss
from .network import (
    VARIANTS,
    ModelConfig,
    batch_from_frames,
    forward,
    init_params,
    save_checkpoint,
)
from .raster import load_frame, read_manifest


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class OptimState:
    """Per-parameter Adam moments plus the shared step counter."""

    def __init__(self, params, config: OptimConfig | None = None):
        self.config = config or OptimConfig()
        self.step = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params, state: OptimState):
    """Bias-corrected Adam with decoupled weight decay; updates in place."""
    cfg = state.config
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"missing gradient for parameter {name}")
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        p.data -= cfg.lr * (update + cfg.weight_decay * p.data)


def make_ablation(config: ModelConfig, variant: str) -> ModelConfig:
    """Architecture/objective variants for the ablation study.

    no_deform swaps the attention-based deformation module for a plain
    3x3 double convolution on the guidance state; no_warp removes the
    flow heads and feeds unwarped features forward; no_percep keeps the
    full architecture and zeroes the perceptual weight at training time.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}; options: {', '.join(VARIANTS)}")
    return replace(config, variant=variant)


# ---------------------------------------------------------------------------
# data pipeline


class FrameDataset:
    """All frames of a manifest resident in memory, NCHW float32, with
    per-frame silhouette masks for crop biasing."""

    def __init__(self, manifest):
        if isinstance(manifest, (str, Path)):
            manifest = read_manifest(manifest)
        if manifest.count == 0:
            raise ValueError(f"dataset {manifest.root} is empty")
        self.manifest = manifest
        frames = [load_frame(manifest.frame_dir(i)) for i in range(manifest.count)]
        self.arrays = batch_from_frames(frames)
        self.sil = np.stack(
            [silhouette_mask(f.coverage, f.gnormal) for f in frames]
        )

    @property
    def count(self):
        return self.manifest.count

    @property
    def height(self):
        return self.arrays["color"].shape[2]

    @property
    def width(self):
        return self.arrays["color"].shape[3]

    def crop_batch(self, indices, offsets, crop):
        out = {}
        for key, arr in self.arrays.items():
            views = [
                arr[i, :, y : y + crop, x : x + crop] for i, (y, x) in zip(indices, offsets)
            ]
            out[key] = np.stack(views)
        return out


class _EpochSampler:
    """Uniform sampling without replacement, reshuffling per epoch."""

    def __init__(self, count, rng):
        self.count = count
        self.rng = rng
        self.order = rng.permutation(count)
        self.pos = 0

    def draw(self, n):
        picked = []
        while len(picked) < n:
            if self.pos == self.count:
                self.order = self.rng.permutation(self.count)
                self.pos = 0
            picked.append(int(self.order[self.pos]))
            self.pos += 1
        return picked


def _pick_offsets(dataset: FrameDataset, indices, crop, rng, bias_prob=0.8, tries=20):
    """Random crop offsets, biased to contain silhouette pixels."""
    offsets = []
    max_y = dataset.height - crop
    max_x = dataset.width - crop
    for i in indices:
        if max_y == 0 and max_x == 0:
            offsets.append((0, 0))
            continue
        want_sil = rng.uniform() < bias_prob
        y = x = 0
        for _ in range(tries):
            y = int(rng.integers(0, max_y + 1))
            x = int(rng.integers(0, max_x + 1))
            if not want_sil or dataset.sil[i, y : y + crop, x : x + crop].any():
                break
        offsets.append((y, x))
    return offsets


@dataclass
class TrainResult:
    checkpoint_path: Path
    trace_path: Path
    steps: int


def train(
    manifest,
    model_config: ModelConfig,
    loss_config: LossConfig,
    steps: int,
    batch_size: int,
    seed: int,
    checkpoint_dir,
    optim_config: OptimConfig | None = None,
    crop: int = 128,
    checkpoint_interval: int = 500,
    progress=None,
) -> TrainResult:
    """Deterministic training run.

    Frames are sampled without replacement per epoch; crops are biased
    toward silhouette pixels. One line per step is appended to the loss
    trace ("step total rr shade percep"); checkpoints are written
    atomically every checkpoint_interval steps and at completion. A
    non-finite loss aborts with the step index.
    """
    ad.tune_allocator()
    dataset = FrameDataset(manifest)
    crop = min(crop, dataset.height, dataset.width)
    model_config.check_resolution(crop, crop)
    if model_config.variant == "no_percep":
        loss_config = replace(loss_config, lambda_percep=0.0)

    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = checkpoint_dir / "model.ckpt"
    trace_path = checkpoint_dir / "loss_trace.txt"

    params = init_params(model_config, seed)
    optim = OptimState(params, optim_config)
    rng = np.random.default_rng(seed)
    sampler = _EpochSampler(dataset.count, rng)

    trace_lines = []
    for step in range(1, steps + 1):
        indices = sampler.draw(batch_size)
        offsets = _pick_offsets(dataset, indices, crop, rng)
        batch = dataset.crop_batch(indices, offsets, crop)
        pred = forward(batch, params, model_config)
        loss, breakdown = total_loss(pred, batch["label"], batch["color"], loss_config)
        value = float(loss.data)
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite loss at step {step}; aborting")
        for p in params.values():
            p.zero_grad()
        ad.backward(loss)
        adam_step(params, optim)
        trace_lines.append(
            f"{step} {value:.9e} {breakdown['rr']:.9e} "
            f"{breakdown['shade']:.9e} {breakdown['percep']:.9e}"
        )
        if step % checkpoint_interval == 0:
            save_checkpoint(ckpt_path, params, model_config)
        if progress is not None:
            progress(step, value)

    save_checkpoint(ckpt_path, params, model_config)
    trace_path.write_text("\n".join(trace_lines) + ("\n" if trace_lines else ""))
    return TrainResult(ckpt_path, trace_path, steps)
