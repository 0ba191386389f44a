"""Multi-scale silhouette-refinement network.

Two encoders feed a coarse-to-fine loop. The guidance encoder sees only
geometric cues (camera-space face normals, shading normals, depth,
coverage) and funnels them into a pyramid; the color encoder keeps one
full-resolution feature map plus a working-resolution pyramid. At each
scale a deformation module updates an implicit deformation state via a
channel-softmax gated attention, a flow head turns that state into a
bounded backward-warp field, and the warping module re-aligns guidance
and color features. Per-scale flows accumulate into a cumulative field
that finally warps the full-resolution color features ahead of the
decoder.

All learnable mappings are Double Convolutions: two stacked convolutions
with a leaky rectifier in between. The deformation block's first kernel
is 7x7 for receptive field; everything else is 3x3.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"NIST"
CHECKPOINT_VERSION = 1

VARIANTS = ("full", "no_deform", "no_warp", "no_percep")


@dataclass(frozen=True)
class ModelConfig:
    scales: int = 3
    guide_channels: int = 32
    deform_channels: int = 32
    color_channels: int = 32
    flow_scale: float = 0.05  # bound of each per-scale flow, normalized units
    leaky_slope: float = 0.2
    working_divisor: int = 2  # working resolution = input resolution / divisor
    flow_compose: bool = False  # resample running flow at displaced positions
    variant: str = "full"

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError("scales must be >= 1")
        if not 0.0 < self.flow_scale <= 1.0:
            raise ValueError("flow_scale must lie in (0, 1]")
        d = self.working_divisor
        if d < 1 or (d & (d - 1)) != 0:
            raise ValueError("working_divisor must be a power of two >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def min_multiple(self):
        """Input resolutions must divide by this (working-resolution
        divisibility across the pyramid)."""
        return self.working_divisor * (1 << (self.scales - 1))

    def check_resolution(self, h, w):
        m = self.min_multiple
        if h % m or w % m:
            raise ValueError(
                f"input {w}x{h} violates working-resolution divisibility: "
                f"dimensions must be multiples of {m} "
                f"(working divisor {self.working_divisor} x 2^{self.scales - 1} scales)"
            )


# ---------------------------------------------------------------------------
# parameters


def _layer_specs(config: ModelConfig):
    """Ordered (name, c_in, c_out, kernel, zero_init) conv specs."""
    cg, cd, cc = config.guide_channels, config.deform_channels, config.color_channels
    t_count = config.scales
    specs = []

    def dconv(prefix, cin, cout, k1=3, k2=3):
        specs.append((f"{prefix}.w1", cin, cout, k1, False))
        specs.append((f"{prefix}.w2", cout, cout, k2, False))

    # guidance encoder: finest level from the 8 stacked cues, then a
    # double convolution per coarser level
    dconv("guide.enc0", 8, cg)
    for s in range(1, t_count):
        dconv(f"guide.enc{s}", cg, cg)
    # color: full-resolution features plus the working-resolution pyramid
    dconv("color.full", 3, cc)
    dconv("color.enc0", cc, cc)
    for s in range(1, t_count):
        dconv(f"color.enc{s}", cc, cc)
    for t in range(1, t_count + 1):
        cin_kv = cg if t == 1 else cd
        if config.variant == "no_deform":
            dconv(f"scale{t}.deform", cg, cd)
        else:
            dconv(f"scale{t}.q", cg, cd)
            dconv(f"scale{t}.k", cin_kv, cd)
            dconv(f"scale{t}.v", cin_kv, cd)
            dconv(f"scale{t}.attn", 2 * cd, cd)
            dconv(f"scale{t}.deform", cd, cd, k1=7)
        if config.variant != "no_warp":
            specs.append((f"scale{t}.flow.w1", cd, cd, 3, False))
            specs.append((f"scale{t}.flow.w2", cd, 2, 3, True))
        dconv(f"scale{t}.merge", 2 * cc, cc)
    # decoder sees the warped full-resolution color features, the final
    # deformation state, and the final refined color state (the last one is
    # what gives the per-scale merge path its gradient)
    dconv("dec.mix", cc + cd + cc, cc)
    specs.append(("dec.out.w", cc, 3, 3, False))
    return specs


def init_params(config: ModelConfig, seed: int, dtype=np.float32):
    """He fan-in initialized weights, zero biases; every flow head's final
    layer starts at zero so the first forward pass is an identity warp."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, cin, cout, k, zero in _layer_specs(config):
        if zero:
            w = np.zeros((cout, cin, k, k), dtype=dtype)
        else:
            std = np.sqrt(2.0 / (cin * k * k))
            w = rng.normal(0.0, std, size=(cout, cin, k, k)).astype(dtype)
        params[name] = Tensor(w, requires_grad=True)
        bname = name.replace(".w", ".b")
        params[bname] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
    return params


def parameter_count(config: ModelConfig):
    return sum((cout * cin * k * k) + cout for _, cin, cout, k, _ in _layer_specs(config))


def _double_conv(params, prefix, x, slope):
    y = ad.conv2d(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"])
    y = ad.leaky_relu(y, slope)
    return ad.conv2d(y, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


# ---------------------------------------------------------------------------
# forward pieces


def deformation_step(z_g, z_prev, t, params, config: ModelConfig):
    """One implicit-deformation update at scale t.

    z_g is the guidance state at scale t; z_prev seeds the keys/values
    (the coarsest guidance level at t=1, the upsampled deformation state
    afterwards). The gate is a per-pixel channel softmax on features of
    the concatenated query/key pair, applied elementwise to the values.
    """
    if z_g.shape[2:] != z_prev.shape[2:]:
        raise ValueError(
            f"scale mismatch at t={t}: guidance {z_g.shape[2:]} vs state {z_prev.shape[2:]}"
        )
    slope = config.leaky_slope
    if config.variant == "no_deform":
        return _double_conv(params, f"scale{t}.deform", z_g, slope)
    q = _double_conv(params, f"scale{t}.q", z_g, slope)
    k = _double_conv(params, f"scale{t}.k", z_prev, slope)
    v = _double_conv(params, f"scale{t}.v", z_prev, slope)
    gate = ad.softmax(_double_conv(params, f"scale{t}.attn", ad.concat([q, k], 1), slope), axis=1)
    attended = ad.mul(gate, v)
    return _double_conv(params, f"scale{t}.deform", attended, slope)


def warp_step(z_d, z_g_prev, zc_hat_prev, z_c, vtilde_prev, t, params, config: ModelConfig):
    """Predict the scale-t flow and re-align features.

    All inputs arrive at scale-t resolution (cross-scale tensors are
    bilinearly upsampled by the caller; normalized-coordinate flows
    transfer across scales without value rescaling). Returns
    (v, vtilde, warped guidance state, merged color state).
    """
    hw = z_d.shape[2:]
    for name, tens in (
        ("guidance", z_g_prev),
        ("color state", zc_hat_prev),
        ("encoder color", z_c),
        ("running flow", vtilde_prev),
    ):
        if tens.shape[2:] != hw:
            raise ValueError(
                f"flow/feature resolution mismatch at t={t}: {name} {tens.shape[2:]} vs {hw}"
            )
    slope = config.leaky_slope
    if config.variant == "no_warp":
        b = z_d.shape[0]
        v = Tensor(np.zeros((b, 2) + tuple(hw), dtype=z_d.data.dtype))
        vtilde = vtilde_prev
        z_g_new = z_g_prev
        zc_prev_w = zc_hat_prev
        zc_w = z_c
    else:
        raw = _double_conv(params, f"scale{t}.flow", z_d, slope)
        v = ad.mul(ad.tanh(raw), config.flow_scale)
        if config.flow_compose and t > 1:
            vtilde = ad.add(v, ad.grid_sample_bilinear(vtilde_prev, v))
        else:
            vtilde = ad.add(v, vtilde_prev)
        z_g_new = ad.grid_sample_bilinear(z_g_prev, v)
        zc_prev_w = ad.grid_sample_bilinear(zc_hat_prev, v)
        zc_w = ad.grid_sample_bilinear(z_c, vtilde)
    zc_hat = _double_conv(params, f"scale{t}.merge", ad.concat([zc_prev_w, zc_w], 1), slope)
    return v, vtilde, z_g_new, zc_hat


def encode_guidance(gnormal, snormal, depth, coverage, params, config: ModelConfig):
    """Guidance pyramid from geometric cues only; index 0 is the coarsest
    scale. Inputs are full-resolution NCHW tensors; they are average-pooled
    to the working resolution before encoding."""
    stack = ad.concat([gnormal, snormal, depth, coverage], 1)
    stack = _pool_by(stack, config.working_divisor)
    levels = [None] * config.scales
    levels[config.scales - 1] = _double_conv(params, "guide.enc0", stack, config.leaky_slope)
    for s in range(1, config.scales):
        coarser = ad.downsample2(levels[config.scales - s])
        levels[config.scales - 1 - s] = _double_conv(
            params, f"guide.enc{s}", coarser, config.leaky_slope
        )
    return levels


def _pool_by(x, divisor):
    while divisor > 1:
        x = ad.downsample2(x)
        divisor //= 2
    return x


def _upsample_by(x, factor):
    while factor > 1:
        x = ad.upsample2(x)
        factor //= 2
    return x


@dataclass
class ForwardState:
    """Intermediate tensors exposed for tests and diagnostics."""

    guide_pyramid: list
    color_pyramid: list
    color_full: Tensor
    deform_states: list
    flows: list  # v per scale, coarsest first
    cum_flows: list  # running flow after each scale
    output: Tensor


def _as_constant(arr, dtype):
    return Tensor(np.ascontiguousarray(arr, dtype=dtype))


def batch_from_frames(frames, dtype=np.float32):
    """Stack GBufferFrames into NCHW arrays for forward()."""
    def chw(stack):
        a = np.stack(stack)
        return a.transpose(0, 3, 1, 2) if a.ndim == 4 else a[:, None]

    return {
        "color": chw([f.color for f in frames]).astype(dtype),
        "gnormal": chw([f.gnormal for f in frames]).astype(dtype),
        "snormal": chw([f.snormal for f in frames]).astype(dtype),
        "depth": chw([f.depth for f in frames]).astype(dtype),
        "coverage": chw([f.coverage for f in frames]).astype(dtype),
        "label": chw([f.label for f in frames]).astype(dtype),
    }


def forward(batch, params, config: ModelConfig, want_state=False):
    """Full forward pass: batch dict of NCHW arrays -> predicted image.

    Scales run coarsest to finest. The guidance state starts at the
    coarsest pyramid level and is carried across scales by upsampling and
    incremental warping; fresh encoder color features join at every scale
    and are aligned with the cumulative flow. The final cumulative flow
    is upsampled to full resolution and applied to the full-resolution
    color features before decoding.
    """
    dtype = next(iter(params.values())).data.dtype
    color = _as_constant(batch["color"], dtype)
    gnormal = _as_constant(batch["gnormal"], dtype)
    snormal = _as_constant(batch["snormal"], dtype)
    depth = _as_constant(batch["depth"], dtype)
    coverage = _as_constant(batch["coverage"], dtype)
    b, _, h, w = color.shape
    config.check_resolution(h, w)

    slope = config.leaky_slope
    t_count = config.scales
    guide_pyr = encode_guidance(gnormal, snormal, depth, coverage, params, config)

    color_full = _double_conv(params, "color.full", color, slope)
    col_levels = [None] * t_count
    base = _pool_by(color_full, config.working_divisor)
    col_levels[t_count - 1] = _double_conv(params, "color.enc0", base, slope)
    for s in range(1, t_count):
        coarser = ad.downsample2(col_levels[t_count - s])
        col_levels[t_count - 1 - s] = _double_conv(params, f"color.enc{s}", coarser, slope)

    hw1 = guide_pyr[0].shape[2:]
    vtilde = Tensor(np.zeros((b, 2) + tuple(hw1), dtype=dtype))
    z_g_state = guide_pyr[0]
    zc_hat = col_levels[0]
    z_d = None
    flows, cum_flows, deform_states = [], [], []
    for t in range(1, t_count + 1):
        if t == 1:
            z_g_in = guide_pyr[0]
            z_prev = guide_pyr[0]
        else:
            z_g_in = ad.upsample2(z_g_state)
            z_prev = ad.upsample2(z_d)
            zc_hat = ad.upsample2(zc_hat)
            vtilde = ad.upsample2(vtilde)
        z_d = deformation_step(z_g_in, z_prev, t, params, config)
        v, vtilde, z_g_state, zc_hat = warp_step(
            z_d, z_g_in, zc_hat, col_levels[t - 1], vtilde, t, params, config
        )
        flows.append(v)
        cum_flows.append(vtilde)
        deform_states.append(z_d)

    vtilde_full = _upsample_by(vtilde, config.working_divisor)
    z_d_full = _upsample_by(z_d, config.working_divisor)
    zc_hat_full = _upsample_by(zc_hat, config.working_divisor)
    if config.variant == "no_warp":
        warped_full = color_full
    else:
        warped_full = ad.grid_sample_bilinear(color_full, vtilde_full)
    mixed = _double_conv(
        params, "dec.mix", ad.concat([warped_full, z_d_full, zc_hat_full], 1), slope
    )
    out = ad.conv2d(mixed, params["dec.out.w"], params["dec.out.b"])
    out = ad.clamp01(out)
    if want_state:
        return out, ForwardState(
            guide_pyramid=guide_pyr,
            color_pyramid=col_levels,
            color_full=color_full,
            deform_states=deform_states,
            flows=flows,
            cum_flows=cum_flows,
            output=out,
        )
    return out


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, config block, then per-tensor records


def _config_to_block(config: ModelConfig) -> bytes:
    lines = [f"{f.name}={getattr(config, f.name)}" for f in fields(config)]
    return "\n".join(lines).encode("utf-8")


def _config_from_block(block: bytes) -> ModelConfig:
    kwargs = {}
    types = {f.name: f.type for f in fields(ModelConfig)}
    defaults = ModelConfig()
    for line in block.decode("utf-8").splitlines():
        key, _, val = line.partition("=")
        if key not in types:
            raise ValueError(f"checkpoint config has unknown key {key!r}")
        current = getattr(defaults, key)
        if isinstance(current, bool):
            kwargs[key] = val == "True"
        elif isinstance(current, int):
            kwargs[key] = int(val)
        elif isinstance(current, float):
            kwargs[key] = float(val)
        else:
            kwargs[key] = val
    return ModelConfig(**kwargs)


def save_checkpoint(path, params, config: ModelConfig):
    """Versioned binary checkpoint; the write is atomic (temp + rename)."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(np.uint32(CHECKPOINT_VERSION).astype("<u4").tobytes())
    block = _config_to_block(config)
    buf.write(np.uint32(len(block)).astype("<u4").tobytes())
    buf.write(block)
    buf.write(np.uint32(len(params)).astype("<u4").tobytes())
    for name, tensor in params.items():
        nb = name.encode("utf-8")
        buf.write(np.uint32(len(nb)).astype("<u4").tobytes())
        buf.write(nb)
        shape = tensor.data.shape
        buf.write(np.uint32(len(shape)).astype("<u4").tobytes())
        for dim in shape:
            buf.write(np.uint32(dim).astype("<u4").tobytes())
        buf.write(tensor.data.astype("<f4", copy=False).tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path, expected_config: ModelConfig | None = None):
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    if bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 4

    def u32():
        nonlocal off
        val = int(np.frombuffer(view[off : off + 4], dtype="<u4")[0])
        off += 4
        return val

    version = u32()
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    blen = u32()
    config = _config_from_block(bytes(view[off : off + blen]))
    off += blen
    if expected_config is not None and config != expected_config:
        diffs = [
            f.name
            for f in fields(ModelConfig)
            if getattr(config, f.name) != getattr(expected_config, f.name)
        ]
        raise ValueError(f"checkpoint config mismatch on: {', '.join(diffs)}")
    count = u32()
    params = {}
    for _ in range(count):
        nlen = u32()
        name = bytes(view[off : off + nlen]).decode("utf-8")
        off += nlen
        rank = u32()
        shape = tuple(u32() for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(view[off : off + 4 * n], dtype="<f4").reshape(shape)
        off += 4 * n
        params[name] = Tensor(data.copy(), requires_grad=True)
    return config, params
