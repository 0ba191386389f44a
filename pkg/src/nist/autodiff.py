"""Dense-tensor reverse-mode automatic differentiation.

A small tape-based engine on top of numpy arrays, supplying exactly the
operators the silhouette-refinement network needs: 2D convolution,
pointwise activations, channel softmax, bilinear warping, pyramid
resampling, concatenation, and the reductions used by the losses.

Conventions:
  * image tensors are laid out batch x channels x height x width,
  * float32 is the training dtype, float64 the testing dtype
    (finite-difference oracles need the extra precision),
  * backward() replays recorded operations in exact reverse execution
    order; calling it twice without zeroing accumulates gradients.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg.blas import dgemm as _dgemm
from scipy.linalg.blas import sgemm as _sgemm
from scipy.sparse import csr_matrix as _csr_matrix

# Test-only fault injection: set to an operator name (e.g. "conv2d") to
# corrupt that operator's backward rule so self-check harnesses can prove
# they would catch a broken gradient. Never set outside tests.
_fault_target: str | None = None

_allocator_tuned = False


def tune_allocator():
    """Keep large buffers on the glibc heap instead of per-allocation mmap.

    Training allocates and frees tens of multi-megabyte scratch planes per
    step; with the default mmap threshold every one of them is returned to
    the kernel and re-faulted on the next step. Safe to call repeatedly;
    silently does nothing on non-glibc platforms.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return
    _allocator_tuned = True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except Exception:
        pass


def _padded_plane(core_nchw, ph, pw, channels_last_dtype=None):
    """Channels-last plane with a zeroed padding ring around the core."""
    b, c, h, w = core_nchw.shape
    out = np.empty((b, h + 2 * ph, w + 2 * pw, c), dtype=core_nchw.dtype)
    if ph:
        out[:, :ph] = 0.0
        out[:, ph + h :] = 0.0
    if pw:
        out[:, ph : ph + h, :pw] = 0.0
        out[:, ph : ph + h, pw + w :] = 0.0
    out[:, ph : ph + h, pw : pw + w, :] = core_nchw.transpose(0, 2, 3, 1)
    return out

_op_counter = itertools.count()

_grad_enabled = True


class no_grad:
    """Context manager disabling graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """N-d float array participating in a reverse-mode autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = next(_op_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def _accumulate_owned(self, g):
        """Like _accumulate for gradients the caller freshly allocated;
        skips the defensive copy on first arrival."""
        if self.grad is None:
            self.grad = np.asarray(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; scalars allowed on either side
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _make(data, parents, backward_fn):
    """Record one operation if grad mode is on and any parent needs it."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss):
    """Populate .grad for every requires_grad tensor reachable from loss.

    loss must be scalar (size 1). Gradients accumulate across calls;
    callers reset with zero_grad between steps.
    """
    if loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Collect the subgraph, then replay in reverse execution order
    # (sequence numbers are assigned at creation time).
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)

    loss._accumulate(np.ones_like(loss.data))
    for t in sorted(nodes, key=lambda n: n._seq, reverse=True):
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g if a.size > 1 else g.sum())
        if b.requires_grad:
            b._accumulate(g if b.size > 1 else g.sum())

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g if a.size > 1 else g.sum())
        if b.requires_grad:
            b._accumulate(-g if b.size > 1 else -g.sum())

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)

    def bw(g):
        if a.requires_grad:
            ga = g * b.data
            a._accumulate(ga if a.size > 1 else ga.sum())
        if b.requires_grad:
            gb = g * a.data
            b._accumulate(gb if b.size > 1 else gb.sum())

    return _make(a.data * b.data, (a, b), bw)


def absolute(x):
    s = np.sign(x.data)

    def bw(g):
        x._accumulate(g * s)

    return _make(np.abs(x.data), (x,), bw)


def clamp01(x):
    """Clamp to [0, 1]; subgradient passes through on the boundary."""
    inside = (x.data >= 0.0) & (x.data <= 1.0)

    def bw(g):
        x._accumulate(g * inside)

    return _make(np.clip(x.data, 0.0, 1.0), (x,), bw)


# ---------------------------------------------------------------------------
# reductions


def tsum(x, axis=None, keepdims=False):
    def bw(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(gg, x.shape))

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def tmean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.size
    else:
        n = x.shape[axis]

    def bw(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g / n, x.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(gg / n, x.shape))

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), bw)


# ---------------------------------------------------------------------------
# activations


def leaky_relu(x, slope=0.2):
    pos = x.data >= 0
    scale = np.where(pos, np.asarray(1.0, x.dtype), np.asarray(slope, x.dtype))

    def bw(g):
        x._accumulate_owned(g * scale)

    return _make(np.where(pos, x.data, x.data * np.asarray(slope, x.dtype)), (x,), bw)


def tanh(x):
    out_data = np.tanh(x.data)

    def bw(g):
        x._accumulate_owned(g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), bw)


def softmax(x, axis):
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate_owned(out_data * (g - dot))

    return _make(out_data, (x,), bw)


# ---------------------------------------------------------------------------
# convolution


def _gemm_acc(a, b_mat, c, beta):
    """c = a @ b_mat + beta * c, in place; all operands C-contiguous 2-d.

    Dispatches through the Fortran BLAS transpose identity
    (C^T = B^T A^T), so no operand is copied.
    """
    fn = _sgemm if a.dtype == np.float32 else _dgemm
    fn(1.0, b_mat.T, a.T, beta=beta, c=c.T, overwrite_c=1)


def _gemm_at_b(a, b_mat, c, beta):
    """c = a^T @ b_mat + beta * c for C-contiguous a (M,K1), b (M,K2),
    c (K1,K2); again pure views via the Fortran transpose identity."""
    fn = _sgemm if a.dtype == np.float32 else _dgemm
    fn(1.0, b_mat.T, a.T, beta=beta, c=c.T, trans_b=1, overwrite_c=1)


def conv2d(x, weight, bias, padding="same", stride=1):
    """Cross-correlation with same-padding at stride 1 (odd kernels).

    Shifted-GEMM formulation: the input is laid out as one zero-padded
    channels-last plane, and each kernel tap contributes a single GEMM
    between flat-shifted views of that plane. Shifts that cross row or
    batch boundaries land only in padding cells, which are discarded, so
    no column matrix is ever materialized.
    """
    if stride != 1:
        raise ValueError("only stride 1 is supported")
    if padding != "same":
        raise ValueError("only same padding is supported")
    b, c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weight.shape
    if c_in != c_in_w:
        raise ValueError(
            f"conv2d channel mismatch: input has {c_in} channels, weight expects {c_in_w}"
        )
    if bias.shape != (c_out,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({c_out},)")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("same padding requires odd kernel sizes")
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    n = b * hp * wp

    xp = _padded_plane(x.data, ph, pw)
    xflat = xp.reshape(n, c_in)
    # per-tap weight matrices, (kh*kw, c_in, c_out), centre tap first
    w_taps = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0)).reshape(
        kh * kw, c_in, c_out
    )
    offsets = [(i - ph) * wp + (j - pw) for i in range(kh) for j in range(kw)]
    centre = offsets.index(0)
    order = [centre] + [t for t in range(kh * kw) if t != centre]

    acc = np.empty((n, c_out), dtype=x.dtype)
    for pos, t in enumerate(order):
        off = offsets[t]
        wt = w_taps[t]
        if off >= 0:
            _gemm_acc(xflat[off:], wt, acc[: n - off], beta=0.0 if pos == 0 else 1.0)
        else:
            _gemm_acc(xflat[: n + off], wt, acc[-off:], beta=0.0 if pos == 0 else 1.0)
    out_hwc = acc.reshape(b, hp, wp, c_out)[:, ph : ph + h, pw : pw + w, :]
    out_hwc += bias.data
    out_data = np.ascontiguousarray(out_hwc.transpose(0, 3, 1, 2))

    def bw(g):
        gp = _padded_plane(g, ph, pw)
        gflat = gp.reshape(n, c_out)
        if weight.requires_grad:
            dw_taps = np.empty((kh * kw, c_in, c_out), dtype=x.dtype)
            for t, off in enumerate(offsets):
                if off >= 0:
                    _gemm_at_b(xflat[off:], gflat[: n - off], dw_taps[t], beta=0.0)
                else:
                    _gemm_at_b(xflat[: n + off], gflat[-off:], dw_taps[t], beta=0.0)
            if _fault_target == "conv2d":
                dw_taps = dw_taps + 1e-2
            weight._accumulate_owned(
                np.ascontiguousarray(
                    dw_taps.reshape(kh, kw, c_in, c_out).transpose(3, 2, 0, 1)
                )
            )
        if bias.requires_grad:
            bias._accumulate_owned(
                g.sum(axis=(0, 2, 3)).astype(x.dtype, copy=False)
            )
        if x.requires_grad:
            dxp = np.empty((n, c_in), dtype=x.dtype)
            for pos, t in enumerate(order):
                off = offsets[t]
                wt_t = np.ascontiguousarray(w_taps[t].T)
                beta = 0.0 if pos == 0 else 1.0
                # forward read xp[r+off] for out[r]; so dxp[r+off] += g[r] @ W^T
                if off >= 0:
                    _gemm_acc(gflat[: n - off], wt_t, dxp[off:], beta=beta)
                    if pos == 0 and off > 0:
                        dxp[:off] = 0.0
                else:
                    _gemm_acc(gflat[-off:], wt_t, dxp[: n + off], beta=beta)
                    if pos == 0:
                        dxp[n + off :] = 0.0
            dx_hwc = dxp.reshape(b, hp, wp, c_in)[:, ph : ph + h, pw : pw + w, :]
            x._accumulate_owned(np.ascontiguousarray(dx_hwc.transpose(0, 3, 1, 2)))

    return _make(out_data, (x, weight, bias), bw)


# ---------------------------------------------------------------------------
# resampling


def downsample2(x):
    """2x2 average pooling; spatial dims must be even."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsample2 needs even spatial dims, got {h}x{w}")
    out_data = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(g):
        dx = np.empty((b, c, h, w), dtype=x.dtype)
        g4 = g * 0.25
        dx.reshape(b, c, h // 2, 2, w // 2, 2)[:] = g4[:, :, :, None, :, None]
        x._accumulate_owned(dx)

    return _make(out_data, (x,), bw)


_upsample_mats: dict = {}


def _upsample_matrix(n, dtype):
    """(2n x n) bilinear x2 interpolation matrix, half-pixel-centre aligned."""
    key = (n, np.dtype(dtype).str)
    m = _upsample_mats.get(key)
    if m is None:
        m = np.zeros((2 * n, n), dtype=dtype)
        for o in range(2 * n):
            src = (o + 0.5) / 2.0 - 0.5
            src = min(max(src, 0.0), n - 1.0)
            i0 = int(np.floor(src))
            i1 = min(i0 + 1, n - 1)
            t = src - i0
            m[o, i0] += 1.0 - t
            m[o, i1] += t
        _upsample_mats[key] = m
    return m


def upsample2(x):
    """Bilinear x2 upsampling (separable, exact transpose in backward)."""
    b, c, h, w = x.shape
    uh = _upsample_matrix(h, x.dtype)
    uw = _upsample_matrix(w, x.dtype)
    flat = x.data.reshape(b * c, h, w)
    out_data = (uh @ flat @ uw.T).reshape(b, c, 2 * h, 2 * w)

    def bw(g):
        gf = g.reshape(b * c, 2 * h, 2 * w)
        x._accumulate_owned((uh.T @ gf @ uw).reshape(b, c, h, w))

    return _make(out_data, (x,), bw)


def concat(xs, axis=1):
    xs = list(xs)
    base = xs[0].shape
    for t in xs[1:]:
        if len(t.shape) != len(base) or any(
            t.shape[d] != base[d] for d in range(len(base)) if d != axis
        ):
            raise ValueError(f"concat shape mismatch: {[t.shape for t in xs]}")
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(xs, parts):
            if t.requires_grad:
                t._accumulate(p)

    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), bw)


# ---------------------------------------------------------------------------
# bilinear backward warping


def grid_sample_bilinear(x, flow):
    """Backward warp: output(p) = x sampled at p + flow(p).

    flow is batch x 2 x H x W in normalized coordinates where (-1,-1) is
    the top-left pixel centre and (1,1) the bottom-right; channel 0
    displaces along width, channel 1 along height. Samples outside the
    image clamp to the border. Differentiable in x and flow.

    Zero flow reproduces x bitwise: sampling positions are formed as
    pixel_index + flow * (size-1)/2, so a zero offset never leaves the
    lattice.
    """
    b, c, h, w = x.shape
    if flow.shape != (b, 2, h, w):
        raise ValueError(
            f"flow must have shape ({b}, 2, {h}, {w}), got {tuple(flow.shape)}"
        )
    dtype = x.dtype
    sx = (w - 1) / 2.0
    sy = (h - 1) / 2.0
    jj = np.arange(w, dtype=dtype)
    ii = np.arange(h, dtype=dtype)
    px = jj[None, None, :] + flow.data[:, 0] * dtype.type(sx)
    py = ii[None, :, None] + flow.data[:, 1] * dtype.type(sy)
    # derivative of the clamp is zero outside the image
    open_x = (px > 0.0) & (px < w - 1)
    open_y = (py > 0.0) & (py < h - 1)
    px = np.clip(px, 0.0, w - 1)
    py = np.clip(py, 0.0, h - 1)
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = px - x0
    fy = py - y0

    bidx = np.arange(b)[:, None, None]
    # gather -> (b, h, w, c)
    src = x.data.transpose(0, 2, 3, 1)
    v00 = src[bidx, y0, x0]
    v01 = src[bidx, y0, x1]
    v10 = src[bidx, y1, x0]
    v11 = src[bidx, y1, x1]
    w00 = ((1.0 - fx) * (1.0 - fy))[..., None]
    w01 = (fx * (1.0 - fy))[..., None]
    w10 = ((1.0 - fx) * fy)[..., None]
    w11 = (fx * fy)[..., None]
    out_hwc = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11
    out_data = np.ascontiguousarray(out_hwc.transpose(0, 3, 1, 2))

    def bw(g):
        g_hwc = g.transpose(0, 2, 3, 1)
        if x.requires_grad:
            # the gather is a sparse linear map per batch item; scatter all
            # channels at once through its transpose
            hw = h * w
            out_rows = np.arange(hw, dtype=np.intp)
            dx = np.empty((b, hw, c), dtype=dtype)
            for bi in range(b):
                cols = np.concatenate(
                    [
                        (y0[bi] * w + x0[bi]).ravel(),
                        (y0[bi] * w + x1[bi]).ravel(),
                        (y1[bi] * w + x0[bi]).ravel(),
                        (y1[bi] * w + x1[bi]).ravel(),
                    ]
                )
                vals = np.concatenate(
                    [
                        w00[bi].ravel(),
                        w01[bi].ravel(),
                        w10[bi].ravel(),
                        w11[bi].ravel(),
                    ]
                )
                rows = np.tile(out_rows, 4)
                scatter = _csr_matrix((vals, (cols, rows)), shape=(hw, hw))
                dx[bi] = scatter @ g_hwc[bi].reshape(hw, c)
            x._accumulate_owned(
                np.ascontiguousarray(dx.reshape(b, h, w, c).transpose(0, 3, 1, 2))
            )
        if flow.requires_grad:
            # d(out)/d(px): lerp along y of horizontal differences
            dpx = ((v01 - v00) * (1.0 - fy)[..., None] + (v11 - v10) * fy[..., None])
            dpy = ((v10 - v00) * (1.0 - fx)[..., None] + (v11 - v01) * fx[..., None])
            gx = (g_hwc * dpx).sum(axis=-1) * open_x * dtype.type(sx)
            gy = (g_hwc * dpy).sum(axis=-1) * open_y * dtype.type(sy)
            flow._accumulate_owned(np.stack([gx, gy], axis=1))

    return _make(out_data, (x, flow), bw)


# ---------------------------------------------------------------------------
# spatial finite differences and top-k selection (loss building blocks)


def spatial_diff(x, axis):
    """Forward difference along a spatial axis (2 = height, 3 = width)."""
    if axis not in (2, 3):
        raise ValueError("spatial_diff axis must be 2 or 3")
    if axis == 2:
        out_data = x.data[:, :, 1:, :] - x.data[:, :, :-1, :]
    else:
        out_data = x.data[:, :, :, 1:] - x.data[:, :, :, :-1]

    def bw(g):
        dx = np.zeros_like(x.data)
        if axis == 2:
            dx[:, :, 1:, :] += g
            dx[:, :, :-1, :] -= g
        else:
            dx[:, :, :, 1:] += g
            dx[:, :, :, :-1] -= g
        x._accumulate_owned(dx)

    return _make(out_data, (x,), bw)


def topk_pixel_mean(residual, k):
    """Mean of the k largest entries of each image's H x W residual map,
    averaged over the batch. Ties break toward the lower pixel index."""
    b, h, w = residual.shape
    n = h * w
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, n)
    flat = residual.data.reshape(b, n)
    # stable argsort of the negated values: equal residuals keep index order.
    # The selected entries are then summed in pixel-index order so that
    # k = n reproduces the plain mean bitwise.
    order = np.sort(np.argsort(-flat, axis=1, kind="stable")[:, :k], axis=1)
    vals = np.take_along_axis(flat, order, axis=1)
    out_data = np.asarray(vals.mean(), dtype=residual.dtype)

    def bw(g):
        dr = np.zeros((b, n), dtype=residual.dtype)
        np.put_along_axis(
            dr, order, np.asarray(g / (b * k), dtype=residual.dtype), axis=1
        )
        residual._accumulate(dr.reshape(b, h, w))

    return _make(out_data, (residual,), bw)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, inputs, eps=1e-4, subset=256, seed=0):
    """Max relative error between analytic and central-difference gradients.

    f maps the input tensors to a scalar Tensor. Inputs above 10^4
    elements are probed on a seeded random subset of `subset` elements.
    Relative error uses max(|analytic|, |numeric|, 1) as the denominator
    so near-zero gradients degrade to an absolute comparison.
    """
    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else None for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, ana in zip(inputs, analytic):
        if not t.requires_grad:
            continue
        if ana is None:
            ana = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        idxs = np.arange(n) if n <= 10_000 else rng.choice(n, size=min(subset, n), replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f(*inputs).data)
            flat[i] = orig - eps
            f_minus = float(f(*inputs).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(ana.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst
