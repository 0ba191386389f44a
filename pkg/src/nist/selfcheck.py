"""Built-in correctness checks behind the `selftest` subcommand.

Each check returns quickly (the whole battery runs in seconds) and is
named so a failure pinpoints the broken operator. Gradient checks run in
double precision against central differences.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check, tsum
from .losses import loss_percep, loss_rr, loss_shade
from .mesh import Mesh, TessellationConfig, compute_normals, phong_point, phong_project, tessellate_phong
from .scenes import bar_grid, icosphere


def _rand(shape, seed, lo=-1.0, hi=1.0, grad=True):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=grad)


def _grad_checks():
    for k in (1, 3, 7):
        x = _rand((1, 2, 5, 5), 10 + k)
        w = _rand((3, 2, k, k), 20 + k)
        b = _rand((3,), 30 + k)
        yield (
            f"grad conv2d {k}x{k}",
            lambda x=x, w=w, b=b: grad_check(
                lambda x, w, b: tsum(ad.tanh(ad.conv2d(x, w, b))), [x, w, b]
            )
            < 1e-5,
        )
    x = _rand((1, 3, 4, 4), 40, lo=0.1, hi=0.9)
    yield ("grad leaky_relu", lambda: grad_check(lambda x: tsum(ad.leaky_relu(x, 0.2)), [x]) < 1e-6)
    yield ("grad tanh", lambda: grad_check(lambda x: tsum(ad.tanh(x)), [x]) < 1e-6)
    yield (
        "grad softmax",
        lambda: grad_check(lambda x: tsum(ad.tanh(ad.softmax(x, axis=1))), [x]) < 1e-5,
    )
    rng = np.random.default_rng(41)
    img = Tensor(rng.uniform(0.2, 1.0, (1, 2, 6, 6)), requires_grad=True)
    flow = Tensor(rng.uniform(0.3, 0.7, (1, 2, 6, 6)) * (2.0 / 5.0), requires_grad=True)
    yield (
        "grad grid_sample_bilinear",
        lambda: grad_check(lambda i, f: tsum(ad.tanh(ad.grid_sample_bilinear(i, f))), [img, flow])
        < 1e-4,
    )
    y = _rand((1, 2, 4, 6), 42)
    yield ("grad downsample2", lambda: grad_check(lambda y: tsum(ad.tanh(ad.downsample2(y))), [y]) < 1e-5)
    yield ("grad upsample2", lambda: grad_check(lambda y: tsum(ad.tanh(ad.upsample2(y))), [y]) < 1e-5)
    a = _rand((1, 2, 3, 3), 43)
    c = _rand((1, 3, 3, 3), 44)
    yield (
        "grad concat",
        lambda: grad_check(lambda a, c: tsum(ad.tanh(ad.concat([a, c], 1))), [a, c]) < 1e-5,
    )
    label = np.random.default_rng(45).uniform(0, 1, (1, 3, 6, 6))
    inp = np.random.default_rng(46).uniform(0, 1, (1, 3, 6, 6))
    pred = _rand((1, 3, 6, 6), 47, lo=0.1, hi=0.9)
    yield ("grad loss_rr", lambda: grad_check(lambda p: loss_rr(p, label, inp), [pred]) < 1e-5)
    yield ("grad loss_shade", lambda: grad_check(lambda p: loss_shade(p, label, 5), [pred]) < 1e-5)
    yield ("grad loss_percep", lambda: grad_check(lambda p: loss_percep(p, label, 2), [pred]) < 1e-5)


def _geometry_checks():
    def projection_residual():
        rng = np.random.default_rng(50)
        for _ in range(200):
            p = rng.uniform(-5, 5, 3)
            v = rng.uniform(-5, 5, 3)
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            if abs(np.dot(phong_project(p, v, n) - v, n)) >= 1e-9:
                return False
        return True

    yield ("phong projection residual", projection_residual)

    def corner_fixed_points():
        rng = np.random.default_rng(51)
        vs = rng.uniform(-1, 1, (3, 3))
        ns = rng.normal(size=(3, 3))
        ns /= np.linalg.norm(ns, axis=1, keepdims=True)
        for corner, uvw in enumerate(((1, 0, 0), (0, 1, 0), (0, 0, 1))):
            if not np.array_equal(phong_point(vs, ns, uvw, 0.75), vs[corner]):
                return False
        return True

    yield ("phong corner fixed points", corner_fixed_points)

    def planarity():
        mesh = bar_grid(bars=1)
        out = tessellate_phong(mesh, TessellationConfig(level=4, alpha=0.75))
        return np.abs(out.vertices[:, 2]).max() < 1e-9

    yield ("phong planarity preservation", planarity)

    def sphere_improvement():
        mesh = icosphere(1)
        flat = tessellate_phong(mesh, TessellationConfig(level=3, alpha=0.0))
        curved = tessellate_phong(mesh, TessellationConfig(level=3, alpha=0.75))
        e0 = np.abs(np.linalg.norm(flat.vertices, axis=1) - 1).mean()
        e1 = np.abs(np.linalg.norm(curved.vertices, axis=1) - 1).mean()
        return e1 < e0

    yield ("phong sphere error improvement", sphere_improvement)


def _identity_checks():
    def zero_flow_identity():
        rng = np.random.default_rng(60)
        x = Tensor(rng.uniform(0.1, 1, (1, 3, 9, 9)))
        out = ad.grid_sample_bilinear(x, Tensor(np.zeros((1, 2, 9, 9))))
        return np.array_equal(out.data, x.data)

    yield ("warp zero-flow identity", zero_flow_identity)

    def one_pixel_shift():
        w = 9
        rng = np.random.default_rng(61)
        x = Tensor(rng.uniform(0.1, 1, (1, 1, 9, w)))
        flow = np.zeros((1, 2, 9, w))
        flow[0, 0] = 2.0 / (w - 1)
        out = ad.grid_sample_bilinear(x, Tensor(flow))
        return np.array_equal(out.data[..., : w - 1], x.data[..., 1:])

    yield ("warp one-pixel shift oracle", one_pixel_shift)

    def rr_identity():
        rng = np.random.default_rng(62)
        label = rng.uniform(0, 1, (1, 3, 4, 4))
        return loss_rr(Tensor(label), label, rng.uniform(0, 1, (1, 3, 4, 4))).item() == 0.0

    yield ("loss_rr identity", rr_identity)

    def shade_full_k_is_mean_l1():
        rng = np.random.default_rng(63)
        label = rng.uniform(0, 1, (1, 3, 4, 4))
        pred = rng.uniform(0, 1, (1, 3, 4, 4))
        got = loss_shade(Tensor(pred), label, 16).item()
        return got == np.abs(pred - label).mean(axis=1).mean()

    yield ("loss_shade k=N mean L1", shade_full_k_is_mean_l1)

    def percep_dc_invariance():
        rng = np.random.default_rng(64)
        label = rng.uniform(0, 1, (1, 3, 8, 8))
        return abs(loss_percep(Tensor(label + 0.2), label).item()) < 1e-12

    yield ("loss_percep constant-shift invariance", percep_dc_invariance)


def run_selftest(report=print):
    """Run every check; returns the number of failures."""
    failures = 0
    for name, check in list(_grad_checks()) + list(_geometry_checks()) + list(_identity_checks()):
        try:
            ok = bool(check())
            detail = ""
        except Exception as e:  # a crash is a failure with the reason attached
            ok = False
            detail = f" ({e})"
        if ok:
            report(f"ok    {name}")
        else:
            report(f"FAIL  {name}{detail}")
            failures += 1
    return failures
