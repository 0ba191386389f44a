"""Acceptance suite: every criterion runs at its stated tolerance and
prints one PASS/FAIL line.

Criteria 6-8 train the full desk-scale configuration (four variants,
2000 steps each, plus a bitwise repeat), so this module is the long part
of the test run; everything is seeded and deterministic.
"""

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

import nist.autodiff as ad
from nist.autodiff import Tensor, grad_check, tsum
from nist.evaluation import evaluate
from nist.losses import LossConfig, loss_percep, loss_rr, loss_shade, total_loss
from nist.mesh import TessellationConfig, phong_point, phong_project, tessellate_phong
from nist.network import ModelConfig, batch_from_frames, forward, init_params
from nist.raster import generate_dataset, load_frame, make_pair, _orbit_cameras
from nist.scenes import Material, SceneSpec, icosphere
from nist.training import make_ablation, train

SCENE = SceneSpec(shape="icosphere", shape_params=(1,), material=Material("checker"))
TESS = TessellationConfig(level=6, alpha=0.75)
RES = 128
TRAIN_FRAMES, TEST_FRAMES = 200, 20
STEPS = 2000
SEED = 7
ALL_VARIANTS = ("full", "no_deform", "no_warp", "no_percep")


def report(criterion, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"\n{tag} criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@dataclass
class DeskRun:
    root: Path
    train_manifest: object
    test_manifest: object
    checkpoints: dict
    traces: dict
    reports: dict


def _train_all(root, train_manifest, subdir):
    checkpoints, traces = {}, {}
    for variant in ALL_VARIANTS:
        cfg = make_ablation(ModelConfig(), variant)
        result = train(
            train_manifest.root,
            cfg,
            LossConfig(),
            steps=STEPS,
            batch_size=2,
            seed=SEED,
            checkpoint_dir=root / subdir / variant,
            crop=RES,
        )
        checkpoints[variant] = result.checkpoint_path
        traces[variant] = result.trace_path
    return checkpoints, traces


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    train_manifest = generate_dataset(
        SCENE, TRAIN_FRAMES, SEED, TESS, root / "train_data", width=RES, height=RES
    )
    test_manifest = generate_dataset(
        SCENE, TEST_FRAMES, SEED + 1000, TESS, root / "test_data", width=RES, height=RES
    )
    checkpoints, traces = _train_all(root, train_manifest, "run1")
    reports = {v: evaluate(checkpoints[v], test_manifest) for v in ALL_VARIANTS}
    return DeskRun(root, train_manifest, test_manifest, checkpoints, traces, reports)


# ---------------------------------------------------------------------------
# criterion 1: operator correctness under finite differences


def test_criterion_1_operator_gradients():
    t0 = time.time()
    rng = np.random.default_rng(100)
    worst_smooth = 0.0
    for k in (1, 3, 7):
        x = Tensor(rng.uniform(-1, 1, (2, 3, 5, 5)), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (4, 3, k, k)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, 4), requires_grad=True)
        err = grad_check(lambda x, w, b: tsum(ad.tanh(ad.conv2d(x, w, b))), [x, w, b])
        worst_smooth = max(worst_smooth, err)
    x = Tensor(rng.uniform(0.1, 0.9, (2, 4, 4, 4)), requires_grad=True)
    worst_smooth = max(worst_smooth, grad_check(lambda x: tsum(ad.leaky_relu(x, 0.2)), [x]))
    worst_smooth = max(worst_smooth, grad_check(lambda x: tsum(ad.tanh(x)), [x]))
    worst_smooth = max(
        worst_smooth, grad_check(lambda x: tsum(ad.tanh(ad.softmax(x, axis=1))), [x])
    )
    y = Tensor(rng.uniform(-1, 1, (1, 2, 4, 6)), requires_grad=True)
    worst_smooth = max(worst_smooth, grad_check(lambda y: tsum(ad.tanh(ad.downsample2(y))), [y]))
    worst_smooth = max(worst_smooth, grad_check(lambda y: tsum(ad.tanh(ad.upsample2(y))), [y]))
    a = Tensor(rng.uniform(-1, 1, (1, 2, 3, 3)), requires_grad=True)
    c = Tensor(rng.uniform(-1, 1, (1, 3, 3, 3)), requires_grad=True)
    worst_smooth = max(
        worst_smooth, grad_check(lambda a, c: tsum(ad.tanh(ad.concat([a, c], 1))), [a, c])
    )
    label = rng.uniform(0, 1, (1, 3, 6, 6))
    inp = rng.uniform(0, 1, (1, 3, 6, 6))
    pred = Tensor(rng.uniform(0.1, 0.9, (1, 3, 6, 6)), requires_grad=True)
    worst_smooth = max(worst_smooth, grad_check(lambda p: loss_rr(p, label, inp), [pred]))
    worst_smooth = max(worst_smooth, grad_check(lambda p: loss_shade(p, label, 5), [pred]))
    worst_smooth = max(worst_smooth, grad_check(lambda p: loss_percep(p, label, 2), [pred]))

    img = Tensor(rng.uniform(0.2, 1.0, (1, 2, 6, 6)), requires_grad=True)
    flow = Tensor(rng.uniform(0.3, 0.7, (1, 2, 6, 6)) * (2.0 / 5.0), requires_grad=True)
    bilinear_err = grad_check(
        lambda i, f: tsum(ad.tanh(ad.grid_sample_bilinear(i, f))), [img, flow]
    )
    elapsed = time.time() - t0
    report(
        1,
        worst_smooth < 1e-5 and bilinear_err < 1e-4 and elapsed < 300,
        f"smooth ops max rel err {worst_smooth:.2e} (<1e-5), bilinear {bilinear_err:.2e} "
        f"(<1e-4), runtime {elapsed:.1f}s (<300s)",
    )


# ---------------------------------------------------------------------------
# criterion 2: tessellation oracle


def test_criterion_2_phong_oracle():
    t0 = time.time()
    rng = np.random.default_rng(200)
    worst_residual = 0.0
    for _ in range(500):
        p = rng.uniform(-5, 5, 3)
        v = rng.uniform(-5, 5, 3)
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        worst_residual = max(worst_residual, abs(np.dot(phong_project(p, v, n) - v, n)))

    corners_exact = True
    for _ in range(50):
        vs = rng.uniform(-2, 2, (3, 3))
        ns = rng.normal(size=(3, 3))
        ns /= np.linalg.norm(ns, axis=1, keepdims=True)
        for corner, uvw in enumerate(((1, 0, 0), (0, 1, 0), (0, 0, 1))):
            if not np.array_equal(phong_point(vs, ns, uvw, rng.uniform(0, 1)), vs[corner]):
                corners_exact = False

    from nist.scenes import bar_grid

    planar = tessellate_phong(bar_grid(bars=2), TessellationConfig(level=5, alpha=0.75))
    planar_err = np.abs(planar.vertices[:, 2]).max()

    sphere = icosphere(1)
    flat = tessellate_phong(sphere, TessellationConfig(level=3, alpha=0.0))
    curved = tessellate_phong(sphere, TessellationConfig(level=3, alpha=0.75))
    err_flat = np.abs(np.linalg.norm(flat.vertices, axis=1) - 1).mean()
    err_curved = np.abs(np.linalg.norm(curved.vertices, axis=1) - 1).mean()
    elapsed = time.time() - t0
    report(
        2,
        worst_residual < 1e-9
        and corners_exact
        and planar_err < 1e-9
        and err_curved < err_flat
        and elapsed < 60,
        f"plane residual {worst_residual:.1e} (<1e-9), corners exact {corners_exact}, "
        f"planarity {planar_err:.1e} (<1e-9), sphere error {err_curved:.2e} < {err_flat:.2e} "
        f"(alpha 3/4 beats flat), runtime {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# criterion 3: warp semantics


def test_criterion_3_warp_semantics():
    rng = np.random.default_rng(300)
    x = Tensor(rng.uniform(0.1, 1.0, (1, 3, 9, 9)))
    identity = np.array_equal(
        ad.grid_sample_bilinear(x, Tensor(np.zeros((1, 2, 9, 9)))).data, x.data
    )

    w = 9  # w-1 is a power of two so one pixel pitch is exact in binary
    flow = np.zeros((1, 2, 9, w))
    flow[0, 0] = 2.0 / (w - 1)
    shifted = ad.grid_sample_bilinear(x, Tensor(flow)).data
    roll_exact = np.array_equal(shifted[..., : w - 1], x.data[..., 1:])

    # two-scale accumulation against the single-warp oracle, double precision
    cfg = ModelConfig(scales=2, guide_channels=8, deform_channels=8, color_channels=8)
    params = init_params(cfg, 301, dtype=np.float64)
    a, b = (0.02, -0.01), (-0.012, 0.018)
    for t, c in ((1, a), (2, b)):
        params[f"scale{t}.flow.w1"].data[:] = 0.0
        params[f"scale{t}.flow.b2"].data[:] = np.arctanh(np.asarray(c) / cfg.flow_scale)
    batch = {
        "color": rng.uniform(0, 1, (1, 3, 32, 32)),
        "gnormal": rng.uniform(-1, 1, (1, 3, 32, 32)),
        "snormal": rng.uniform(-1, 1, (1, 3, 32, 32)),
        "depth": rng.uniform(0, 1, (1, 1, 32, 32)),
        "coverage": (rng.uniform(0, 1, (1, 1, 32, 32)) > 0.5).astype(np.float64),
    }
    _, state = forward(batch, params, cfg, want_state=True)
    vt = state.cum_flows[-1]
    accum_err = max(
        np.abs(vt.data[0, 0] - (a[0] + b[0])).max(),
        np.abs(vt.data[0, 1] - (a[1] + b[1])).max(),
    )
    z_c = state.color_pyramid[-1]
    oracle_flow = np.zeros((1, 2) + tuple(z_c.shape[2:]))
    oracle_flow[0, 0] = a[0] + b[0]
    oracle_flow[0, 1] = a[1] + b[1]
    through = ad.grid_sample_bilinear(z_c, vt).data
    oracle = ad.grid_sample_bilinear(z_c, Tensor(oracle_flow)).data
    interior = (slice(None), slice(None), slice(2, -2), slice(2, -2))
    warp_err = np.abs(through[interior] - oracle[interior]).max()
    report(
        3,
        identity and roll_exact and accum_err < 1e-6 and warp_err < 1e-6,
        f"zero-flow identity {identity} (exact), roll-by-one {roll_exact} (exact), "
        f"flow accumulation err {accum_err:.1e} (<1e-6), summed-warp oracle err "
        f"{warp_err:.1e} (<1e-6)",
    )


# ---------------------------------------------------------------------------
# criterion 4: loss identities


def test_criterion_4_loss_identities():
    rng = np.random.default_rng(400)
    label = rng.uniform(0, 1, (1, 3, 8, 8))
    inp = rng.uniform(0, 1, (1, 3, 8, 8))
    rr_zero = loss_rr(Tensor(label), label, inp).item() == 0.0

    pred = rng.uniform(0, 1, (1, 3, 8, 8))
    shade_mean = loss_shade(Tensor(pred), label, 64).item() == np.abs(pred - label).mean(
        axis=1
    ).mean()

    two_px_pred = np.array([0.5, 0.2]).reshape(1, 1, 1, 2)
    two_px_label = np.array([0.4, 0.2]).reshape(1, 1, 1, 2)
    two_px_inp = np.array([0.0, 0.2]).reshape(1, 1, 1, 2)
    hand = 0.5 * (0.1 / (0.4 + 1e-6))
    two_px_err = abs(loss_rr(Tensor(two_px_pred), two_px_label, two_px_inp).item() - hand)

    preset = LossConfig.paper_preset()
    preset_ok = (preset.lambda_rr, preset.lambda_shade, preset.lambda_percep) == (0.1, 10.0, 30.0)
    total, _ = total_loss(Tensor(pred), label, inp, preset)
    k = max(1, round(preset.k_fraction * 64))
    expected = (
        0.1 * loss_rr(Tensor(pred), label, inp, preset.epsilon).item()
        + 10.0 * loss_shade(Tensor(pred), label, k).item()
        + 30.0 * loss_percep(Tensor(pred), label).item()
    )
    combine_err = abs(total.item() - expected) / expected
    report(
        4,
        rr_zero and shade_mean and two_px_err < 1e-6 and preset_ok and combine_err < 1e-9,
        f"rr(label)=0 {rr_zero}, shade k=N == mean L1 {shade_mean} (exact), two-pixel case "
        f"err {two_px_err:.1e} (<1e-6), preset (0.1,10,30) loads and combines "
        f"(rel err {combine_err:.1e})",
    )


# ---------------------------------------------------------------------------
# criterion 5: guidance color-invariance (bitwise)


def test_criterion_5_guidance_color_invariance(desk):
    frame = load_frame(desk.test_manifest.frame_dir(0))
    params = init_params(ModelConfig(), SEED)
    batch = batch_from_frames([frame])
    _, st1 = forward(batch, params, ModelConfig(), want_state=True)
    permuted = dict(batch)
    permuted["color"] = np.ascontiguousarray(batch["color"][:, ::-1])
    _, st2 = forward(permuted, params, ModelConfig(), want_state=True)
    same = True
    for field in ("guide_pyramid", "deform_states", "flows", "cum_flows"):
        for t1, t2 in zip(getattr(st1, field), getattr(st2, field)):
            same = same and np.array_equal(t1.data, t2.data)
    report(
        5,
        same,
        "permuting the color channels leaves guidance features, deformation states, "
        "and flows bitwise unchanged",
    )


# ---------------------------------------------------------------------------
# criterion 6: desk-scale training outcome


def test_criterion_6_training_outcome(desk):
    rep = desk.reports["full"]
    ratio = rep.agg_l1_sil / rep.agg_baseline_l1_sil
    trace = [float(l.split()[1]) for l in desk.traces["full"].read_text().splitlines()]
    assert len(trace) == STEPS
    first = float(np.mean(trace[:100]))
    last = float(np.mean(trace[-100:]))
    report(
        6,
        ratio <= 0.7 and last < 0.5 * first,
        f"held-out silhouette L1 {rep.agg_l1_sil:.5f} vs baseline "
        f"{rep.agg_baseline_l1_sil:.5f}: ratio {ratio:.3f} (<=0.7); training loss "
        f"first/last 100-step means {first:.4g} -> {last:.4g} "
        f"(ratio {last / first:.3f} < 0.5)",
    )


# ---------------------------------------------------------------------------
# criterion 7: ablation direction


def test_criterion_7_ablation_direction(desk):
    l1 = {v: desk.reports[v].agg_l1_sil for v in ALL_VARIANTS}
    ordering = l1["full"] <= l1["no_percep"] < l1["no_deform"]
    margin = l1["full"] <= 0.95 * l1["no_deform"]

    from nist.network import load_checkpoint

    config, params = load_checkpoint(desk.checkpoints["no_warp"])
    frame = load_frame(desk.test_manifest.frame_dir(0))
    with ad.no_grad():
        _, state = forward(batch_from_frames([frame]), params, config, want_state=True)
    flow_peak = max(np.abs(v.data).max() for v in state.flows)
    report(
        7,
        ordering and margin and flow_peak == 0.0,
        f"silhouette L1 ordering full {l1['full']:.5f} <= no_percep {l1['no_percep']:.5f} "
        f"< no_deform {l1['no_deform']:.5f}, margin full/no_deform "
        f"{l1['full'] / l1['no_deform']:.3f} (<=0.95); no_warp max |v| = {flow_peak} (==0)",
    )


# ---------------------------------------------------------------------------
# criterion 8: bitwise determinism of criteria 6-7


def test_criterion_8_determinism(desk):
    checkpoints2, traces2 = _train_all(desk.root, desk.train_manifest, "run2")
    same = True
    details = []
    for variant in ALL_VARIANTS:
        trace_same = desk.traces[variant].read_bytes() == traces2[variant].read_bytes()
        ckpt_same = (
            desk.checkpoints[variant].read_bytes() == checkpoints2[variant].read_bytes()
        )
        same = same and trace_same and ckpt_same
        details.append(f"{variant}: trace {trace_same}, checkpoint {ckpt_same}")
    report(8, same, "bitwise repeat of all four training runs -- " + "; ".join(details))


# ---------------------------------------------------------------------------
# supporting derived example: full-size dataset round trip


def test_dataset_roundtrip_is_bit_exact(desk):
    manifest = desk.train_manifest
    assert manifest.count == TRAIN_FRAMES
    cams = _orbit_cameras(SCENE, TRAIN_FRAMES, SEED, RES, RES)
    mesh = SCENE.build_mesh()
    tess_mesh = tessellate_phong(mesh, TESS)
    for i in range(TRAIN_FRAMES):
        disk = load_frame(manifest.frame_dir(i))
        mem = make_pair(SCENE, cams[i], TESS, mesh=mesh, tess_mesh=tess_mesh)
        for name, arr in mem.channels().items():
            assert np.array_equal(getattr(disk, name), arr), f"frame {i} channel {name}"
