"""Command line: dataset generation, training, inference, evaluation,
ablations, and the self-test battery.

Exit codes: 0 success, 1 pipeline failure (message names the offending
path or key), 2 usage error. All outputs land under the directory given
by --out. NIST_THREADS caps dataset-generation workers (default:
available parallelism).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import RunConfig, load_run_config
from .evaluation import compare_ablations, evaluate, write_report
from .losses import LossConfig
from .mesh import TessellationConfig
from .network import batch_from_frames, forward, load_checkpoint
from .pfm import write_pfm
from .raster import generate_dataset, load_frame, read_manifest
from .scenes import Material, SceneSpec, parse_scene_name
from .selfcheck import run_selftest
from .training import make_ablation, train


def _scene_from_args(args) -> SceneSpec:
    shape, params = parse_scene_name(args.scene)
    material = Material(args.material)
    return SceneSpec(
        shape=shape, shape_params=params, material=material, ambient=args.ambient
    )


def _parse_res(text):
    w, sep, h = text.partition("x")
    if not sep:
        raise ValueError(f"bad resolution {text!r}, expected WxH")
    return int(w), int(h)


def cmd_gen(args):
    scene = _scene_from_args(args)
    w, h = _parse_res(args.res)
    tess = TessellationConfig(level=args.tess_level, alpha=args.alpha)
    manifest = generate_dataset(
        scene, args.frames, args.seed, tess, args.out, width=w, height=h,
        workers=args.workers,
    )
    print(f"wrote {manifest.count} frames to {manifest.root}")
    return 0


def _run_config(args) -> RunConfig:
    overrides = list(args.set or [])
    for key in ("steps", "seed", "batch_size", "crop"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_run_config(args.config, overrides)


def cmd_train(args):
    cfg = _run_config(args)
    result = train(
        args.data,
        cfg.to_model_config(),
        cfg.to_loss_config(),
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        checkpoint_dir=args.out,
        optim_config=cfg.to_optim_config(),
        crop=cfg.crop,
        checkpoint_interval=cfg.checkpoint_interval,
        progress=_progress_printer(cfg.steps) if args.verbose else None,
    )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss trace: {result.trace_path}")
    return 0


def _progress_printer(total):
    def emit(step, value):
        if step % 50 == 0 or step == total:
            print(f"step {step}/{total} loss {value:.6g}", flush=True)

    return emit


def cmd_infer(args):
    config, params = load_checkpoint(args.checkpoint)
    frame = load_frame(args.frame)
    with ad.no_grad():
        out = forward(batch_from_frames([frame]), params, config)
    pred = out.data[0].transpose(1, 2, 0).astype(np.float32)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pfm(out_dir / "pred.pfm", pred)
    _write_png(out_dir / "pred.png", pred)
    print(f"wrote {out_dir / 'pred.pfm'} and preview png")
    return 0


def _write_png(path, image01):
    from PIL import Image

    data = np.clip(np.asarray(image01) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def cmd_eval(args):
    report = evaluate(args.checkpoint, args.data, oracle_label=args.oracle_label)
    txt, csv_path = write_report(report, args.out)
    print(report.to_text())
    print(f"wrote {txt} and {csv_path}")
    return 0


def cmd_ablate(args):
    cfg = _run_config(args)
    out = Path(args.out)
    test_data = args.test_data or args.data
    reports = []
    for variant in ("full", "no_deform", "no_warp", "no_percep"):
        model_cfg = make_ablation(cfg.to_model_config(), variant)
        print(f"training variant {variant} ({cfg.steps} steps, seed {cfg.seed})", flush=True)
        result = train(
            args.data,
            model_cfg,
            cfg.to_loss_config(),
            steps=cfg.steps,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
            checkpoint_dir=out / variant,
            optim_config=cfg.to_optim_config(),
            crop=cfg.crop,
            checkpoint_interval=cfg.checkpoint_interval,
        )
        report = evaluate(result.checkpoint_path, test_data)
        write_report(report, out / variant)
        reports.append((variant, report))
    _, text, csv_text = compare_ablations(reports)
    (out / "ranking.txt").write_text(text)
    (out / "ranking.csv").write_text(csv_text)
    print(text)
    return 0


def cmd_selftest(args):
    failures = run_selftest()
    if failures:
        print(f"{failures} check(s) failed")
        return 1
    print("all checks passed")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nist",
        description="screen-space neural silhouette refinement pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="render a dataset of input/label frame pairs")
    gen.add_argument("--scene", default="icosphere1", help="icosphere<k>, torus<u>x<v>, cylinder<n>, capsule<n>, bar_grid")
    gen.add_argument("--frames", type=int, default=16)
    gen.add_argument("--res", default="128x128")
    gen.add_argument("--tess-level", type=int, default=6, dest="tess_level")
    gen.add_argument("--alpha", type=float, default=0.75)
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--material", default="checker", choices=("checker", "flat"))
    gen.add_argument("--ambient", type=float, default=0.25)
    gen.add_argument("--workers", type=int, default=None)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="train a model on a generated dataset")
    tr.add_argument("--data", required=True, help="dataset dir or manifest path")
    tr.add_argument("--out", required=True, help="checkpoint/trace directory")
    tr.add_argument("--config", default=None, help="key=value config file")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE")
    tr.add_argument("--steps", type=int, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    tr.add_argument("--crop", type=int, default=None)
    tr.add_argument("--verbose", action="store_true")
    tr.set_defaults(func=cmd_train)

    inf = sub.add_parser("infer", help="run a checkpoint on one frame directory")
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--frame", required=True, help="frame_xxxxx directory")
    inf.add_argument("--out", required=True)
    inf.set_defaults(func=cmd_infer)

    ev = sub.add_parser("eval", help="evaluate a checkpoint over a test manifest")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--oracle-label", action="store_true", dest="oracle_label",
                    help="inject the label as the prediction (plumbing check)")
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="train and rank all ablation variants")
    ab.add_argument("--data", required=True)
    ab.add_argument("--test-data", default=None, dest="test_data")
    ab.add_argument("--out", required=True)
    ab.add_argument("--config", default=None)
    ab.add_argument("--set", action="append", metavar="KEY=VALUE")
    ab.add_argument("--steps", type=int, default=None)
    ab.add_argument("--seed", type=int, default=None)
    ab.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    ab.add_argument("--crop", type=int, default=None)
    ab.set_defaults(func=cmd_ablate)

    st = sub.add_parser("selftest", help="run the built-in correctness battery")
    st.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    ad.tune_allocator()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
