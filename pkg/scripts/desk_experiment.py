#!/usr/bin/env python3
"""End-to-end desk-scale experiment.

Renders a train/test dataset pair, trains the full model, evaluates the
silhouette improvement against the input baseline, and (optionally) runs
the ablation sweep. With the defaults this reproduces the headline
desk-scale result: a 128x128 icosphere dataset, 2000 training steps,
and silhouette-band error at most 0.7x the input baseline.

Usage:
    python scripts/desk_experiment.py --out runs/desk
    python scripts/desk_experiment.py --out runs/quick --train-frames 40 \
        --test-frames 8 --steps 200          # fast smoke version
    python scripts/desk_experiment.py --out runs/desk --ablate
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

import nist.autodiff as ad
from nist.config import RunConfig
from nist.evaluation import compare_ablations, evaluate, write_report
from nist.mesh import TessellationConfig
from nist.raster import generate_dataset
from nist.scenes import Material, SceneSpec, parse_scene_name
from nist.training import make_ablation, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--scene", default="icosphere1")
    ap.add_argument("--res", type=int, default=128)
    ap.add_argument("--tess-level", type=int, default=6)
    ap.add_argument("--train-frames", type=int, default=200)
    ap.add_argument("--test-frames", type=int, default=20)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--ablate", action="store_true", help="also train the three ablations")
    args = ap.parse_args()

    ad.tune_allocator()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run_cfg = RunConfig(steps=args.steps, seed=args.seed)
    shape, params = parse_scene_name(args.scene)
    scene = SceneSpec(shape=shape, shape_params=params, material=Material("checker"))
    tess = TessellationConfig(level=args.tess_level, alpha=0.75)

    t0 = time.time()
    train_manifest = generate_dataset(
        scene, args.train_frames, args.seed, tess, out / "train_data",
        width=args.res, height=args.res,
    )
    test_manifest = generate_dataset(
        scene, args.test_frames, args.seed + 1000, tess, out / "test_data",
        width=args.res, height=args.res,
    )
    print(f"datasets: {train_manifest.count} train / {test_manifest.count} test "
          f"frames in {time.time()-t0:.0f}s", flush=True)

    variants = ["full"] + (["no_deform", "no_warp", "no_percep"] if args.ablate else [])
    reports = []
    for variant in variants:
        model_cfg = make_ablation(run_cfg.to_model_config(), variant)
        t0 = time.time()
        result = train(
            out / "train_data",
            model_cfg,
            run_cfg.to_loss_config(),
            steps=run_cfg.steps,
            batch_size=run_cfg.batch_size,
            seed=run_cfg.seed,
            checkpoint_dir=out / variant,
            optim_config=run_cfg.to_optim_config(),
            crop=run_cfg.crop,
            progress=lambda s, v: (
                print(f"  [{variant}] step {s}/{run_cfg.steps} loss {v:.4g}", flush=True)
                if s % 200 == 0
                else None
            ),
        )
        print(f"{variant}: trained {run_cfg.steps} steps in {(time.time()-t0)/60:.1f} min")
        report = evaluate(result.checkpoint_path, test_manifest)
        write_report(report, out / variant)
        reports.append((variant, report))
        trace = [float(l.split()[1]) for l in result.trace_path.read_text().splitlines()]
        head = np.mean(trace[:100]) if len(trace) >= 100 else np.mean(trace)
        tail = np.mean(trace[-100:]) if len(trace) >= 100 else np.mean(trace)
        print(
            f"{variant}: sil L1 {report.agg_l1_sil:.5f} vs baseline "
            f"{report.agg_baseline_l1_sil:.5f} (ratio {report.agg_ratio:.3f}); "
            f"loss first/last-100 mean {head:.4g} -> {tail:.4g}",
            flush=True,
        )

    if len(reports) > 1:
        _, text, csv_text = compare_ablations(reports)
        (out / "ranking.txt").write_text(text)
        (out / "ranking.csv").write_text(csv_text)
        print(text)


if __name__ == "__main__":
    main()
