"""Metrics, silhouette-region analysis, and ablation comparison reports.

The quantitative focus is the silhouette band: a dilated mask around
coverage discontinuities and geometric-normal creases, where tessellation
actually changes the image. Full-image PSNR is reported alongside, but a
model can score well on it by copying the input; the masked L1 against
the input-vs-label baseline is the number that detects that failure mode.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .network import batch_from_frames, forward, load_checkpoint
from .raster import load_frame, read_manifest

PSNR_CAP_DB = 99.0


def silhouette_mask(coverage, gnormal, angle_threshold_deg=30.0, dilation_radius=3):
    """Dilated mask of coverage discontinuities and geometric-normal creases.

    A pixel is seeded when its coverage differs from a 4-neighbour, or
    when it and a covered 4-neighbour disagree in face normal by more
    than the angle threshold. The seed set is dilated with a square
    structuring element of the given radius.
    """
    cov = np.asarray(coverage) > 0.5
    gn = np.asarray(gnormal, dtype=np.float64)
    h, w = cov.shape
    base = np.zeros((h, w), dtype=bool)
    base[:-1] |= cov[:-1] != cov[1:]
    base[1:] |= cov[1:] != cov[:-1]
    base[:, :-1] |= cov[:, :-1] != cov[:, 1:]
    base[:, 1:] |= cov[:, 1:] != cov[:, :-1]

    cos_thr = np.cos(np.radians(angle_threshold_deg))
    dot_v = (gn[:-1] * gn[1:]).sum(axis=-1)
    crease_v = cov[:-1] & cov[1:] & (dot_v < cos_thr)
    base[:-1] |= crease_v
    base[1:] |= crease_v
    dot_h = (gn[:, :-1] * gn[:, 1:]).sum(axis=-1)
    crease_h = cov[:, :-1] & cov[:, 1:] & (dot_h < cos_thr)
    base[:, :-1] |= crease_h
    base[:, 1:] |= crease_h

    r = dilation_radius
    if r == 0 or not base.any():
        return base
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
    padded[r : r + h, r : r + w] = base
    out = np.zeros_like(base)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            out |= padded[r + dy : r + dy + h, r + dx : r + dx + w]
    return out


def psnr(a, b, mask=None) -> float:
    """10*log10(1/MSE) for images in [0,1], capped at 99 dB (identical
    images report the cap). An optional boolean mask restricts the MSE."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("psnr mask is empty")
        a = a[mask]
        b = b[mask]
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def masked_l1(a, b, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty silhouette mask")
    return float(np.abs(np.asarray(a, np.float64)[mask] - np.asarray(b, np.float64)[mask]).mean())


@dataclass
class EvalReport:
    manifest_root: str
    frames: tuple
    psnr_full: np.ndarray
    psnr_sil: np.ndarray
    l1_sil: np.ndarray
    baseline_l1_sil: np.ndarray
    ratio: np.ndarray

    @property
    def agg_psnr_full(self):
        return float(self.psnr_full.mean())

    @property
    def agg_psnr_sil(self):
        return float(self.psnr_sil.mean())

    @property
    def agg_l1_sil(self):
        return float(self.l1_sil.mean())

    @property
    def agg_baseline_l1_sil(self):
        return float(self.baseline_l1_sil.mean())

    @property
    def agg_ratio(self):
        return float(self.ratio.mean())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frame", "psnr_full", "psnr_sil", "l1_sil", "baseline_l1_sil", "ratio"])
        for i, name in enumerate(self.frames):
            writer.writerow(
                [
                    name,
                    f"{self.psnr_full[i]:.6f}",
                    f"{self.psnr_sil[i]:.6f}",
                    f"{self.l1_sil[i]:.8f}",
                    f"{self.baseline_l1_sil[i]:.8f}",
                    f"{self.ratio[i]:.6f}",
                ]
            )
        writer.writerow(
            [
                "aggregate",
                f"{self.agg_psnr_full:.6f}",
                f"{self.agg_psnr_sil:.6f}",
                f"{self.agg_l1_sil:.8f}",
                f"{self.agg_baseline_l1_sil:.8f}",
                f"{self.agg_ratio:.6f}",
            ]
        )
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"evaluation over {len(self.frames)} frames from {self.manifest_root}",
            f"{'frame':<14} {'psnr_full':>10} {'psnr_sil':>10} {'l1_sil':>12} "
            f"{'baseline':>12} {'ratio':>8}",
        ]
        for i, name in enumerate(self.frames):
            lines.append(
                f"{name:<14} {self.psnr_full[i]:>10.3f} {self.psnr_sil[i]:>10.3f} "
                f"{self.l1_sil[i]:>12.6f} {self.baseline_l1_sil[i]:>12.6f} "
                f"{self.ratio[i]:>8.4f}"
            )
        lines.append(
            f"{'aggregate':<14} {self.agg_psnr_full:>10.3f} {self.agg_psnr_sil:>10.3f} "
            f"{self.agg_l1_sil:>12.6f} {self.agg_baseline_l1_sil:>12.6f} "
            f"{self.agg_ratio:>8.4f}"
        )
        return "\n".join(lines) + "\n"


def _frame_metrics(pred, frame):
    mask = silhouette_mask(frame.coverage, frame.gnormal)
    full = psnr(pred, frame.label)
    sil = psnr(pred, frame.label, np.repeat(mask[:, :, None], 3, axis=2))
    l1 = masked_l1(pred, frame.label, np.repeat(mask[:, :, None], 3, axis=2))
    base = masked_l1(frame.color, frame.label, np.repeat(mask[:, :, None], 3, axis=2))
    if base == 0.0:
        ratio = 0.0 if l1 == 0.0 else float("inf")
    else:
        ratio = l1 / base
    return full, sil, l1, base, ratio


def evaluate(checkpoint_path, manifest, oracle_label=False) -> EvalReport:
    """Run the model over every frame of a test manifest.

    oracle_label injects the label as the prediction, which must drive
    the silhouette improvement ratio to zero (plumbing check).
    """
    if isinstance(manifest, (str, Path)):
        manifest = read_manifest(manifest)
    if manifest.count == 0:
        raise ValueError(f"test manifest {manifest.root} is empty")
    ad.tune_allocator()
    config, params = load_checkpoint(checkpoint_path)
    config.check_resolution(manifest.height, manifest.width)

    rows = []
    for i in range(manifest.count):
        frame = load_frame(manifest.frame_dir(i))
        if oracle_label:
            pred = frame.label
        else:
            with ad.no_grad():
                out = forward(batch_from_frames([frame]), params, config)
            pred = out.data[0].transpose(1, 2, 0)
        rows.append(_frame_metrics(pred, frame))
    cols = [np.asarray(c, dtype=np.float64) for c in zip(*rows)]
    return EvalReport(str(manifest.root), manifest.frame_names, *cols)


def write_report(report: EvalReport, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.to_text())
    (out_dir / "report.csv").write_text(report.to_csv())
    return out_dir / "report.txt", out_dir / "report.csv"


def compare_ablations(named_reports):
    """Rank (name, EvalReport) pairs by aggregate silhouette L1.

    All reports must cover the same frames of the same manifest. Returns
    (rows, text_table, csv_text) with rows sorted ascending, ties stable
    by name.
    """
    if len(named_reports) < 2:
        raise ValueError("compare_ablations needs at least two reports")
    ref = named_reports[0][1]
    for name, rep in named_reports[1:]:
        if rep.frames != ref.frames or rep.manifest_root != ref.manifest_root:
            raise ValueError(f"report {name!r} covers a different manifest")
    rows = sorted(
        ((name, rep) for name, rep in named_reports),
        key=lambda item: (item[1].agg_l1_sil, item[0]),
    )
    lines = [f"{'rank':<5} {'variant':<12} {'l1_sil':>12} {'psnr_sil':>10} {'ratio':>8}"]
    for rank, (name, rep) in enumerate(rows, 1):
        lines.append(
            f"{rank:<5} {name:<12} {rep.agg_l1_sil:>12.6f} "
            f"{rep.agg_psnr_sil:>10.3f} {rep.agg_ratio:>8.4f}"
        )
    text = "\n".join(lines) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "variant", "l1_sil", "psnr_sil", "psnr_full", "ratio"])
    for rank, (name, rep) in enumerate(rows, 1):
        writer.writerow(
            [
                rank,
                name,
                f"{rep.agg_l1_sil:.8f}",
                f"{rep.agg_psnr_sil:.6f}",
                f"{rep.agg_psnr_full:.6f}",
                f"{rep.agg_ratio:.6f}",
            ]
        )
    return rows, text, buf.getvalue()
