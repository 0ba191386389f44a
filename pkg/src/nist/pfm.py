"""Portable Float Map reader/writer.

Little-endian files (scale field -1.0) with rows stored bottom-to-top.
Single-channel images use the "Pf" tag, three-channel "PF". Values are
float32, which is what makes frame round trips bit-exact.
"""

from __future__ import annotations

import numpy as np


def write_pfm(path, image):
    """Write a (H, W) or (H, W, 3) float32 array."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        tag = b"Pf"
        h, w = image.shape
    elif image.ndim == 3 and image.shape[2] == 3:
        tag = b"PF"
        h, w = image.shape[:2]
    else:
        raise ValueError(f"PFM supports HxW or HxWx3 images, got shape {image.shape}")
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(image[::-1]).tobytes())


def read_pfm(path):
    """Read a PFM file to float32, (H, W) for Pf and (H, W, 3) for PF."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file (tag {tag!r})")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        channels = 3 if tag == b"PF" else 1
        count = w * h * channels
        data = np.frombuffer(f.read(count * 4), dtype=np.float32, count=count)
    if scale > 0:  # positive scale marks big-endian payloads
        data = data.byteswap()
    img = data.reshape(h, w, channels)[::-1]
    return img[:, :, 0].copy() if channels == 1 else img.copy()
