"""Software perspective rasterizer and dataset generator.

Produces the exact per-pixel input set the refinement network consumes:
shaded color, normalized depth, camera-space geometric (face) normals,
camera-space shading (interpolated vertex) normals, and binary coverage,
plus the label image rendered from the tessellated mesh under the same
camera. One sample per pixel, no anti-aliasing: silhouette aliasing is
the signal being supervised, so the label must keep it too.

Screen-space caveat, inherited by anything trained on these frames: when
a triangle is only partially visible (cut by the image border or the
near plane) its geometric context is incomplete, and refinement near
those boundaries is unreliable. The test suite exercises one such
adversarial framing; no mitigation is attempted.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import Mesh, TessellationConfig, tessellate_phong
from .pfm import read_pfm, write_pfm
from .scenes import SceneSpec

BACKGROUND_COLOR = 0.5  # mid-gray; unambiguous off-surface code
CHANNEL_FILES = ("color", "depth", "gnormal", "snormal", "coverage", "label")


@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple
    up: tuple = (0.0, 1.0, 0.0)
    vertical_fov: float = 0.9  # radians
    near: float = 0.1
    far: float = 50.0
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if self.near <= 0 or self.far <= self.near:
            raise ValueError("camera requires 0 < near < far")
        fwd = np.asarray(self.look_at, dtype=np.float64) - np.asarray(self.position)
        nf = np.linalg.norm(fwd)
        up = np.asarray(self.up, dtype=np.float64)
        if nf == 0 or np.linalg.norm(np.cross(fwd / nf, up)) < 1e-8:
            raise ValueError("camera up vector is parallel to the view direction")

    def rotation(self):
        """World-to-camera rotation; camera space is right-handed, looking
        down -z with +y up."""
        fwd = np.asarray(self.look_at, dtype=np.float64) - np.asarray(self.position)
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return np.stack([right, true_up, -fwd])

    def to_camera(self, world_points):
        return (world_points - np.asarray(self.position)) @ self.rotation().T


@dataclass
class GBufferFrame:
    """Aligned per-pixel channels, float32, image layout H x W (x C)."""

    color: np.ndarray
    depth: np.ndarray
    gnormal: np.ndarray
    snormal: np.ndarray
    coverage: np.ndarray
    label: np.ndarray

    @property
    def resolution(self):
        h, w = self.color.shape[:2]
        return w, h

    def channels(self):
        return {name: getattr(self, name) for name in CHANNEL_FILES}


def save_frame(frame: GBufferFrame, frame_dir):
    frame_dir = Path(frame_dir)
    frame_dir.mkdir(parents=True, exist_ok=True)
    for name, data in frame.channels().items():
        write_pfm(frame_dir / f"{name}.pfm", data)


def load_frame(frame_dir) -> GBufferFrame:
    frame_dir = Path(frame_dir)
    data = {}
    for name in CHANNEL_FILES:
        path = frame_dir / f"{name}.pfm"
        if not path.exists():
            raise FileNotFoundError(f"missing channel file {path}")
        data[name] = read_pfm(path)
    return GBufferFrame(**data)


# ---------------------------------------------------------------------------
# rasterization core


def _clip_near(cam_pts, attrs, near):
    """Sutherland-Hodgman clip of one triangle against depth >= near.

    cam_pts is (3, 3) camera-space positions, attrs a list of (3, k)
    per-vertex attribute rows interpolated linearly in camera space.
    Returns (points, attrs) polygons with 0, 3 or 4 vertices.
    """
    depth = -cam_pts[:, 2]
    inside = depth >= near
    if inside.all():
        return cam_pts, attrs
    if not inside.any():
        return None, None
    out_pts = []
    out_attrs = [[] for _ in attrs]
    for i in range(3):
        j = (i + 1) % 3
        di, dj = depth[i], depth[j]
        if inside[i]:
            out_pts.append(cam_pts[i])
            for k, a in enumerate(attrs):
                out_attrs[k].append(a[i])
        if inside[i] != inside[j]:
            t = (near - di) / (dj - di)
            out_pts.append(cam_pts[i] + t * (cam_pts[j] - cam_pts[i]))
            for k, a in enumerate(attrs):
                out_attrs[k].append(a[i] + t * (a[j] - a[i]))
    return np.asarray(out_pts), [np.asarray(a) for a in out_attrs]


def rasterize(mesh: Mesh, camera: Camera, scene: SceneSpec):
    """Render one frame; returns dict of float64 channels (color, depth,
    gnormal, snormal, coverage) at the camera resolution.

    Depth test keeps the strictly nearer fragment; ties keep the earlier
    face, so output is deterministic in input face order. Triangles are
    rendered two-sided (closed meshes self-occlude; open sheets stay
    visible from behind with their authored normals).
    """
    if mesh.vertex_normals is None or mesh.face_normals is None:
        raise ValueError("rasterize requires both normal sets")
    w, h = camera.width, camera.height
    rot = camera.rotation()
    cam_all = camera.to_camera(mesh.vertices)
    tan_half = np.tan(camera.vertical_fov / 2.0)
    aspect = w / h

    zbuf = np.full((h, w), np.inf)
    facebuf = np.full((h, w), -1, dtype=np.int64)
    wbuf = np.zeros((h, w, 3))  # perspective-correct barycentric weights
    pos_attr = np.zeros((h, w, 3))  # interpolated world position
    sn_attr = np.zeros((h, w, 3))  # interpolated world shading normal

    def raster_triangle(face, cam_pts, world_pts, vert_normals):
        depth = -cam_pts[:, 2]
        sx = cam_pts[:, 0] / (depth * tan_half * aspect)
        sy = cam_pts[:, 1] / (depth * tan_half)
        px = (sx + 1.0) * (w / 2.0) - 0.5
        py = (1.0 - sy) * (h / 2.0) - 0.5
        area = (px[1] - px[0]) * (py[2] - py[0]) - (px[2] - px[0]) * (py[1] - py[0])
        if area == 0.0:
            return
        x0 = max(int(np.ceil(px.min())), 0)
        x1 = min(int(np.floor(px.max())), w - 1)
        y0 = max(int(np.ceil(py.min())), 0)
        y1 = min(int(np.floor(py.max())), h - 1)
        if x0 > x1 or y0 > y1:
            return
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        b0 = (px[1] - gx) * (py[2] - gy) - (px[2] - gx) * (py[1] - gy)
        b1 = (px[2] - gx) * (py[0] - gy) - (px[0] - gx) * (py[2] - gy)
        b2 = (px[0] - gx) * (py[1] - gy) - (px[1] - gx) * (py[0] - gy)
        if area < 0:
            b0, b1, b2 = -b0, -b1, -b2
        covered = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        if not covered.any():
            return
        asum = b0 + b1 + b2
        ok = covered & (asum > 0)
        if not ok.any():
            return
        l0 = b0[ok] / asum[ok]
        l1 = b1[ok] / asum[ok]
        l2 = b2[ok] / asum[ok]
        inv_d = l0 / depth[0] + l1 / depth[1] + l2 / depth[2]
        frag_d = 1.0 / inv_d
        yy, xx = np.nonzero(ok)
        yy = yy + y0
        xx = xx + x0
        better = frag_d < zbuf[yy, xx]
        if not better.any():
            return
        yy, xx = yy[better], xx[better]
        w0 = (l0[better] / depth[0]) / inv_d[better]
        w1 = (l1[better] / depth[1]) / inv_d[better]
        w2 = (l2[better] / depth[2]) / inv_d[better]
        zbuf[yy, xx] = frag_d[better]
        facebuf[yy, xx] = face
        wbuf[yy, xx] = np.stack([w0, w1, w2], axis=1)
        pos_attr[yy, xx] = (
            w0[:, None] * world_pts[0] + w1[:, None] * world_pts[1] + w2[:, None] * world_pts[2]
        )
        sn_attr[yy, xx] = (
            w0[:, None] * vert_normals[0]
            + w1[:, None] * vert_normals[1]
            + w2[:, None] * vert_normals[2]
        )

    depths_all = -cam_all[:, 2]
    for face in range(mesh.num_triangles):
        tri = mesh.triangles[face]
        cam_pts = cam_all[tri]
        world_pts = mesh.vertices[tri]
        normals = mesh.vertex_normals[tri]
        d = depths_all[tri]
        if (d < camera.near).all() or (d > camera.far).all():
            continue
        if (d >= camera.near).all():
            raster_triangle(face, cam_pts, world_pts, normals)
        else:
            pts, attrs = _clip_near(cam_pts, [world_pts, normals], camera.near)
            if pts is None:
                continue
            for k in range(1, len(pts) - 1):
                raster_triangle(
                    face,
                    np.stack([pts[0], pts[k], pts[k + 1]]),
                    np.stack([attrs[0][0], attrs[0][k], attrs[0][k + 1]]),
                    np.stack([attrs[1][0], attrs[1][k], attrs[1][k + 1]]),
                )

    coverage = facebuf >= 0
    color = np.full((h, w, 3), BACKGROUND_COLOR)
    depth_chan = np.ones((h, w))
    gnormal = np.zeros((h, w, 3))
    snormal = np.zeros((h, w, 3))
    if coverage.any():
        yy, xx = np.nonzero(coverage)
        sn_world = sn_attr[yy, xx]
        sn_world = sn_world / np.linalg.norm(sn_world, axis=1, keepdims=True)
        gn_world = mesh.face_normals[facebuf[yy, xx]]
        light = np.asarray(scene.light_dir)
        lambert = np.maximum(0.0, sn_world @ light)
        intensity = np.clip(scene.ambient + (1.0 - scene.ambient) * lambert, 0.0, 1.0)
        albedo = scene.material.albedo(pos_attr[yy, xx])
        color[yy, xx] = intensity[:, None] * albedo
        depth_chan[yy, xx] = np.clip(
            (zbuf[yy, xx] - camera.near) / (camera.far - camera.near), 0.0, 1.0
        )
        snormal[yy, xx] = sn_world @ rot.T
        gnormal[yy, xx] = gn_world @ rot.T
    return {
        "color": color,
        "depth": depth_chan,
        "gnormal": gnormal,
        "snormal": snormal,
        "coverage": coverage.astype(np.float64),
    }


def make_pair(
    scene: SceneSpec,
    camera: Camera,
    tess: TessellationConfig,
    mesh: Mesh | None = None,
    tess_mesh: Mesh | None = None,
) -> GBufferFrame:
    """Input channels from the coarse mesh, label from its tessellation.

    The meshes can be passed in to amortize tessellation across frames;
    they must match what the scene spec would build.
    """
    if mesh is None:
        mesh = scene.build_mesh()
    if tess_mesh is None:
        tess_mesh = tessellate_phong(mesh, tess)
    chans = rasterize(mesh, camera, scene)
    label = rasterize(tess_mesh, camera, scene)["color"]
    return GBufferFrame(
        color=chans["color"].astype(np.float32),
        depth=chans["depth"].astype(np.float32),
        gnormal=chans["gnormal"].astype(np.float32),
        snormal=chans["snormal"].astype(np.float32),
        coverage=chans["coverage"].astype(np.float32),
        label=label.astype(np.float32),
    )


# ---------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    seed: int
    count: int
    width: int
    height: int
    frame_names: tuple

    def frame_dir(self, i):
        return self.root / self.frame_names[i]


def _orbit_cameras(scene: SceneSpec, n_frames, seed, width, height):
    """Seeded orbit path: azimuth advances around the object with jittered
    radius and elevation, keeping the object framed."""
    mesh = scene.build_mesh()
    bound = float(np.linalg.norm(mesh.vertices, axis=1).max())
    rng = np.random.default_rng(seed)
    azim = 2 * np.pi * np.arange(n_frames) / max(n_frames, 1)
    azim = azim + rng.uniform(-0.3, 0.3, n_frames)
    elev = rng.uniform(0.05, 0.85, n_frames)
    radius = bound * rng.uniform(2.4, 3.1, n_frames)
    cams = []
    for i in range(n_frames):
        pos = (
            radius[i] * np.cos(elev[i]) * np.cos(azim[i]),
            radius[i] * np.sin(elev[i]),
            radius[i] * np.cos(elev[i]) * np.sin(azim[i]),
        )
        cams.append(
            Camera(
                position=pos,
                look_at=(0.0, 0.0, 0.0),
                near=0.1,
                far=4.0 * bound + 8.0,
                width=width,
                height=height,
            )
        )
    return cams


def generate_dataset(
    scene: SceneSpec,
    n_frames: int,
    camera_path_seed: int,
    tess: TessellationConfig,
    out_dir,
    width=128,
    height=128,
    workers=None,
) -> DatasetManifest:
    """Render n_frames input/label pairs along a seeded orbit.

    Deterministic given the seed: camera parameters are drawn up front
    and every frame is a pure function of its own parameters, so the
    worker count never changes the bytes on disk.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cams = _orbit_cameras(scene, n_frames, camera_path_seed, width, height)
    names = tuple(f"frame_{i:05d}" for i in range(n_frames))
    if workers is None:
        env = os.environ.get("NIST_THREADS")
        workers = max(1, min(os.cpu_count() or 1, int(env) if env else (os.cpu_count() or 1)))
    jobs = list(range(n_frames))
    if workers > 1 and n_frames > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(
                pool.map(
                    _render_job,
                    [(scene, cams[i], tess, str(out_dir / names[i])) for i in jobs],
                    chunksize=max(1, n_frames // (4 * workers)),
                )
            )
    else:
        mesh = scene.build_mesh()
        tess_mesh = tessellate_phong(mesh, tess)
        for i in jobs:
            frame = make_pair(scene, cams[i], tess, mesh=mesh, tess_mesh=tess_mesh)
            save_frame(frame, out_dir / names[i])

    manifest = DatasetManifest(out_dir, camera_path_seed, n_frames, width, height, names)
    write_manifest(manifest)
    return manifest


def _render_job(args):
    scene, cam, tess, frame_dir = args
    save_frame(make_pair(scene, cam, tess), frame_dir)


def write_manifest(manifest: DatasetManifest):
    lines = [
        f"seed={manifest.seed}",
        f"count={manifest.count}",
        f"res={manifest.width}x{manifest.height}",
    ]
    lines.extend(manifest.frame_names)
    (Path(manifest.root) / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    lines = path.read_text().splitlines()
    header = {}
    names = []
    for line in lines:
        if "=" in line and not line.startswith("frame"):
            key, _, val = line.partition("=")
            header[key] = val
        elif line.strip():
            names.append(line.strip())
    try:
        seed = int(header["seed"])
        count = int(header["count"])
        w, _, h = header["res"].partition("x")
    except KeyError as e:
        raise ValueError(f"manifest {path} missing header line {e}") from e
    if count != len(names):
        raise ValueError(f"manifest {path}: count={count} but {len(names)} frame lines")
    return DatasetManifest(path.parent, seed, count, int(w), int(h), tuple(names))
