"""Procedural desk-scale scenes: meshes, materials, and lighting.

Shapes are authored with analytic shading normals wherever the surface
has them (sphere, torus, capsule, cylinder sides), which is what makes
the smoothing oracle meaningful: the shading normal disagrees with the
flat face normal exactly where silhouettes need refinement. bar_grid is
the planar control case whose shading normals equal the face normals
everywhere, so tessellation must leave it untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, compute_normals, compute_normals_keep_vertex


@dataclass(frozen=True)
class Material:
    kind: str  # "flat" | "checker"
    color_a: tuple = (0.85, 0.8, 0.7)
    color_b: tuple = (0.3, 0.35, 0.45)
    scale: float = 2.0

    def albedo(self, world_pos):
        """Per-point RGB albedo; world_pos is (N, 3)."""
        if self.kind == "flat":
            return np.broadcast_to(
                np.asarray(self.color_a, dtype=np.float64), (len(world_pos), 3)
            )
        if self.kind == "checker":
            cells = np.floor(world_pos * self.scale).astype(np.int64).sum(axis=1)
            a = np.asarray(self.color_a, dtype=np.float64)
            b = np.asarray(self.color_b, dtype=np.float64)
            return np.where((cells % 2 == 0)[:, None], a, b)
        raise ValueError(f"unknown material kind {self.kind!r}")


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to build and shade one scene deterministically."""

    shape: str = "icosphere"
    shape_params: tuple = (1,)
    material: Material = field(default_factory=lambda: Material("checker"))
    light_dir: tuple = (0.35, 0.45, 0.82)  # toward the light, world space
    ambient: float = 0.25
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError("ambient must lie in [0, 1]")
        object.__setattr__(self, "light_dir", tuple(_unit(self.light_dir)))

    def build_mesh(self) -> Mesh:
        return build_shape(self.shape, self.shape_params)


def parse_scene_name(name: str):
    """Parse CLI scene names: icosphere1, torus8x6, cylinder12, capsule10, bar_grid."""
    if name == "bar_grid":
        return "bar_grid", ()
    for prefix in ("icosphere", "torus", "cylinder", "capsule"):
        if name.startswith(prefix):
            rest = name[len(prefix) :]
            if prefix == "torus":
                u, _, v = rest.partition("x")
                return "torus", (int(u), int(v))
            return prefix, (int(rest),)
    raise ValueError(f"unknown scene {name!r}")


def build_shape(shape: str, params: tuple) -> Mesh:
    builders = {
        "icosphere": icosphere,
        "torus": torus,
        "cylinder": cylinder,
        "capsule": capsule,
        "bar_grid": bar_grid,
    }
    if shape not in builders:
        raise ValueError(f"unknown shape {shape!r}")
    return builders[shape](*params)


def icosphere(subdivisions: int = 1) -> Mesh:
    """Unit icosphere; shading normals are exactly the vertex positions."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    raw = np.array(
        [
            (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
            (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
            (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
        ],
        dtype=np.float64,
    )
    verts = [tuple(_unit(p)) for p in raw]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    vert_index = {v: i for i, v in enumerate(verts)}

    def midpoint(i, j):
        m = tuple(_unit((np.asarray(verts[i]) + np.asarray(verts[j])) / 2.0))
        idx = vert_index.get(m)
        if idx is None:
            idx = len(verts)
            verts.append(m)
            vert_index[m] = idx
        return idx

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    v = np.asarray(verts)
    mesh = Mesh(v, np.asarray(faces, dtype=np.int64), vertex_normals=v.copy())
    return compute_normals_keep_vertex(mesh)


def torus(seg_u: int = 10, seg_v: int = 6, major: float = 0.8, minor: float = 0.35) -> Mesh:
    if seg_u < 3 or seg_v < 3:
        raise ValueError("torus segment counts must be >= 3")
    verts = np.empty((seg_u * seg_v, 3))
    normals = np.empty_like(verts)
    for i in range(seg_u):
        theta = 2 * np.pi * i / seg_u
        ct, st = np.cos(theta), np.sin(theta)
        for j in range(seg_v):
            psi = 2 * np.pi * j / seg_v
            cp, sp = np.cos(psi), np.sin(psi)
            k = i * seg_v + j
            verts[k] = ((major + minor * cp) * ct, minor * sp, (major + minor * cp) * st)
            normals[k] = (cp * ct, sp, cp * st)
    faces = []
    for i in range(seg_u):
        for j in range(seg_v):
            a = i * seg_v + j
            b = ((i + 1) % seg_u) * seg_v + j
            c = ((i + 1) % seg_u) * seg_v + (j + 1) % seg_v
            d = i * seg_v + (j + 1) % seg_v
            faces += [(a, c, b), (a, d, c)]
    mesh = Mesh(verts, np.asarray(faces, dtype=np.int64), vertex_normals=normals)
    return compute_normals_keep_vertex(mesh)


def cylinder(segments: int = 8, radius: float = 0.6, half_height: float = 0.8) -> Mesh:
    """Capped cylinder; rim vertices are duplicated so side and cap keep
    their own shading normals (the normal seam is intentional)."""
    if segments < 3:
        raise ValueError("cylinder needs >= 3 segments")
    verts = []
    normals = []
    faces = []
    for i in range(segments):
        theta = 2 * np.pi * i / segments
        c, s = np.cos(theta), np.sin(theta)
        verts += [(radius * c, -half_height, radius * s), (radius * c, half_height, radius * s)]
        normals += [(c, 0.0, s), (c, 0.0, s)]
    for i in range(segments):
        a = 2 * i
        b = 2 * ((i + 1) % segments)
        faces += [(a, a + 1, b), (b, a + 1, b + 1)]
    for sign in (-1.0, 1.0):
        centre = len(verts)
        verts.append((0.0, sign * half_height, 0.0))
        normals.append((0.0, sign, 0.0))
        ring = len(verts)
        for i in range(segments):
            theta = 2 * np.pi * i / segments
            verts.append((radius * np.cos(theta), sign * half_height, radius * np.sin(theta)))
            normals.append((0.0, sign, 0.0))
        for i in range(segments):
            a = ring + i
            b = ring + (i + 1) % segments
            # ring winds +y-wards with increasing theta; flip for the top cap
            faces.append((centre, b, a) if sign > 0 else (centre, a, b))
    mesh = Mesh(np.asarray(verts), np.asarray(faces, dtype=np.int64), vertex_normals=np.asarray(normals))
    return compute_normals_keep_vertex(mesh)


def capsule(segments: int = 8, radius: float = 0.5, half_height: float = 0.5) -> Mesh:
    """Cylinder with hemispherical ends and smooth analytic normals."""
    if segments < 3:
        raise ValueError("capsule needs >= 3 segments")
    rings = max(2, segments // 2)
    verts = []
    normals = []

    def add_ring(phi, centre_y):
        # phi: latitude, 0 at the equator, +/-pi/2 at the poles
        start = len(verts)
        y, r = np.sin(phi), np.cos(phi)
        for i in range(segments):
            theta = 2 * np.pi * i / segments
            c, s = np.cos(theta), np.sin(theta)
            verts.append((radius * r * c, centre_y + radius * y, radius * r * s))
            normals.append((r * c, y, r * s))
        return start

    ring_starts = []
    for k in range(rings - 1, 0, -1):  # southern hemisphere, pole excluded
        ring_starts.append(add_ring(-(np.pi / 2) * k / rings, -half_height))
    ring_starts.append(add_ring(0.0, -half_height))
    ring_starts.append(add_ring(0.0, half_height))
    for k in range(1, rings):  # northern hemisphere, pole excluded
        ring_starts.append(add_ring((np.pi / 2) * k / rings, half_height))
    south = len(verts)
    verts.append((0.0, -half_height - radius, 0.0))
    normals.append((0.0, -1.0, 0.0))
    north = len(verts)
    verts.append((0.0, half_height + radius, 0.0))
    normals.append((0.0, 1.0, 0.0))

    faces = []
    first, last = ring_starts[0], ring_starts[-1]
    for i in range(segments):
        a = first + i
        b = first + (i + 1) % segments
        faces.append((south, a, b))
    for lower, upper in zip(ring_starts[:-1], ring_starts[1:]):
        for i in range(segments):
            a = lower + i
            b = lower + (i + 1) % segments
            c = upper + (i + 1) % segments
            d = upper + i
            faces += [(a, c, b), (a, d, c)]
    for i in range(segments):
        a = last + i
        b = last + (i + 1) % segments
        faces.append((north, b, a))
    mesh = Mesh(np.asarray(verts), np.asarray(faces, dtype=np.int64), vertex_normals=np.asarray(normals))
    return compute_normals_keep_vertex(mesh)


def bar_grid(bars: int = 4, bar_width: float = 0.28, gap: float = 0.14) -> Mesh:
    """Flat grid of rectangular bars in the z=0 plane; shading normals
    equal the face normal, so the mesh is its own tessellation."""
    verts = []
    faces = []
    pitch = bar_width + gap
    extent = bars * pitch - gap
    origin = -extent / 2.0
    for bx in range(bars):
        for by in range(bars):
            x0 = origin + bx * pitch
            y0 = origin + by * pitch
            base = len(verts)
            verts += [
                (x0, y0, 0.0),
                (x0 + bar_width, y0, 0.0),
                (x0 + bar_width, y0 + bar_width, 0.0),
                (x0, y0 + bar_width, 0.0),
            ]
            faces += [(base, base + 1, base + 2), (base, base + 2, base + 3)]
    v = np.asarray(verts)
    normals = np.tile((0.0, 0.0, 1.0), (len(v), 1))
    mesh = Mesh(v, np.asarray(faces, dtype=np.int64), vertex_normals=normals)
    return compute_normals_keep_vertex(mesh)
