"""Indexed triangle meshes, normal computation, and the tessellation oracle.

A mesh carries two normal sets: per-face geometric normals derived from
winding, and per-vertex shading normals (authored analytically or
area-weighted averages). The tessellation oracle uniformly subdivides
each triangle and places the new vertices by projecting onto the
per-corner tangent planes, blending with the flat position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_UNIT_TOL = 1e-6


@dataclass
class Mesh:
    """Indexed triangle mesh with shading (vertex) and geometric (face) normals."""

    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (F, 3) int64
    vertex_normals: np.ndarray | None = None  # (V, 3) unit
    face_normals: np.ndarray | None = None  # (F, 3) unit

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.vertex_normals is not None:
            self.vertex_normals = np.asarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3)
        if self.face_normals is not None:
            self.face_normals = np.asarray(self.face_normals, dtype=np.float64).reshape(-1, 3)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    def validate(self):
        """Check index ranges and unit-length normals; raises ValueError."""
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= self.num_vertices
        ):
            raise ValueError("triangle indices out of range")
        for name, normals in (("vertex", self.vertex_normals), ("face", self.face_normals)):
            if normals is not None and len(normals):
                lengths = np.linalg.norm(normals, axis=1)
                bad = np.abs(lengths - 1.0) > _UNIT_TOL
                if bad.any():
                    raise ValueError(f"non-unit {name} normal at index {int(np.argmax(bad))}")
        if self.face_normals is not None and self.num_triangles:
            v, tri = self.vertices, self.triangles
            cross = np.cross(v[tri[:, 1]] - v[tri[:, 0]], v[tri[:, 2]] - v[tri[:, 0]])
            expected = cross / np.linalg.norm(cross, axis=1, keepdims=True)
            err = np.linalg.norm(expected - self.face_normals, axis=1)
            if (err > 1e-6).any():
                raise ValueError(
                    f"face normal inconsistent with winding at face {int(np.argmax(err > 1e-6))}"
                )


@dataclass(frozen=True)
class BaryPoint:
    """A point on a mesh surface: face index plus barycentric coordinates."""

    face: int
    uvw: tuple

    def __post_init__(self):
        u, v, w = self.uvw
        if u < 0 or v < 0 or w < 0 or abs(u + v + w - 1.0) > 1e-9:
            raise ValueError(f"invalid barycentric coordinates {self.uvw}")


@dataclass(frozen=True)
class TessellationConfig:
    """Each edge splits into level+1 segments; alpha blends flat vs deformed."""

    level: int = 0
    alpha: float = 0.75

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def _normalize_rows(a):
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def compute_normals(mesh: Mesh) -> Mesh:
    """Fill in face normals from winding and area-weighted vertex normals.

    Rejects degenerate (zero-area) triangles, naming the offending face:
    a silently skipped face would break the correspondence between the
    coarse mesh and its tessellated counterpart.
    """
    v = mesh.vertices
    tri = mesh.triangles
    e1 = v[tri[:, 1]] - v[tri[:, 0]]
    e2 = v[tri[:, 2]] - v[tri[:, 0]]
    cross = np.cross(e1, e2)
    norms = np.linalg.norm(cross, axis=1)
    degenerate = norms < 1e-12
    if degenerate.any():
        raise ValueError(f"degenerate triangle at face {int(np.argmax(degenerate))}")
    face_normals = cross / norms[:, None]

    # cross magnitude is twice the area, so summing raw cross products
    # area-weights the average
    vertex_acc = np.zeros_like(v)
    for corner in range(3):
        np.add.at(vertex_acc, tri[:, corner], cross)
    lengths = np.linalg.norm(vertex_acc, axis=1)
    isolated = lengths < 1e-20
    if isolated.any():
        # isolated vertices get a harmless placeholder
        vertex_acc[isolated] = (0.0, 0.0, 1.0)
        lengths[isolated] = 1.0
    vertex_normals = vertex_acc / lengths[:, None]
    return Mesh(v, tri, vertex_normals, face_normals)


def phong_project(p, v, n):
    """Project p onto the plane through v with unit normal n."""
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if abs(np.dot(n, n) - 1.0) > 3 * _UNIT_TOL:
        raise ValueError(f"normal must be unit length, |n| = {np.linalg.norm(n):.9f}")
    return p - np.dot(p - v, n) * n


def phong_point(tri_vertices, tri_vertex_normals, uvw, alpha):
    """Tangent-plane-projected surface point, blended with the flat one.

    The flat point is the barycentric combination of the corners; each
    corner contributes its projection of that point, and the result is
    (1-alpha) * flat + alpha * projected.
    """
    vs = np.asarray(tri_vertices, dtype=np.float64)
    ns = np.asarray(tri_vertex_normals, dtype=np.float64)
    u, v, w = (float(c) for c in uvw)
    p = u * vs[0] + v * vs[1] + w * vs[2]
    proj = (
        u * phong_project(p, vs[0], ns[0])
        + v * phong_project(p, vs[1], ns[1])
        + w * phong_project(p, vs[2], ns[2])
    )
    return (1.0 - alpha) * p + alpha * proj


def tessellate_phong(mesh: Mesh, config: TessellationConfig) -> Mesh:
    """Uniformly subdivide every triangle and displace via phong_point.

    Each triangle becomes (level+1)^2 sub-triangles on a barycentric
    lattice. Lattice samples shared between faces deduplicate whenever
    the adjacent faces agree bitwise on the shared vertex positions and
    normals, which keeps closed meshes crack-free. Barycentric weights
    are computed as integer/segments so shared edge samples evaluate
    identically from both sides.
    """
    if mesh.vertex_normals is None:
        raise ValueError("tessellation requires vertex normals")
    segments = config.level + 1
    alpha = config.alpha

    out_vertices = []
    out_normals = []
    out_tris = []
    index_of = {}

    def emit(position, normal):
        key = (position.tobytes(), normal.tobytes())
        idx = index_of.get(key)
        if idx is None:
            idx = len(out_vertices)
            index_of[key] = idx
            out_vertices.append(position)
            out_normals.append(normal)
        return idx

    for face in range(mesh.num_triangles):
        tri = mesh.triangles[face]
        vs = mesh.vertices[tri]
        ns = mesh.vertex_normals[tri]
        # lattice point (a, b): a steps toward corner 1, b toward corner 2
        grid = {}
        for a in range(segments + 1):
            for b in range(segments + 1 - a):
                u = float(segments - a - b) / segments
                vv = float(a) / segments
                ww = float(b) / segments
                pos = phong_point(vs, ns, (u, vv, ww), alpha)
                normal = _normalize_rows(u * ns[0] + vv * ns[1] + ww * ns[2])
                grid[(a, b)] = emit(pos, normal)
        for a in range(segments):
            for b in range(segments - a):
                i00 = grid[(a, b)]
                i10 = grid[(a + 1, b)]
                i01 = grid[(a, b + 1)]
                out_tris.append((i00, i10, i01))
                if a + b < segments - 1:
                    i11 = grid[(a + 1, b + 1)]
                    out_tris.append((i10, i11, i01))

    result = Mesh(
        np.asarray(out_vertices).reshape(-1, 3),
        np.asarray(out_tris, dtype=np.int64).reshape(-1, 3),
        vertex_normals=np.asarray(out_normals).reshape(-1, 3),
    )
    return compute_normals_keep_vertex(result)


def compute_normals_keep_vertex(mesh: Mesh) -> Mesh:
    """Recompute face normals from winding, keeping authored vertex normals."""
    filled = compute_normals(Mesh(mesh.vertices, mesh.triangles))
    return Mesh(mesh.vertices, mesh.triangles, mesh.vertex_normals, filled.face_normals)


# ---------------------------------------------------------------------------
# OBJ subset: v / vn / f with v//vn indices


def save_obj(mesh: Mesh, path):
    """Write an ASCII OBJ with explicit normals at 9 significant digits."""
    if mesh.vertex_normals is None:
        raise ValueError("OBJ writer requires vertex normals")
    lines = []
    for p in mesh.vertices:
        lines.append(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
    for n in mesh.vertex_normals:
        lines.append(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
    for t in mesh.triangles:
        lines.append(f"f {t[0]+1}//{t[0]+1} {t[1]+1}//{t[1]+1} {t[2]+1}//{t[2]+1}")
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def load_obj(path) -> Mesh:
    """Read the OBJ subset written by save_obj; fills face normals."""
    vertices = []
    normals = []
    tris = []
    normal_idx = {}
    with open(path, "r", encoding="ascii") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                corners = []
                for token in parts[1:4]:
                    vi, _, ni = token.partition("//")
                    vi = int(vi) - 1
                    corners.append(vi)
                    if ni:
                        normal_idx[vi] = int(ni) - 1
                tris.append(corners)
            else:
                raise ValueError(f"{path}:{lineno}: unsupported OBJ directive {parts[0]!r}")
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    vn = None
    if normals:
        normals = np.asarray(normals, dtype=np.float64)
        vn = np.empty_like(vertices)
        for vi in range(len(vertices)):
            vn[vi] = normals[normal_idx.get(vi, vi)]
    mesh = Mesh(vertices, np.asarray(tris, dtype=np.int64).reshape(-1, 3), vertex_normals=vn)
    return compute_normals_keep_vertex(mesh) if vn is not None else compute_normals(mesh)
