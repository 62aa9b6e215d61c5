"""Triangle meshes: container, primitive builders, OBJ IO and distance helpers."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    tag: str = "whole"
    support: object = field(default=None, repr=False, compare=False)  # voxel bookkeeping from extraction

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def transformed(self, rotation, translation) -> "TriangleMesh":
        v = self.vertices @ np.asarray(rotation).T + np.asarray(translation)
        return TriangleMesh(v, self.triangles.copy(), self.tag)


def concatenate(meshes, tag: str = "whole") -> TriangleMesh:
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    if not verts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), tag)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris), tag)


def _orient_outward(vertices, triangles, center):
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    n = np.cross(b - a, c - a)
    flip = np.einsum("ij,ij->i", n, (a + b + c) / 3.0 - center) < 0
    triangles = triangles.copy()
    triangles[flip] = triangles[flip][:, ::-1]
    return triangles


def box_mesh(lo, hi, divisions=(1, 1, 1)) -> TriangleMesh:
    """Closed axis-aligned box with each side split into a quad lattice."""
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    n = np.asarray(divisions, dtype=np.int64)
    index = {}
    verts, tris = [], []

    def vid(key):
        if key not in index:
            index[key] = len(verts)
            verts.append(lo + (hi - lo) * np.asarray(key, dtype=np.float64) / n)
        return index[key]

    for axis in range(3):
        u_ax, v_ax = [a for a in range(3) if a != axis]
        for side in (0, n[axis]):
            for i in range(n[u_ax]):
                for j in range(n[v_ax]):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        key = [0, 0, 0]
                        key[axis], key[u_ax], key[v_ax] = side, i + di, j + dj
                        quad.append(vid(tuple(key)))
                    tris += [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]
    verts = np.asarray(verts)
    tris = _orient_outward(verts, np.asarray(tris, dtype=np.int64), (lo + hi) / 2)
    return TriangleMesh(verts, tris)


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> TriangleMesh:
    t = (1.0 + 5**0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts) * radius
    return TriangleMesh(v, _orient_outward(v, np.asarray(faces), np.zeros(3)))


def cylinder_mesh(radius: float, height: float, segments: int = 32, rings: int = 4) -> TriangleMesh:
    """Capped cylinder along z, centered at the origin."""
    ang = 2 * np.pi * np.arange(segments) / segments
    zs = np.linspace(-height / 2, height / 2, rings + 1)
    verts = [(radius * np.cos(a), radius * np.sin(a), z) for z in zs for a in ang]
    tris = []
    for r in range(rings):
        for s in range(segments):
            a, b = r * segments + s, r * segments + (s + 1) % segments
            c, d = a + segments, b + segments
            tris += [(a, b, d), (a, d, c)]
    bottom, top = len(verts), len(verts) + 1
    verts += [(0, 0, -height / 2), (0, 0, height / 2)]
    top_ring = rings * segments
    for s in range(segments):
        tris.append((bottom, (s + 1) % segments, s))
        tris.append((top, top_ring + s, top_ring + (s + 1) % segments))
    v = np.asarray(verts, dtype=np.float64)
    return TriangleMesh(v, _orient_outward(v, np.asarray(tris), np.zeros(3)))


def _signed_pow(x, p):
    return np.sign(x) * np.abs(x) ** p


def superellipsoid_mesh(radii, e1: float, e2: float, n_lat: int = 24, n_lon: int = 48) -> TriangleMesh:
    """Superellipsoid with exponents ``e1`` (latitude) and ``e2`` (longitude)."""
    radii = np.asarray(radii, dtype=np.float64)
    verts = [(0.0, 0.0, radii[2]), (0.0, 0.0, -radii[2])]
    for i in range(1, n_lat):
        eta = np.pi / 2 - np.pi * i / n_lat
        for j in range(n_lon):
            om = -np.pi + 2 * np.pi * j / n_lon
            ce, se = _signed_pow(np.cos(eta), e1), _signed_pow(np.sin(eta), e1)
            verts.append((radii[0] * ce * _signed_pow(np.cos(om), e2),
                          radii[1] * ce * _signed_pow(np.sin(om), e2),
                          radii[2] * se))
    tris = []
    ring = lambda i, j: 2 + (i - 1) * n_lon + j % n_lon  # noqa: E731
    for j in range(n_lon):
        tris.append((0, ring(1, j), ring(1, j + 1)))
        tris.append((1, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris += [(a, c, d), (a, d, b)]
    v = np.asarray(verts)
    return TriangleMesh(v, _orient_outward(v, np.asarray(tris), np.zeros(3)))


def write_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"# {mesh.tag}"]
    lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path, tag: str | None = None) -> TriangleMesh:
    verts, tris, found_tag = [], [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("v "):
            verts.append([float(x) for x in line.split()[1:4]])
        elif line.startswith("f "):
            tris.append([int(tok.split("/")[0]) - 1 for tok in line.split()[1:4]])
        elif line.startswith("# ") and found_tag is None:
            found_tag = line[2:].strip()
    return TriangleMesh(np.asarray(verts).reshape(-1, 3), np.asarray(tris, dtype=np.int64).reshape(-1, 3),
                        tag or found_tag or "whole")


def point_triangle_distance(points, a, b, c) -> np.ndarray:
    """Exact Euclidean distance from each point to each triangle, shape (P, T).

    Region-based closest-point computation (Ericson, Real-Time Collision
    Detection, 5.1.5), vectorized over points and triangles.
    """
    p = np.asarray(points, dtype=np.float64)[:, None, :]
    a, b, c = (np.asarray(x, dtype=np.float64)[None] for x in (a, b, c))
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = (ab * ap).sum(-1), (ac * ap).sum(-1)
    bp = p - b
    d3, d4 = (ab * bp).sum(-1), (ac * bp).sum(-1)
    cp = p - c
    d5, d6 = (ab * cp).sum(-1), (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    closest = np.empty(np.broadcast_shapes(p.shape, a.shape))
    done = np.zeros(closest.shape[:2], dtype=bool)

    def assign(mask, value):
        nonlocal done
        mask = mask & ~done
        closest[mask] = np.broadcast_to(value, closest.shape)[mask]
        done |= mask

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[..., None] * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[..., None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[..., None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v, w = vb * denom, vc * denom
        assign(np.ones_like(done), a + v[..., None] * ab + w[..., None] * ac)
    return np.linalg.norm(closest - p, axis=-1)


def point_mesh_distance(points, mesh: TriangleMesh, chunk: int = 64) -> np.ndarray:
    """Unsigned distance from points to the mesh surface (brute force)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        out[s:s + chunk] = point_triangle_distance(points[s:s + chunk], a, b, c).min(axis=1)
    return out


@dataclass
class MeshStats:
    n_vertices: int
    n_triangles: int
    euler: int
    boundary_edges: int = field(default=0)


def mesh_stats(mesh: TriangleMesh) -> MeshStats:
    tri = mesh.triangles
    edges = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    used = np.unique(tri)
    return MeshStats(len(used), len(tri), len(used) - len(uniq) + len(tri), int((counts == 1).sum()))
