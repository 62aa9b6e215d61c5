"""Exact ray-triangle tracing used for ground-truth images."""

from __future__ import annotations

import numpy as np

from ..geometry import Camera, pixel_directions, pixel_grid

LIGHT_DIRECTION = np.array([0.3, -0.4, 0.866])
AMBIENT = 0.35


def intersect(origins, directions, vertices, triangles, chunk: int = 1024):
    """Nearest hit per ray. Returns ``(t, tri)``; misses have ``t = inf, tri = -1``.

    Moller-Trumbore on the ray/triangle pairs that survive a bounding-sphere
    test against each triangle.
    """
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    n = len(directions)
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    if len(triangles) == 0:
        return best_t, best_tri
    v0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v0
    e2 = vertices[triangles[:, 2]] - v0
    centers = vertices[triangles].mean(axis=1)
    radius2 = (np.linalg.norm(vertices[triangles] - centers[:, None], axis=-1).max(axis=1) * (1 + 1e-9) + 1e-12) ** 2
    for s in range(0, n, chunk):
        o, d = origins[s:s + chunk], directions[s:s + chunk]
        w = centers[None] - o[:, None]
        proj = np.einsum("rtk,rk->rt", w, d)
        perp2 = (w * w).sum(-1) - proj**2
        ray_idx, tri_idx = np.nonzero(perp2 <= radius2[None])
        if len(ray_idx) == 0:
            continue
        dd, oo = d[ray_idx], o[ray_idx]
        a, b, c = v0[tri_idx], e1[tri_idx], e2[tri_idx]
        p = np.cross(dd, c)
        det = (b * p).sum(-1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = oo - a
        u = (tv * p).sum(-1) * inv
        q = np.cross(tv, b)
        v = (dd * q).sum(-1) * inv
        t = (c * q).sum(-1) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
        ray_idx, tri_idx, t = ray_idx[hit], tri_idx[hit], t[hit]
        # nearest hit per ray; ties resolved toward the lower triangle index
        order = np.lexsort((tri_idx, t, ray_idx))
        ray_idx, tri_idx, t = ray_idx[order], tri_idx[order], t[order]
        first = np.ones(len(ray_idx), dtype=bool)
        first[1:] = ray_idx[1:] != ray_idx[:-1]
        best_t[s + ray_idx[first]] = t[first]
        best_tri[s + ray_idx[first]] = tri_idx[first]
    return best_t, best_tri


def shade(albedo, normals, directions) -> np.ndarray:
    """Two-sided Lambertian shading with one directional light plus ambient."""
    light = LIGHT_DIRECTION / np.linalg.norm(LIGHT_DIRECTION)
    facing = np.where(((normals * directions).sum(-1) > 0)[:, None], -normals, normals)
    lambert = np.clip(facing @ light, 0.0, None)
    return np.asarray(albedo, dtype=np.float64) * (AMBIENT + (1 - AMBIENT) * lambert)[:, None]


def trace_labels(camera: Camera, meshes, albedos, labels, background):
    """Render labelled meshes. Returns image (H,W,3), mask (H,W), depth (H,W)."""
    h, w = camera.height, camera.width
    dirs = pixel_directions(camera, pixel_grid(w, h).reshape(-1, 2))
    origins = np.broadcast_to(camera.center, dirs.shape)
    image = np.broadcast_to(np.asarray(background, dtype=np.float64), (h * w, 3)).copy()
    mask = np.zeros(h * w, dtype=np.uint8)
    depth = np.full(h * w, np.inf)
    for mesh, albedo, label in zip(meshes, albedos, labels):
        if len(mesh.triangles) == 0:
            continue
        t, tri = intersect(origins, dirs, mesh.vertices, mesh.triangles)
        closer = t < depth
        if not closer.any():
            continue
        normals = mesh.face_normals()[tri[closer]]
        image[closer] = shade(np.asarray(albedo, dtype=np.float64), normals, dirs[closer])
        mask[closer] = label
        depth[closer] = t[closer]
    return image.reshape(h, w, 3), mask.reshape(h, w), depth.reshape(h, w)
