"""Graspable primitive objects: meshes and analytic signed distances."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..mesh import TriangleMesh, box_mesh, cylinder_mesh, icosphere, superellipsoid_mesh

KINDS = ("sphere", "box", "cylinder", "superellipsoid")


@dataclass
class ObjectSpec:
    """Primitive object.

    ``size`` by kind: sphere ``(radius,)``; box ``(sx, sy, sz)`` full extents;
    cylinder ``(radius, height)`` along local z; superellipsoid
    ``(rx, ry, rz, e1, e2)`` with exponents in (0, 1] (convex).
    """

    kind: str
    size: tuple
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    albedo: tuple = (0.2, 0.45, 0.85)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")
        self.size = tuple(float(s) for s in self.size)
        expected = {"sphere": 1, "box": 3, "cylinder": 2, "superellipsoid": 5}[self.kind]
        if len(self.size) != expected:
            raise ValueError(f"{self.kind} takes {expected} size parameters")
        if any(s <= 0 for s in self.size):
            raise ValueError("size parameters must be positive")
        if self.kind == "superellipsoid" and not all(0 < e <= 1 for e in self.size[3:]):
            raise ValueError("superellipsoid exponents must lie in (0, 1]")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def posed(self, rotation, translation) -> "ObjectSpec":
        return replace(self, rotation=np.asarray(rotation, dtype=np.float64),
                       translation=np.asarray(translation, dtype=np.float64))


def local_mesh(spec: ObjectSpec) -> TriangleMesh:
    s = spec.size
    if spec.kind == "sphere":
        mesh = icosphere(s[0], subdivisions=3)
    elif spec.kind == "box":
        half = np.asarray(s) / 2
        mesh = box_mesh(-half, half, tuple(max(1, int(np.ceil(x / 0.01))) for x in s))
    elif spec.kind == "cylinder":
        mesh = cylinder_mesh(s[0], s[1], segments=40, rings=max(1, int(np.ceil(s[1] / 0.01))))
    else:
        mesh = superellipsoid_mesh(s[:3], s[3], s[4])
    mesh.tag = "object"
    return mesh


def object_mesh(spec: ObjectSpec) -> TriangleMesh:
    mesh = local_mesh(spec).transformed(spec.rotation, spec.translation)
    mesh.tag = "object"
    return mesh


def local_sdf(spec: ObjectSpec, p: np.ndarray) -> np.ndarray:
    s = spec.size
    if spec.kind == "sphere":
        return np.linalg.norm(p, axis=-1) - s[0]
    if spec.kind == "box":
        q = np.abs(p) - np.asarray(s) / 2
        return np.linalg.norm(np.maximum(q, 0), axis=-1) + np.minimum(q.max(axis=-1), 0)
    if spec.kind == "cylinder":
        d = np.stack([np.linalg.norm(p[..., :2], axis=-1) - s[0], np.abs(p[..., 2]) - s[1] / 2], axis=-1)
        return np.linalg.norm(np.maximum(d, 0), axis=-1) + np.minimum(d.max(axis=-1), 0)
    # superellipsoid: radial approximation, exact on the surface
    r, e1, e2 = np.asarray(s[:3]), s[3], s[4]
    a = np.abs(p) / r
    f = (a[..., 0] ** (2 / e2) + a[..., 1] ** (2 / e2)) ** (e2 / e1) + a[..., 2] ** (2 / e1)
    norm = np.linalg.norm(p, axis=-1)
    with np.errstate(divide="ignore"):
        return np.where(f > 0, norm * (1 - f ** (-e1 / 2)), -min(r))


def signed_distance(spec: ObjectSpec, points) -> np.ndarray:
    """Signed distance in world coordinates (negative inside)."""
    local = (np.asarray(points, dtype=np.float64) - spec.translation) @ spec.rotation
    return local_sdf(spec, local)


def bounding_radius(spec: ObjectSpec) -> float:
    return float(np.linalg.norm(local_mesh(spec).vertices, axis=1).max())


def support(spec: ObjectSpec, direction) -> float:
    """Extent of the object from its center along a world direction."""
    d = np.asarray(direction, dtype=np.float64)
    v = local_mesh(spec).vertices @ spec.rotation.T
    return float((v @ (d / np.linalg.norm(d))).max())
