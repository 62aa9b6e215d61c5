"""Pinhole cameras, rays, point sampling and positional encodings.

Conventions: right-handed frames, camera looks down +z, image x grows to the
right and y grows downward, pixel (i, j) covers [i, i+1) x [j, j+1) so its
center sits at (i + 0.5, j + 0.5). World units are meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import BehindCamera, DegenerateRange, OutOfImage

MIN_DEPTH = 1e-9


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera pose ``x_cam = R @ x + t``."""

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)

    def validate(self) -> None:
        r = self.rotation
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise ValueError("camera rotation is not a proper orthonormal matrix")
        fx, fy = self.intrinsics[0, 0], self.intrinsics[1, 1]
        cx, cy = self.intrinsics[0, 2], self.intrinsics[1, 2]
        if fx <= 0 or fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= cx <= self.width and 0 <= cy <= self.height):
            raise ValueError("principal point outside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[2].copy()

    @classmethod
    def look_at(cls, eye, target, up, focal, width, height) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-8:
            x = np.cross(z, [1.0, 0.0, 0.0] if abs(z[0]) < 0.9 else [0.0, 1.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        rot = np.stack([x, y, z])
        k = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
        return cls(k, rot, -rot @ eye, width, height)


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


def project_points(camera: Camera, points: np.ndarray):
    """Vectorized projection. Returns ``(uv, depth)``; no depth check."""
    points = np.asarray(points, dtype=np.float64)
    cam = points @ camera.rotation.T + camera.translation
    z = cam[..., 2]
    safe = np.where(np.abs(z) > MIN_DEPTH, z, MIN_DEPTH)
    k = camera.intrinsics
    u = k[0, 0] * cam[..., 0] / safe + k[0, 1] * cam[..., 1] / safe + k[0, 2]
    v = k[1, 1] * cam[..., 1] / safe + k[1, 2]
    return np.stack([u, v], axis=-1), z


def project(camera: Camera, x) -> np.ndarray:
    """Continuous pixel coordinate of world point ``x``."""
    uv, z = project_points(camera, np.asarray(x, dtype=np.float64).reshape(1, 3))
    if z[0] <= MIN_DEPTH:
        raise BehindCamera(f"point has camera depth {z[0]:.3g}")
    return uv[0]


def pixel_directions(camera: Camera, pixels: np.ndarray) -> np.ndarray:
    """Unit world-frame directions through continuous pixel coordinates."""
    pixels = np.asarray(pixels, dtype=np.float64)
    ones = np.ones(pixels.shape[:-1] + (1,))
    homog = np.concatenate([pixels, ones], axis=-1)
    cam_dirs = homog @ np.linalg.inv(camera.intrinsics).T
    world = cam_dirs @ camera.rotation
    return world / np.linalg.norm(world, axis=-1, keepdims=True)


def cast_ray(camera: Camera, pixel, near: float = 0.0, far: float = 10.0) -> Ray:
    pixel = np.asarray(pixel, dtype=np.float64)
    if not (0 <= pixel[0] < camera.width and 0 <= pixel[1] < camera.height):
        raise OutOfImage(f"pixel {tuple(pixel)} outside {camera.width}x{camera.height}")
    return Ray(camera.center, pixel_directions(camera, pixel), float(near), float(far))


def pixel_grid(width: int, height: int) -> np.ndarray:
    """Pixel-center coordinates, shape (height, width, 2), row-major."""
    ys, xs = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5, indexing="ij")
    return np.stack([xs, ys], axis=-1)


def ray_box_intersection(origins, directions, box_min, box_max):
    """Slab test. Returns ``(near, far, hit)`` per ray; ``near`` clamped at 0."""
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (np.asarray(box_min) - origins) * inv
        t1 = (np.asarray(box_max) - origins) * inv
    lo = np.nan_to_num(np.minimum(t0, t1), nan=-np.inf)
    hi = np.nan_to_num(np.maximum(t0, t1), nan=np.inf)
    near = np.maximum(lo.max(axis=-1), 0.0)
    far = hi.min(axis=-1)
    return near, far, far > near + 1e-9


@dataclass(frozen=True)
class PositionalEncoding:
    num_frequencies: int = 6
    include_input: bool = True

    def output_dim(self, input_dim: int) -> int:
        return input_dim * (int(self.include_input) + 2 * self.num_frequencies)


def encode_position(pe: PositionalEncoding, x):
    """``[x, sin(2^k pi x), cos(2^k pi x)]`` for k < num_frequencies.

    Works on numpy arrays and torch tensors; the last axis is encoded.
    """
    if isinstance(x, torch.Tensor):
        parts = [x] if pe.include_input else []
        for k in range(pe.num_frequencies):
            arg = (2.0**k * np.pi) * x
            parts += [torch.sin(arg), torch.cos(arg)]
        if not parts:
            return x[..., :0]
        return torch.cat(parts, dim=-1)
    x = np.asarray(x, dtype=np.float64)
    parts = [x] if pe.include_input else []
    for k in range(pe.num_frequencies):
        arg = (2.0**k * np.pi) * x
        parts += [np.sin(arg), np.cos(arg)]
    if not parts:
        return x[..., :0]
    return np.concatenate(parts, axis=-1)


def sample_depths(near, far, n: int, stratified: bool, rng: np.random.Generator | None = None):
    """Depths and segment lengths for a batch of rays.

    ``near``/``far`` are arrays of shape (R,). Returns ``(t, delta)`` of shape
    (R, n). Each segment runs to the next sample; the last one ends at ``far``.
    """
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    if n < 1:
        raise ValueError("need at least one sample")
    if np.any(far - near < 1e-9):
        raise DegenerateRange("far - near below 1e-9")
    width = (far - near)[:, None] / n
    offsets = np.full((near.shape[0], n), 0.5)
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        offsets = rng.random((near.shape[0], n))
    t = near[:, None] + (np.arange(n)[None, :] + offsets) * width
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    delta[:, -1] = far - t[:, -1]
    return t, delta


def sample_along_ray(ray: Ray, n: int = 64, stratified: bool = False, seed: int = 0):
    """Ordered points on ``ray`` between near and far.

    Returns ``(points, t, delta)`` with shapes (n, 3), (n,), (n,).
    """
    rng = np.random.default_rng(seed)
    t, delta = sample_depths(ray.near, ray.far, n, stratified, rng)
    return ray.at(t[0]), t[0], delta[0]
