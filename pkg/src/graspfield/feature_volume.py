"""Sparse input feature volume built from the hand mesh and the object mask.

Every voxel takes at most one of two kinds of entry, tried in order:

* hand: the voxel contains the centroid of hand face ``i``; the entry is
  ``[h; PE(centroid); psi(i)]`` where ``h`` is the image feature at the
  centroid's projection and ``psi(i)`` a fixed random code of the face.
* object: the voxel center projects onto an object pixel of the input mask;
  the entry is ``[o; PE(x); e]`` with the image feature ``o`` at that
  projection and one shared random code ``e``.

All other voxels are empty (zero). Object entries fill the whole mask
frustum inside the bounds; the network downstream has to sort out depth.

Entries remember the point they were made from. Augmentations move those
points (jitter for object points, a rigid rotation for all of them) and then
rasterize again, so the geometry part of each feature follows the point.
The rotation is recorded on the volume as a map from world to volume frame;
queries go through the same map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from .errors import EmptyVolume
from .geometry import Camera, PositionalEncoding, encode_position, project_points
from .image_encoder import FeatureMap, sample_feature

log = logging.getLogger(__name__)

VOXEL_SIZE = 0.005
DEFAULT_MARGIN = 0.25
CODE_DIM = 16
HAND, OBJECT = 1, 2
COORD_PE = PositionalEncoding(6, True)


@dataclass(frozen=True)
class Bounds:
    lo: np.ndarray
    hi: np.ndarray
    voxel_size: float
    dims: tuple

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2

    @property
    def half_extent(self) -> float:
        """Largest half side length; positions are divided by it before encoding."""
        return float(np.max(self.hi - self.lo) / 2)


def compute_bounds(centroids, margin: float = DEFAULT_MARGIN, voxel_size: float = VOXEL_SIZE) -> Bounds:
    """Centroid AABB grown by ``margin``; the upper corner snaps to whole voxels."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    pts = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    lo = pts.min(axis=0) - margin
    extent = pts.max(axis=0) + margin - lo
    dims = tuple(int(max(1, np.ceil(e / voxel_size - 1e-9))) for e in extent)
    return Bounds(lo, lo + np.asarray(dims) * voxel_size, voxel_size, dims)


class CodeBook:
    """Fixed Gaussian codes: one per hand face plus the shared object code."""

    def __init__(self, n_faces: int, seed: int = 0, dim: int = CODE_DIM):
        rng = np.random.default_rng([seed, 31337])
        self.seed = seed
        self.dim = dim
        self._face = rng.standard_normal((n_faces, dim))
        self._object = rng.standard_normal(dim)
        self._face.setflags(write=False)
        self._object.setflags(write=False)

    @property
    def n_faces(self) -> int:
        return len(self._face)

    def face_codes(self, index=None) -> np.ndarray:
        return self._face if index is None else self._face[index]

    @property
    def object_code(self) -> np.ndarray:
        return self._object


def feature_dim(image_channels: int, code_dim: int = CODE_DIM) -> int:
    return image_channels + COORD_PE.output_dim(3) + code_dim


@dataclass
class SparseFeatureVolume:
    """Sparse voxel grid. ``coords`` index voxels of ``bounds`` in the volume frame.

    ``points`` are the source points in the volume frame, ``image_features``
    and ``codes`` the parts of each entry that do not depend on position.
    ``frame`` maps world points into the volume frame: ``R (x - c) + c``.
    """

    bounds: Bounds
    coords: np.ndarray  # (N, 3) int64
    kinds: np.ndarray  # (N,) HAND or OBJECT
    points: np.ndarray  # (N, 3)
    image_features: torch.Tensor  # (N, C)
    codes: torch.Tensor  # (N, code_dim)
    source: np.ndarray  # (N,) face index for hand entries, object point index otherwise
    frame: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def features(self) -> torch.Tensor:
        pe = encode_position(COORD_PE, (self.points - self.bounds.center) / self.bounds.half_extent)
        pe = torch.as_tensor(pe, dtype=self.image_features.dtype)
        return torch.cat([self.image_features, pe, self.codes], dim=-1)

    def to_volume_frame(self, world_points) -> np.ndarray:
        c = self.bounds.center
        return (np.asarray(world_points, dtype=np.float64) - c) @ self.frame.T + c

    def entry_map(self) -> dict:
        feats = self.features.detach().cpu().numpy()
        return {tuple(int(v) for v in c): feats[k] for k, c in enumerate(self.coords)}


def _voxel_of(points, bounds: Bounds) -> np.ndarray:
    return np.floor((points - bounds.lo) / bounds.voxel_size).astype(np.int64)


def _rasterize(bounds: Bounds, points, kinds, source):
    """Pick one point per voxel: hand before object, then lowest source index.

    Returns indices into ``points`` of the kept entries, sorted by voxel.
    """
    coords = _voxel_of(points, bounds)
    dims = np.asarray(bounds.dims)
    inside = np.all((coords >= 0) & (coords < dims), axis=1)
    idx = np.flatnonzero(inside)
    if len(idx) == 0:
        return idx, coords[idx]
    c = coords[idx]
    key = (c[:, 0] * dims[1] + c[:, 1]) * dims[2] + c[:, 2]
    order = np.lexsort((source[idx], kinds[idx], key))
    key = key[order]
    first = np.ones(len(key), dtype=bool)
    first[1:] = key[1:] != key[:-1]
    hand_dupes = np.flatnonzero(~first & (kinds[idx][order] == HAND))
    if len(hand_dupes):
        log.debug("%d hand centroids share a voxel with a lower face index", len(hand_dupes))
    keep = idx[order[first]]
    return keep, coords[keep]


def _take(vol: SparseFeatureVolume, keep, coords, points) -> SparseFeatureVolume:
    sel = torch.as_tensor(keep, dtype=torch.long)
    return replace(vol, coords=coords, kinds=vol.kinds[keep], points=points[keep],
                   image_features=vol.image_features[sel], codes=vol.codes[sel], source=vol.source[keep])


def object_frustum_points(bounds: Bounds, mask: np.ndarray, camera: Camera, object_label: int = OBJECT):
    """Voxel centers whose projection lands on an object pixel (nearest-pixel rule).

    Returns ``(points, pixels)``, the centers and their continuous projections.
    """
    mask = np.asarray(mask)
    h, w = mask.shape
    axes = [bounds.lo[a] + (np.arange(bounds.dims[a]) + 0.5) * bounds.voxel_size for a in range(3)]
    pts_out, pix_out = [], []
    for x in axes[0]:  # one slab at a time keeps memory flat
        yy, zz = np.meshgrid(axes[1], axes[2], indexing="ij")
        slab = np.stack([np.full(yy.size, x), yy.ravel(), zz.ravel()], axis=1)
        uv, depth = project_points(camera, slab)
        iu, iv = np.floor(uv[:, 0]).astype(np.int64), np.floor(uv[:, 1]).astype(np.int64)
        ok = (depth > 1e-9) & (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
        ok[ok] = mask[iv[ok], iu[ok]] == object_label
        pts_out.append(slab[ok])
        pix_out.append(uv[ok])
    return np.concatenate(pts_out), np.concatenate(pix_out)


@dataclass
class VolumeSources:
    """Geometry of a volume that does not depend on network weights."""

    bounds: Bounds
    points: np.ndarray
    pixels: np.ndarray  # projection used to sample the image feature
    kinds: np.ndarray
    source: np.ndarray


def volume_sources(hand_centroids, mask, camera: Camera, bounds: Bounds, include_object: bool = True) -> VolumeSources:
    cents = np.asarray(hand_centroids, dtype=np.float64)
    hand_pix, _ = project_points(camera, cents)
    pts, pix = [cents], [hand_pix]
    kinds = [np.full(len(cents), HAND)]
    source = [np.arange(len(cents))]
    if include_object:
        opts, opix = object_frustum_points(bounds, mask, camera)
        pts.append(opts)
        pix.append(opix)
        kinds.append(np.full(len(opts), OBJECT))
        source.append(np.arange(len(opts)))
    return VolumeSources(bounds, np.concatenate(pts), np.concatenate(pix),
                         np.concatenate(kinds).astype(np.int8), np.concatenate(source))


def build_volume(sources: VolumeSources, fmap: FeatureMap, codes: CodeBook, frame=None) -> SparseFeatureVolume:
    """Rasterize ``sources`` with features from ``fmap``; raises EmptyVolume if nothing lands.

    ``frame`` is the world-to-volume rotation already applied to the source
    points (identity when they are untouched world points).
    """
    kinds = sources.kinds
    keep, coords = _rasterize(sources.bounds, sources.points, kinds, sources.source)
    if len(keep) == 0:
        raise EmptyVolume("no hand centroid or object voxel inside the bounds")
    dtype = fmap.values.dtype
    img = sample_feature(fmap, torch.as_tensor(sources.pixels[keep], dtype=dtype))
    is_hand = kinds[keep] == HAND
    code = np.where(is_hand[:, None], codes.face_codes()[np.where(is_hand, sources.source[keep], 0)],
                    codes.object_code[None])
    return SparseFeatureVolume(sources.bounds, coords, kinds[keep], sources.points[keep], img,
                               torch.as_tensor(code, dtype=dtype), sources.source[keep].copy(),
                               np.eye(3) if frame is None else np.asarray(frame, dtype=np.float64))


def assemble_volume(hand, mask, camera: Camera, fmap: FeatureMap, codes: CodeBook, bounds: Bounds,
                    include_object: bool = True) -> SparseFeatureVolume:
    """The full input volume for one view (hand entries win every shared voxel)."""
    centroids = hand.centroids() if hasattr(hand, "centroids") else np.asarray(hand)
    return build_volume(volume_sources(centroids, mask, camera, bounds, include_object), fmap, codes)


def perturb_sources(sources: VolumeSources, sigma: float, rng: np.random.Generator) -> VolumeSources:
    """Jitter object points with isotropic Gaussian noise; hand points stay."""
    if sigma == 0:
        return sources
    noise = rng.normal(0.0, sigma, sources.points.shape)
    noise[sources.kinds != OBJECT] = 0.0
    return replace(sources, points=sources.points + noise)


def perturb_object_entries(volume: SparseFeatureVolume, sigma_noise: float, seed: int) -> SparseFeatureVolume:
    """Jitter object-entry points and rasterize again (hand entries untouched)."""
    if sigma_noise == 0:
        return volume
    rng = np.random.default_rng([seed, 2718])
    noise = rng.normal(0.0, sigma_noise, volume.points.shape)
    noise[volume.kinds != OBJECT] = 0.0
    points = volume.points + noise
    keep, coords = _rasterize(volume.bounds, points, volume.kinds, volume.source)
    return _take(volume, keep, coords, points)


def random_angles(rng: np.random.Generator, max_angle: float = np.pi / 10) -> np.ndarray:
    return rng.uniform(-max_angle, max_angle, 3)


def rotation_matrix(angles) -> np.ndarray:
    return Rotation.from_euler("xyz", np.asarray(angles, dtype=np.float64)).as_matrix()


def rotate_sources(sources: VolumeSources, rotation: np.ndarray) -> VolumeSources:
    c = sources.bounds.center
    return replace(sources, points=(sources.points - c) @ np.asarray(rotation).T + c)


def rotate_volume(volume: SparseFeatureVolume, angles, seed: int | None = None) -> SparseFeatureVolume:
    """Rotate all entry points about the volume center and rasterize again.

    ``angles`` are XYZ Euler angles in radians; with ``seed`` given and
    ``angles=None`` they are drawn uniformly from [-pi/10, pi/10].
    """
    if angles is None:
        angles = random_angles(np.random.default_rng([seed or 0, 1618]))
    rot = rotation_matrix(angles)
    c = volume.bounds.center
    points = (volume.points - c) @ rot.T + c
    keep, coords = _rasterize(volume.bounds, points, volume.kinds, volume.source)
    out = _take(volume, keep, coords, points)
    out.frame = rot @ volume.frame
    return out
