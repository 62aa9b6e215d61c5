"""Density grids, iso-surface extraction and semantic mesh sanitization.

Surfaces are taken on the occupancy ``1 - exp(-sigma * voxel)`` at level 0.5
with scikit-image's Lewiner marching cubes (topologically disambiguated
cases, vertices interpolated along edges). The grid is padded with one
empty layer so every surface closes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from skimage import measure

from .errors import EmptyMesh
from .mesh import TriangleMesh
from .semantic_field import Conditioning, FieldHead, field_at

RECON_VOXEL = 0.002
HAND_LABEL, OBJECT_LABEL = 1, 2


@dataclass
class DensityGrid:
    """Per-voxel density and argmax label; voxel ``(i, j, k)`` is centered at ``origin + (ijk + 0.5) * voxel``."""

    origin: np.ndarray
    voxel_size: float
    sigma: np.ndarray  # (X, Y, Z)
    labels: np.ndarray  # (X, Y, Z) uint8

    @property
    def dims(self) -> tuple:
        return self.sigma.shape

    def centers(self) -> np.ndarray:
        axes = [self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.voxel_size for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def occupancy(self) -> np.ndarray:
        return 1.0 - np.exp(-self.sigma * self.voxel_size)


def grid_dims(lo, hi, voxel_size: float = RECON_VOXEL) -> tuple:
    extent = np.asarray(hi, dtype=np.float64) - np.asarray(lo, dtype=np.float64)
    return tuple(int(max(1, np.ceil(e / voxel_size - 1e-9))) for e in extent)


def grid_from_function(fn, lo, hi, voxel_size: float = RECON_VOXEL, chunk: int = 1 << 16) -> DensityGrid:
    """Evaluate ``fn(points) -> (sigma, labels)`` at every voxel center."""
    lo = np.asarray(lo, dtype=np.float64)
    dims = grid_dims(lo, hi, voxel_size)
    grid = DensityGrid(lo, voxel_size, np.zeros(dims), np.zeros(dims, dtype=np.uint8))
    pts = grid.centers().reshape(-1, 3)
    sigma, labels = grid.sigma.reshape(-1), grid.labels.reshape(-1)
    for s in range(0, len(pts), chunk):
        sg, lb = fn(pts[s:s + chunk])
        sigma[s:s + chunk] = sg
        labels[s:s + chunk] = lb
    return grid


def extract_grid(head: FieldHead, cond: Conditioning, lo, hi, voxel_size: float = RECON_VOXEL,
                 chunk: int = 1 << 15) -> DensityGrid:
    """Density and label argmax of the trained field at voxel centers."""

    def fn(points):
        with torch.no_grad():
            out = field_at(head, cond, points, np.broadcast_to([0.0, 0.0, 1.0], points.shape))
        return out.sigma.double().numpy(), out.label_logits.argmax(-1).numpy().astype(np.uint8)

    return grid_from_function(fn, lo, hi, voxel_size, chunk)


@dataclass
class VoxelSupport:
    """Occupied-voxel component of each mesh vertex and the size of every component."""

    vertex_component: np.ndarray
    component_sizes: np.ndarray
    occupied: int


def _occupancy_mesh(occ: np.ndarray, origin, voxel_size: float, iso: float, tag: str) -> TriangleMesh:
    inside = occ >= iso
    if not inside.any():
        raise EmptyMesh(f"no cell crosses iso level {iso}")
    padded = np.pad(occ, 1, constant_values=0.0)
    verts, faces, _, _ = measure.marching_cubes(padded, level=iso, method="lewiner", allow_degenerate=False)
    # grid coordinates of the padded array -> world
    idx = verts - 1.0
    world = np.asarray(origin) + (idx + 0.5) * voxel_size
    mesh = TriangleMesh(world, faces.astype(np.int64), tag)
    areas = mesh.triangle_areas()
    mesh = _drop_triangles(mesh, areas <= 1e-12 * voxel_size**2)
    if mesh.is_empty:
        raise EmptyMesh(f"no cell crosses iso level {iso}")
    mesh.support = _support(mesh, idx_of(mesh, origin, voxel_size), inside)
    return mesh


def idx_of(mesh: TriangleMesh, origin, voxel_size: float) -> np.ndarray:
    return (mesh.vertices - np.asarray(origin)) / voxel_size - 0.5


def _support(mesh: TriangleMesh, idx: np.ndarray, inside: np.ndarray) -> VoxelSupport:
    """Tie every vertex to the occupied end of the grid edge it sits on."""
    comp, n = ndimage.label(inside, structure=np.ones((3, 3, 3)))
    sizes = np.bincount(comp.ravel(), minlength=n + 1)
    lo = np.floor(idx + 1e-9).astype(np.int64)
    hi = np.ceil(idx - 1e-9).astype(np.int64)
    shape = np.asarray(inside.shape)

    def label_at(c):
        ok = np.all((c >= 0) & (c < shape), axis=1)
        out = np.zeros(len(c), dtype=np.int64)
        cc = c[ok]
        out[ok] = comp[cc[:, 0], cc[:, 1], cc[:, 2]]
        return out

    a, b = label_at(lo), label_at(hi)
    return VoxelSupport(np.where(a > 0, a, b), sizes, int(inside.sum()))


def _drop_triangles(mesh: TriangleMesh, drop: np.ndarray) -> TriangleMesh:
    tris = mesh.triangles[~drop]
    used, inverse = np.unique(tris.ravel(), return_inverse=True)
    support = mesh.support
    if support is not None:
        support = VoxelSupport(support.vertex_component[used], support.component_sizes, support.occupied)
    return TriangleMesh(mesh.vertices[used], inverse.reshape(-1, 3), mesh.tag, support)


def marching_cubes(grid: DensityGrid, iso: float = 0.5, tag: str = "whole") -> TriangleMesh:
    """Iso-surface of the occupancy; raises EmptyMesh when nothing crosses ``iso``."""
    if grid.sigma.size == 0:
        raise EmptyMesh("empty grid")
    return _occupancy_mesh(grid.occupancy(), grid.origin, grid.voxel_size, iso, tag)


def _empty(tag: str) -> TriangleMesh:
    return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), tag)


def labeled_mesh(grid: DensityGrid, labels, iso: float = 0.5, tag: str = "whole") -> TriangleMesh:
    """Marching cubes on the occupancy with voxels outside ``labels`` emptied; empty mesh if none cross."""
    occ = np.where(np.isin(grid.labels, labels), grid.occupancy(), 0.0)
    try:
        return _occupancy_mesh(occ, grid.origin, grid.voxel_size, iso, tag)
    except EmptyMesh:
        return _empty(tag)


def split_semantic(grid: DensityGrid, iso: float = 0.5):
    """Hand and object meshes from label-masked occupancy (masking happens before extraction)."""
    return labeled_mesh(grid, [HAND_LABEL], iso, "hand"), labeled_mesh(grid, [OBJECT_LABEL], iso, "object")


def occupied_count(grid: DensityGrid, labels=None, iso: float = 0.5) -> int:
    occ = grid.occupancy() >= iso
    if labels is not None:
        occ &= np.isin(grid.labels, labels)
    return int(occ.sum())


def mesh_components(mesh: TriangleMesh) -> np.ndarray:
    """Connected-component id per triangle (triangles sharing a vertex are connected)."""
    n_t = len(mesh.triangles)
    if n_t == 0:
        return np.zeros(0, dtype=np.int64)
    rows = np.repeat(np.arange(n_t), 3)
    graph = coo_matrix((np.ones(3 * n_t), (rows, mesh.triangles.ravel())), shape=(n_t, len(mesh.vertices)))
    adjacency = (graph.T @ graph).tocsr()  # vertex-vertex through shared triangles
    _, vlabel = connected_components(adjacency, directed=False)
    return vlabel[mesh.triangles[:, 0]]


def remove_small_components(mesh: TriangleMesh, input_voxel_count: int, fraction: float = 0.10) -> TriangleMesh:
    """Delete components supported by fewer than ``fraction * input_voxel_count`` occupied voxels.

    A component's support is the set of occupied voxel clusters its vertices
    border. Components exactly at the threshold are kept.
    """
    if mesh.is_empty:
        return mesh
    if mesh.support is None:
        raise ValueError("mesh carries no voxel support; extract it with marching_cubes")
    tri_comp = mesh_components(mesh)
    vcomp = mesh.support.vertex_component
    sizes = mesh.support.component_sizes
    threshold = fraction * input_voxel_count
    drop = np.zeros(len(mesh.triangles), dtype=bool)
    for c in np.unique(tri_comp):
        tris = mesh.triangles[tri_comp == c]
        clusters = np.unique(vcomp[tris.ravel()])
        clusters = clusters[clusters > 0]
        if sizes[clusters].sum() < threshold:
            drop |= tri_comp == c
    if not drop.any():
        return mesh
    return _drop_triangles(mesh, drop)
