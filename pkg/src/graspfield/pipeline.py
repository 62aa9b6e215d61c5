"""Glue between a trained model, a scene and the mesh outputs."""

from __future__ import annotations

import numpy as np

from .reconstruction import (HAND_LABEL, OBJECT_LABEL, RECON_VOXEL, DensityGrid, extract_grid, labeled_mesh,
                             occupied_count, remove_small_components)
from .semantic_field import Conditioning

RECON_MARGIN = 0.06


def recon_box(ds, margin: float = RECON_MARGIN, bounds=None):
    """Box around the hand face centroids padded by ``margin`` meters.

    With ``bounds`` given the box is clipped to them: the field is only
    trained on ray segments inside the volume bounds.
    """
    c = ds.hand.centroids()
    lo, hi = c.min(axis=0) - margin, c.max(axis=0) + margin
    if bounds is not None:
        lo, hi = np.maximum(lo, bounds.lo), np.minimum(hi, bounds.hi)
    return lo, hi


def meshes_from_grid(grid: DensityGrid, sanitize: bool = True) -> dict:
    """Whole, hand and object meshes (possibly empty) plus voxel counts."""
    out, stats = {}, {}
    for tag, labels in (("whole", [HAND_LABEL, OBJECT_LABEL]), ("hand", [HAND_LABEL]), ("object", [OBJECT_LABEL])):
        mesh = labeled_mesh(grid, labels, tag=tag)
        count = occupied_count(grid, labels)
        if sanitize:
            mesh = remove_small_components(mesh, count)
        out[tag] = mesh
        stats[tag] = {"voxels": count, "vertices": len(mesh.vertices), "triangles": len(mesh.triangles)}
    out["stats"] = stats
    return out


def reconstruct_scene(model, ds, cond: Conditioning, margin: float = RECON_MARGIN, voxel_size: float = RECON_VOXEL,
                      sanitize: bool = True) -> dict:
    lo, hi = recon_box(ds, margin, cond.bounds)
    grid = extract_grid(model.head, cond, lo, hi, voxel_size)
    return meshes_from_grid(grid, sanitize)
