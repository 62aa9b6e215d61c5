import numpy as np
import pytest
import torch

from graspfield.errors import EmptyMesh
from graspfield.feature_volume import Bounds
from graspfield.geometry import Camera
from graspfield.image_encoder import FeatureMap
from graspfield.mesh import mesh_stats
from graspfield.reconstruction import (DensityGrid, extract_grid, grid_dims, grid_from_function, labeled_mesh,
                                       marching_cubes, mesh_components, occupied_count, remove_small_components,
                                       split_semantic)
from graspfield.semantic_field import ABLATIONS, Conditioning, FieldHead

V = 0.002


def sphere_grid(radius=0.05, center=(0.0, 0.0, 0.0), sharp=True, label=1):
    lo = np.asarray(center) - radius - 4 * V

    def fn(p):
        inside = np.linalg.norm(p - center, axis=1) < radius
        if sharp:
            sigma = np.where(inside, 1e4, 0.0)
        else:
            occ = np.clip(0.5 + (radius - np.linalg.norm(p - center, axis=1)) / V, 1e-9, 1 - 1e-9)
            sigma = -np.log1p(-occ) / V
        return sigma, np.full(len(p), label)

    return grid_from_function(fn, lo, lo + 2 * radius + 8 * V, V)


def blob_grid(sizes, shape=(40, 40, 40)):
    """Cubic blobs with the given voxel counts, well apart along x."""
    sigma = np.zeros(shape)
    x = 1
    for n in sizes:
        side = round(n ** (1 / 3))
        assert side**3 == n
        sigma[x:x + side, 1:1 + side, 1:1 + side] = 1e4
        x += side + 2
    return DensityGrid(np.zeros(3), V, sigma, np.ones(shape, dtype=np.uint8))


def test_grid_dims_and_direct_evaluation():
    assert grid_dims((0, 0, 0), (0.01, 0.0101, 0.002)) == (5, 6, 1)
    grid = sphere_grid(0.02, sharp=False)
    c = grid.centers().reshape(-1, 3)
    occ = np.clip(0.5 + (0.02 - np.linalg.norm(c, axis=1)) / V, 1e-9, 1 - 1e-9)
    assert np.allclose(grid.sigma.reshape(-1), -np.log1p(-occ) / V)


def test_sphere_mesh_is_accurate_and_closed():
    for sharp in (True, False):
        mesh = marching_cubes(sphere_grid(0.05, sharp=sharp))
        err = np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.05)
        assert err.max() < V
        stats = mesh_stats(mesh)
        assert stats.euler == 2 and stats.boundary_edges == 0
        assert mesh.triangle_areas().min() > 0


def test_single_voxel_gives_small_closed_mesh():
    sigma = np.zeros((3, 3, 3))
    sigma[1, 1, 1] = 1e4
    mesh = marching_cubes(DensityGrid(np.zeros(3), V, sigma, np.ones((3, 3, 3), np.uint8)))
    assert mesh_stats(mesh).euler == 2
    center = np.full(3, 1.5 * V)
    assert np.all(np.abs(mesh.vertices - center) <= V + 1e-12)


def test_empty_grid_raises():
    with pytest.raises(EmptyMesh):
        marching_cubes(DensityGrid(np.zeros(3), V, np.zeros((4, 4, 4)), np.zeros((4, 4, 4), np.uint8)))


def test_iso_monotonicity():
    grid = sphere_grid(0.02, sharp=False)
    counts = [occupied_count(grid, iso=iso) for iso in (0.2, 0.4, 0.6, 0.8)]
    assert counts == sorted(counts, reverse=True)


def test_split_semantic_disjoint_and_symmetric():
    grid = blob_grid([125, 64])
    grid.labels[:8] = 2  # first blob object, second hand
    hand, obj = split_semantic(grid)
    assert not hand.is_empty and not obj.is_empty
    gap = np.min(np.linalg.norm(hand.vertices[:, None] - obj.vertices[None], axis=-1))
    assert gap >= 2 * V - V
    swapped = DensityGrid(grid.origin, V, grid.sigma, np.where(grid.labels == 1, 2, 1).astype(np.uint8))
    hand2, obj2 = split_semantic(swapped)
    assert np.allclose(hand2.vertices, obj.vertices) and np.allclose(obj2.vertices, hand.vertices)
    grid.labels[:] = 1
    assert split_semantic(grid)[1].is_empty


@pytest.mark.parametrize("sizes, kept", [([1000, 64], [1000]), ([1000], [1000]), ([729, 8], [729]),
                                         ([1000, 125], [1000, 125])])
def test_small_component_removal(sizes, kept):
    grid = blob_grid(sizes)
    total = occupied_count(grid)
    mesh = remove_small_components(marching_cubes(grid), total)
    assert len(np.unique(mesh_components(mesh))) == len(kept)
    assert mesh.vertices[:, 0].min() < 2 * V  # the largest blob sits first


def test_component_exactly_at_threshold_is_kept():
    grid = blob_grid([1000, 125])
    mesh = marching_cubes(grid)
    assert len(remove_small_components(mesh, 1250).triangles) == len(mesh.triangles)
    assert len(remove_small_components(mesh, 1251).triangles) < len(mesh.triangles)


def test_untrained_head_gives_near_empty_grid():
    head = FieldHead(ABLATIONS["M2"], image_channels=2, hidden=8, density_shift=30.0).double()
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
    cam = Camera.look_at((0.0, -0.3, 0.0), (0, 0, 0), (0, 0, 1), 20.0, 8, 8)
    bounds = Bounds(np.full(3, -0.01), np.full(3, 0.01), 0.005, (4, 4, 4))
    cond = Conditioning(cam, bounds, torch.zeros(3), FeatureMap(torch.zeros(2, 2, 2, dtype=torch.float64), 4, 8, 8))
    grid = extract_grid(head, cond, bounds.lo, bounds.hi, V)
    assert grid.dims == (10, 10, 10)
    assert occupied_count(grid) == 0
    assert labeled_mesh(grid, [1]).is_empty
