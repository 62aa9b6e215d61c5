import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy.ndimage import map_coordinates

from graspfield.errors import DimMismatch
from graspfield.feature_volume import Bounds
from graspfield.gradcheck_instances import _raw_volume
from graspfield.interaction_encoder import (InteractionEncoder, SiteIndex, SparseConv3d, SparseTensor,
                                            dense_conv_reference, downsampled_sites, encode, query_interaction,
                                            sparse_conv)


def random_sparse(rng, dims, density, c):
    grid = np.array(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")).reshape(3, -1).T
    coords = grid[rng.random(len(grid)) < density]
    return SparseTensor(coords, torch.as_tensor(rng.standard_normal((len(coords), c))), tuple(dims))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2]), st.floats(0.05, 1.0))
def test_sparse_conv_equals_dense_on_active_sites(seed, stride, density):
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in rng.integers(2, 7, 3))
    x = random_sparse(rng, dims, density, 3)
    torch.manual_seed(seed)
    layer = SparseConv3d(3, 4, stride).double()
    with torch.no_grad():
        layer.bias.normal_()
    out = sparse_conv(layer, x)
    dense = dense_conv_reference(layer, x)
    assert tuple(dense.shape[1:]) == out.dims
    if len(out):
        c = out.coords
        ref = dense[:, c[:, 0], c[:, 1], c[:, 2]].T
        assert torch.allclose(out.features, ref, atol=1e-10)


def test_downsampled_sites_are_exactly_the_covering_sites(rng):
    dims = (7, 5, 6)
    x = random_sparse(rng, dims, 0.1, 1)
    got, out_dims = downsampled_sites(x.coords, dims)
    assert out_dims == (4, 3, 3)
    ref = set()
    for q in np.ndindex(*out_dims):
        q = np.array(q)
        if any(np.all((p >= 2 * q - 1) & (p <= 2 * q + 1)) for p in x.coords):
            ref.add(tuple(q))
    assert {tuple(c) for c in got} == ref


def test_site_index_lookup(rng):
    x = random_sparse(rng, (4, 4, 4), 0.4, 1)
    idx = SiteIndex(x.coords, x.dims)
    assert np.array_equal(idx.lookup(x.coords), np.arange(len(x)))
    assert idx.lookup(np.array([[-1, 0, 0], [4, 0, 0]])).tolist() == [-1, -1]


def test_channel_mismatch():
    layer = SparseConv3d(3, 2)
    x = SparseTensor(np.zeros((1, 3), np.int64), torch.zeros(1, 5), (2, 2, 2))
    with pytest.raises(DimMismatch):
        sparse_conv(layer, x)


def _encoded(seed=0):
    rng = np.random.default_rng(seed)
    dims = (6, 5, 7)
    x = random_sparse(rng, dims, 0.3, 3)
    bounds = Bounds(np.zeros(3), np.asarray(dims) * 0.01, 0.01, dims)
    net = InteractionEncoder(3, (2, 3, 4)).double()
    with torch.no_grad():
        for p in net.parameters():
            p.normal_()
    return net, bounds, encode(net, _raw_volume(bounds, x.coords, x.features))


def test_multiscale_structure():
    net, bounds, msv = _encoded()
    assert [s.step for s in msv.scales] == [1, 2, 4]
    assert [s.features.shape[1] for s in msv.scales] == [2, 3, 4]
    assert msv.channels == net.out_channels == 9
    assert msv.scales[1].dims == (3, 3, 4) and msv.scales[2].dims == (2, 2, 2)


def test_query_matches_trilinear_oracle(rng):
    _, bounds, msv = _encoded(1)
    pts = rng.uniform(-0.005, bounds.hi + 0.005, (200, 3))
    got = query_interaction(msv, pts).detach().numpy()
    col = 0
    for s in msv.scales:
        grid = np.zeros((s.features.shape[1],) + tuple(s.dims))
        grid[:, s.coords[:, 0], s.coords[:, 1], s.coords[:, 2]] = s.features.detach().numpy().T
        g = ((pts - bounds.lo) / bounds.voxel_size - 0.5) / s.step
        inside = np.all((pts >= bounds.lo) & (pts <= bounds.hi), axis=1)
        for ch in range(grid.shape[0]):
            ref = map_coordinates(grid[ch], g.T, order=1, mode="grid-constant", cval=0.0)
            assert np.allclose(got[:, col + ch], np.where(inside, ref, 0.0), atol=1e-10)
        col += grid.shape[0]


def test_query_at_voxel_center_returns_voxel_feature():
    _, bounds, msv = _encoded(2)
    s = msv.scales[0]
    center = bounds.lo + (s.coords[:1] + 0.5) * bounds.voxel_size
    got = query_interaction(msv, center)[0, :s.features.shape[1]]
    assert torch.allclose(got, s.features[0])
