import numpy as np
import pytest
import torch

from graspfield.errors import EmptyVolume
from graspfield.feature_volume import (COORD_PE, HAND, OBJECT, Bounds, CodeBook, build_volume, compute_bounds,
                                       feature_dim, perturb_object_entries, rotate_volume, volume_sources)
from graspfield.geometry import encode_position
from graspfield.image_encoder import FeatureMap

from oracles import partition_oracle, random_partition_case


def _fmap(c=4, seed=0):
    vals = torch.as_tensor(np.random.default_rng(seed).standard_normal((c, 3, 3)))
    return FeatureMap(vals, 4, 12, 12)


def _volume(seed):
    bounds, cents, mask, cam = random_partition_case(seed)
    src = volume_sources(cents, mask, cam, bounds)
    return build_volume(src, _fmap(), CodeBook(len(cents), 0, dim=5)), (bounds, cents, mask, cam)


@pytest.mark.parametrize("seed", range(60))
def test_partition_matches_voxel_loop(seed):
    bounds, cents, mask, cam = random_partition_case(seed)
    ref = partition_oracle(bounds, cents, mask, cam)
    try:
        vol = build_volume(volume_sources(cents, mask, cam, bounds), _fmap(), CodeBook(len(cents), 0, dim=5))
    except EmptyVolume:
        assert not ref
        return
    got = {tuple(c): (int(k), int(s)) for c, k, s in zip(vol.coords, vol.kinds, vol.source)}
    assert set(got) == set(ref)
    for key, (kind, source) in ref.items():
        assert got[key][0] == kind
        if kind == HAND:
            assert got[key][1] == source


def test_entry_contents():
    vol, (bounds, cents, mask, cam) = _volume(5)
    codes = CodeBook(len(cents), 0, dim=5)
    feats = vol.features.numpy()
    assert feats.shape == (len(vol), feature_dim(4, 5))
    pe = encode_position(COORD_PE, (vol.points - bounds.center) / bounds.half_extent)
    assert np.allclose(feats[:, 4:4 + pe.shape[1]], pe)
    for row, (kind, src) in enumerate(zip(vol.kinds, vol.source)):
        code = codes.face_codes(src) if kind == HAND else codes.object_code
        assert np.array_equal(feats[row, -5:], code)


def test_hand_only_volume_has_no_object_entries():
    bounds, cents, mask, cam = random_partition_case(3)
    try:
        vol = build_volume(volume_sources(cents, mask, cam, bounds, include_object=False), _fmap(), CodeBook(len(cents)))
    except EmptyVolume:
        return
    assert np.all(vol.kinds == HAND)


def test_empty_volume_raises():
    bounds = Bounds(np.zeros(3), np.full(3, 0.02), 0.01, (2, 2, 2))
    from graspfield.geometry import Camera

    cam = Camera.look_at((0.01, -0.3, 0.01), (0.01, 0.01, 0.01), (0, 0, 1), 10.0, 8, 8)
    with pytest.raises(EmptyVolume):
        build_volume(volume_sources(np.full((3, 3), 5.0), np.zeros((8, 8)), cam, bounds), _fmap(), CodeBook(3))


def test_codebook_is_fixed_and_read_only():
    a, b = CodeBook(10, 4), CodeBook(10, 4)
    assert np.array_equal(a.face_codes(), b.face_codes())
    assert not np.array_equal(a.face_codes(), CodeBook(10, 5).face_codes())
    with pytest.raises(ValueError):
        a.face_codes()[0, 0] = 1.0
    with pytest.raises(ValueError):
        a.object_code[0] = 1.0


def test_compute_bounds_contains_centroids(rng):
    pts = rng.uniform(-0.1, 0.1, (50, 3))
    b = compute_bounds(pts, 0.02, 0.005)
    assert np.all(pts >= b.lo) and np.all(pts <= b.hi)
    assert np.allclose(b.hi - b.lo, np.asarray(b.dims) * 0.005)


def test_perturbation_leaves_hand_entries():
    vol, _ = _volume(11)
    moved = perturb_object_entries(vol, 0.005, seed=1)
    hand = vol.kinds == HAND
    got = {int(s): tuple(c) for s, c, k in zip(moved.source, moved.coords, moved.kinds) if k == HAND}
    for s, c in zip(vol.source[hand], vol.coords[hand]):
        assert got[int(s)] == tuple(c)
    assert perturb_object_entries(vol, 0.0, seed=1) is vol


def test_rotation_by_zero_is_identity_and_frame_is_recorded():
    vol, _ = _volume(7)
    same = rotate_volume(vol, np.zeros(3))
    assert np.array_equal(same.coords, vol.coords)
    turned = rotate_volume(vol, [0.1, -0.2, 0.3])
    assert np.allclose(turned.frame @ turned.frame.T, np.eye(3))
    # a world point maps to where its entry moved
    pts_world = vol.points[:1]
    assert np.allclose(turned.to_volume_frame(pts_world),
                       (pts_world - vol.bounds.center) @ turned.frame.T + vol.bounds.center)
