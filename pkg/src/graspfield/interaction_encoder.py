"""Sparse 3D CNN over the input feature volume and trilinear feature queries.

Convolutions use a rulebook: for every output site and each of the 27 taps
we look up the input row at ``site * stride + offset`` (or a zero row when
that voxel is empty) and apply all taps as one matrix product. Stride-1
layers keep the input sites (submanifold); stride-2 layers emit every
coarse site whose 3x3x3 window touches an active input, which is exactly
where a dense ``conv3d(stride=2, padding=1)`` would see nonzero input.
"""

from __future__ import annotations

import itertools
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import DimMismatch, EmptyVolume
from .feature_volume import Bounds, SparseFeatureVolume

OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)  # tap order


class SiteIndex:
    """Coordinate -> row lookup over a set of voxel sites."""

    def __init__(self, coords: np.ndarray, dims):
        self.dims = np.asarray(dims, dtype=np.int64)
        keys = self._key(np.asarray(coords, dtype=np.int64))
        self.order = np.argsort(keys, kind="stable")
        self.sorted = keys[self.order]

    def _key(self, c):
        return (c[..., 0] * self.dims[1] + c[..., 1]) * self.dims[2] + c[..., 2]

    def lookup(self, coords: np.ndarray) -> np.ndarray:
        """Row of each coordinate, or -1 when absent or outside the grid."""
        coords = np.asarray(coords, dtype=np.int64)
        inside = np.all((coords >= 0) & (coords < self.dims), axis=-1)
        keys = np.where(inside, self._key(np.where(inside[..., None], coords, 0)), -1)
        if len(self.sorted) == 0:
            return np.full(keys.shape, -1, dtype=np.int64)
        pos = np.clip(np.searchsorted(self.sorted, keys), 0, len(self.sorted) - 1)
        hit = inside & (self.sorted[pos] == keys)
        return np.where(hit, self.order[pos], -1)


@dataclass
class SparseTensor:
    coords: np.ndarray  # (N, 3) int64
    features: torch.Tensor  # (N, C)
    dims: tuple

    def __len__(self) -> int:
        return len(self.coords)

    def index(self) -> SiteIndex:
        return SiteIndex(self.coords, self.dims)


def downsampled_sites(coords: np.ndarray, dims) -> tuple:
    """Coarse sites whose stride-2 window covers an input site, and the coarse dims."""
    out_dims = tuple(int(-(-d // 2)) for d in dims)
    if len(coords) == 0:
        return np.zeros((0, 3), dtype=np.int64), out_dims
    # q covers p when 2q - 1 <= p <= 2q + 1, i.e. q in {floor(p/2), floor((p+1)/2)}
    cands = np.concatenate([np.floor_divide(coords + np.asarray(o), 2) for o in itertools.product((0, 1), repeat=3)])
    cands = cands[np.all(cands < np.asarray(out_dims), axis=1)]
    d = np.asarray(out_dims, dtype=np.int64)
    keys = np.unique((cands[:, 0] * d[1] + cands[:, 1]) * d[2] + cands[:, 2])
    return np.stack([keys // (d[1] * d[2]), (keys // d[2]) % d[1], keys % d[2]], axis=1), out_dims


def rulebook(in_index: SiteIndex, out_coords: np.ndarray, stride: int) -> np.ndarray:
    """(N_out, 27) input rows feeding each output tap, -1 where the voxel is empty."""
    base = out_coords[:, None, :] * stride + OFFSETS[None]
    return in_index.lookup(base)


class SparseConv3d(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        bound = 1.0 / np.sqrt(27 * c_in)
        self.weight = nn.Parameter(torch.empty(27, c_in, c_out).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.zeros(c_out))

    def forward(self, x: SparseTensor) -> SparseTensor:
        return sparse_conv(self, x)


@dataclass
class LayerPlan:
    """Output sites of one layer and its rulebook (empty voxels point at a zero row)."""

    out_coords: np.ndarray
    out_dims: tuple
    rows: torch.Tensor


def plan_layer(coords: np.ndarray, dims, stride: int) -> LayerPlan:
    if stride == 1:
        out_coords, out_dims = coords, tuple(dims)
    else:
        out_coords, out_dims = downsampled_sites(coords, dims)
    rows = rulebook(SiteIndex(coords, dims), out_coords, stride) if len(out_coords) else np.zeros((0, 27), np.int64)
    return LayerPlan(out_coords, out_dims, torch.as_tensor(np.where(rows < 0, len(coords), rows)))


def sparse_conv(layer: SparseConv3d, x: SparseTensor, plan: LayerPlan | None = None) -> SparseTensor:
    if x.features.shape[-1] != layer.c_in:
        raise DimMismatch(f"layer expects {layer.c_in} input channels, volume has {x.features.shape[-1]}")
    if plan is None:
        plan = plan_layer(x.coords, x.dims, layer.stride)
    out_coords, out_dims, rows = plan.out_coords, plan.out_dims, plan.rows
    if len(out_coords) == 0:
        return SparseTensor(out_coords, x.features.new_zeros((0, layer.c_out)), out_dims)
    padded = torch.cat([x.features, x.features.new_zeros((1, layer.c_in))])
    gathered = padded[rows].reshape(len(out_coords), 27 * layer.c_in)
    out = gathered @ layer.weight.reshape(27 * layer.c_in, layer.c_out) + layer.bias
    return SparseTensor(out_coords, out, out_dims)


def dense_conv_reference(layer: SparseConv3d, x: SparseTensor) -> torch.Tensor:
    """Dense ``conv3d`` of the zero-filled grid; (C_out, *out_dims)."""
    grid = x.features.new_zeros((layer.c_in, *x.dims))
    if len(x):
        c = torch.as_tensor(x.coords)
        grid[:, c[:, 0], c[:, 1], c[:, 2]] = x.features.T
    # weight[k] for offset (dx, dy, dz) is the cross-correlation tap [dx+1, dy+1, dz+1]
    w = layer.weight.reshape(3, 3, 3, layer.c_in, layer.c_out).permute(4, 3, 0, 1, 2)
    return F.conv3d(grid[None], w, layer.bias, stride=layer.stride, padding=1)[0]


@dataclass
class ScaleVolume:
    coords: np.ndarray
    features: torch.Tensor
    dims: tuple
    step: int  # input voxels per voxel at this scale
    index: SiteIndex


@dataclass
class MultiScaleVolumes:
    bounds: Bounds
    frame: np.ndarray
    scales: list

    @property
    def channels(self) -> int:
        return sum(s.features.shape[-1] for s in self.scales)


class InteractionEncoder(nn.Module):
    """Three resolutions, two submanifold layers each, stride-2 steps between.

    The scale taps are the raw outputs of the last layer at each resolution;
    SiLU is applied to everything that feeds a further layer.
    """

    def __init__(self, c_in: int, widths=(32, 64, 64)):
        super().__init__()
        self.c_in = c_in
        self.widths = tuple(widths)
        layers = []
        prev = c_in
        for level, w in enumerate(widths):
            if level > 0:
                layers.append(SparseConv3d(prev, w, stride=2))
                prev = w
            layers += [SparseConv3d(prev, w), SparseConv3d(w, w)]
            prev = w
        self.layers = nn.ModuleList(layers)

    @property
    def out_channels(self) -> int:
        return sum(self.widths)

    def forward(self, volume: SparseFeatureVolume) -> MultiScaleVolumes:
        return encode(self, volume)


_PLAN_CACHE: OrderedDict = OrderedDict()


def network_plan(strides, coords: np.ndarray, dims) -> tuple:
    """Layer plans plus per-level site indexes for a given input site set (memoized)."""
    coords = np.ascontiguousarray(coords, dtype=np.int64)
    key = (tuple(strides), tuple(dims), coords.tobytes())
    if key in _PLAN_CACHE:
        _PLAN_CACHE.move_to_end(key)
        return _PLAN_CACHE[key]
    plans, c, d = [], coords, tuple(dims)
    for stride in strides:
        plan = plan_layer(c, d, stride)
        plans.append(plan)
        c, d = plan.out_coords, plan.out_dims
    indexes = {}
    for k, plan in enumerate(plans):
        indexes[k] = SiteIndex(plan.out_coords, plan.out_dims)
    _PLAN_CACHE[key] = (plans, indexes)
    while len(_PLAN_CACHE) > 8:
        _PLAN_CACHE.popitem(last=False)
    return plans, indexes


def encode(network: InteractionEncoder, volume: SparseFeatureVolume) -> MultiScaleVolumes:
    if len(volume) == 0:
        raise EmptyVolume("cannot encode an empty volume")
    feats = volume.features.to(network.layers[0].weight.dtype)
    if feats.shape[-1] != network.c_in:
        raise DimMismatch(f"network expects {network.c_in} input channels, volume has {feats.shape[-1]}")
    plans, indexes = network_plan([layer.stride for layer in network.layers], volume.coords, volume.bounds.dims)
    x = SparseTensor(volume.coords, feats, tuple(volume.bounds.dims))
    scales = []
    step = 1
    k = 0
    for level in range(len(network.widths)):
        if level > 0:
            x = sparse_conv(network.layers[k], x, plans[k])
            x = SparseTensor(x.coords, F.silu(x.features), x.dims)
            step *= 2
            k += 1
        x = sparse_conv(network.layers[k], x, plans[k])
        x = SparseTensor(x.coords, F.silu(x.features), x.dims)
        tap = sparse_conv(network.layers[k + 1], x, plans[k + 1])
        scales.append(ScaleVolume(tap.coords, tap.features, tap.dims, step, indexes[k + 1]))
        k += 2
        x = SparseTensor(tap.coords, F.silu(tap.features), tap.dims)
    return MultiScaleVolumes(volume.bounds, volume.frame, scales)


def query_interaction(msv: MultiScaleVolumes, x) -> torch.Tensor:
    """Trilinear lookup at world points (N, 3) in every scale, concatenated to (N, c).

    Absent corner voxels contribute zero; points outside the bounds get zeros.
    """
    pts = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    c = msv.bounds.center
    local = (pts - c) @ msv.frame.T + c
    inside = np.all((local >= msv.bounds.lo) & (local <= msv.bounds.hi), axis=1)
    g = (local - msv.bounds.lo) / msv.bounds.voxel_size - 0.5
    corners = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.int64)
    outs = []
    for s in msv.scales:
        q = g / s.step
        q0 = np.floor(q).astype(np.int64)
        frac = q - q0
        rows = s.index.lookup(q0[:, None, :] + corners[None])  # (N, 8)
        w = np.prod(np.where(corners[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :]), axis=-1)
        w = np.where((rows >= 0) & inside[:, None], w, 0.0)
        rows = torch.as_tensor(np.where(rows < 0, len(s.coords), rows))
        padded = torch.cat([s.features, s.features.new_zeros((1, s.features.shape[-1]))])
        wt = torch.as_tensor(w, dtype=s.features.dtype)
        outs.append(torch.einsum("nk,nkc->nc", wt, padded[rows]))
    return torch.cat(outs, dim=-1).reshape(np.shape(x)[:-1] + (msv.channels,))
