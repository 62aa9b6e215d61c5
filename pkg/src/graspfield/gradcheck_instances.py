"""Small float64 instances of every trainable component for gradient checks."""

from __future__ import annotations

import numpy as np
import torch

from .feature_volume import Bounds, CodeBook, SparseFeatureVolume, build_volume, feature_dim, volume_sources
from .geometry import Camera
from .image_encoder import ImageEncoder, encode_image
from .interaction_encoder import InteractionEncoder, encode, query_interaction
from .semantic_field import ABLATIONS, Conditioning, FieldHead, eval_field, render_rays


def _scalar_readout(tensors, weights):
    return sum((t * w).sum() for t, w in zip(tensors, weights))


def _named(module, prefix=""):
    return {prefix + n: p for n, p in module.named_parameters()}


def build(component: str, seed: int):
    """Returns ``(params, readout, max_entries)``."""
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 7])
    dt = torch.float64
    if component == "image_encoder":
        enc = ImageEncoder(4, (3, 4, 4)).to(dt)
        image = torch.as_tensor(rng.random((8, 8, 3)))
        w = torch.as_tensor(rng.standard_normal((4, 2, 2)))
        return _named(enc), lambda: (encode_image(image, enc).values * w).sum(), None

    if component == "interaction_encoder":
        net = InteractionEncoder(3, (2, 3, 3)).to(dt)
        for p in net.parameters():  # nonzero biases so every path carries gradient
            with torch.no_grad():
                p.add_(0.1 * torch.randn_like(p))
        dims = (6, 6, 6)
        sites = np.array(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")).reshape(3, -1).T
        sites = sites[rng.random(len(sites)) < 0.3]
        bounds = Bounds(np.zeros(3), np.full(3, 0.03), 0.005, dims)
        feats = torch.as_tensor(rng.standard_normal((len(sites), 3)))
        vol = _raw_volume(bounds, sites, feats)
        queries = rng.uniform(0.0, 0.03, (20, 3))

        def readout():
            msv = encode(net, vol)
            taps = [s.features for s in msv.scales]
            weights = [torch.as_tensor(np.random.default_rng([seed, k]).standard_normal(tuple(t.shape)))
                       for k, t in enumerate(taps)]
            q = query_interaction(msv, queries)
            return _scalar_readout(taps, weights) + (q * torch.as_tensor(np.cos(np.arange(q.numel())).reshape(q.shape))).sum()

        return _named(net), readout, 64

    if component == "field_head":
        head = FieldHead(ABLATIONS["M5"], image_channels=4, volume_channels=6, hidden=8, depth=2,
                         density_scale=1.0, density_shift=0.0).to(dt)
        n = 6
        x = torch.as_tensor(rng.uniform(-1, 1, (n, 3)))
        d = rng.standard_normal((n, 3))
        d = torch.as_tensor(d / np.linalg.norm(d, axis=1, keepdims=True))
        f2d = torch.as_tensor(rng.standard_normal((n, 4)))
        fx = torch.as_tensor(rng.standard_normal((n, 6)))
        ws = [torch.as_tensor(rng.standard_normal(s)) for s in ((n,), (n, 3), (n, 3))]

        def readout():
            out = eval_field(head, x, d, f2d, fx, head.mask)
            return _scalar_readout([out.sigma, out.color, out.label_logits], ws)

        return _named(head), readout, None

    if component == "end_to_end":
        return _end_to_end(seed, rng)
    raise ValueError(component)


def _raw_volume(bounds, sites, feats) -> SparseFeatureVolume:
    """Volume whose ``features`` are exactly ``feats`` (no encoding added)."""

    class _Plain(SparseFeatureVolume):
        @property
        def features(self):
            return self.image_features

    n = len(sites)
    return _Plain(bounds, sites, np.ones(n, dtype=np.int8), (sites + 0.5) * bounds.voxel_size, feats,
                  feats[:, :0], np.arange(n))


def _end_to_end(seed: int, rng):
    """One 4-sample ray through encoder, volume, sparse CNN, head and loss."""
    from .training import loss

    dt = torch.float64
    enc = ImageEncoder(4, (3, 4, 4)).to(dt)
    net = InteractionEncoder(feature_dim(4, 4), (3, 4, 4)).to(dt)
    head = FieldHead(ABLATIONS["M5"], image_channels=4, volume_channels=11, hidden=8, depth=2,
                     density_scale=20.0, density_shift=0.0).to(dt)
    for p in list(net.parameters()) + list(head.parameters()):
        with torch.no_grad():
            p.add_(0.05 * torch.randn_like(p))
    codes = CodeBook(6, seed, dim=4)
    cam = Camera.look_at((0.0, -0.3, 0.02), (0.0, 0.0, 0.0), (0, 0, 1), 16.0, 8, 8)
    image = torch.as_tensor(rng.random((8, 8, 3)))
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[3:6, 3:6] = 2
    centroids = rng.uniform(-0.012, 0.012, (6, 3))
    lo = np.full(3, -0.02)
    bounds = Bounds(lo, lo + 8 * 0.005, 0.005, (8, 8, 8))
    sources = volume_sources(centroids, mask, cam, bounds)
    origin, direction = cam.center, -cam.center / np.linalg.norm(cam.center)
    gt_color = rng.random((1, 3))
    params = {**_named(enc, "encoder."), **_named(net, "cnn."), **_named(head, "head.")}

    def readout():
        fmap = encode_image(image, enc)
        vol = build_volume(sources, fmap, codes)
        cond = Conditioning(cam, bounds, torch.tensor([0.1, 0.2, 0.3], dtype=dt), fmap, encode(net, vol))
        out = render_rays(head, cond, origin[None], direction[None], n_samples=4)
        return loss(out, gt_color, [2])[0]

    return params, readout, 16
