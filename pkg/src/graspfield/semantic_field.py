"""Field head (density, color, label logits) and the semantic volume renderer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import MaskMismatch
from .feature_volume import Bounds
from .geometry import (Camera, PositionalEncoding, encode_position, pixel_directions, pixel_grid, project_points,
                       ray_box_intersection, sample_depths)
from .image_encoder import FeatureMap, sample_feature
from .interaction_encoder import MultiScaleVolumes, query_interaction

N_LABELS = 3
DEPTH_EPS = 1e-6
POINT_PE = PositionalEncoding(6, True)
DIR_PE = PositionalEncoding(4, True)


@dataclass(frozen=True)
class AblationMask:
    """Which conditioning blocks the field sees.

    ``pixel``: the pixel-aligned feature f_2D. ``volume``: the interaction
    feature from the 3D CNN. ``object_entries``: whether the input volume
    carries object-mask entries besides the hand entries.
    """

    name: str
    pixel: bool
    volume: bool
    object_entries: bool


ABLATIONS = {
    "M2": AblationMask("M2", pixel=True, volume=False, object_entries=False),
    "M3": AblationMask("M3", pixel=False, volume=True, object_entries=True),
    "M4": AblationMask("M4", pixel=True, volume=True, object_entries=False),
    "M5": AblationMask("M5", pixel=True, volume=True, object_entries=True),
}


def ablation(name) -> AblationMask:
    if isinstance(name, AblationMask):
        return name
    try:
        return ABLATIONS[str(name).upper()]
    except KeyError:
        raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}") from None


@dataclass
class SemanticFieldSample:
    sigma: torch.Tensor  # (N,)
    color: torch.Tensor  # (N, 3)
    label_logits: torch.Tensor  # (N, 3)


class FieldHead(nn.Module):
    """MLP trunk on position and conditioning features; color branch adds the view direction.

    Density and logits come from the trunk only, so they do not depend on
    the direction. ``sigma = density_scale * softplus(raw - density_shift)``.
    """

    def __init__(self, mask: AblationMask, image_channels: int = 32, volume_channels: int = 160,
                 hidden: int = 128, depth: int = 3, density_scale: float = 500.0, density_shift: float = 6.0):
        super().__init__()
        self.mask = mask
        self.image_channels = image_channels if mask.pixel else 0
        self.volume_channels = volume_channels if mask.volume else 0
        self.density_scale = density_scale
        self.density_shift = density_shift
        d_in = POINT_PE.output_dim(3) + self.image_channels + self.volume_channels
        trunk = []
        for k in range(depth):
            trunk.append(nn.Linear(d_in if k == 0 else hidden, hidden))
        self.trunk = nn.ModuleList(trunk)
        self.sigma_out = nn.Linear(hidden, 1)
        self.label_out = nn.Linear(hidden, N_LABELS)
        self.bottleneck = nn.Linear(hidden, hidden)
        self.color_hidden = nn.Linear(hidden + DIR_PE.output_dim(3), hidden // 2)
        self.color_out = nn.Linear(hidden // 2, 3)

    def forward(self, x, d, f2d=None, fx=None) -> SemanticFieldSample:
        return eval_field(self, x, d, f2d, fx, self.mask)


def eval_field(head: FieldHead, x, d, f2d, F_x, ablation_mask: AblationMask) -> SemanticFieldSample:
    """Evaluate the head at normalized positions ``x`` (N, 3) and unit directions ``d``.

    ``f2d`` and ``F_x`` must be given exactly when the mask enables them.
    """
    if ablation_mask != head.mask:
        raise MaskMismatch(f"head built for {head.mask.name}, called with {ablation_mask.name}")
    for name, value, wanted in (("f_2D", f2d, ablation_mask.pixel), ("interaction feature", F_x, ablation_mask.volume)):
        if wanted and value is None:
            raise MaskMismatch(f"{ablation_mask.name} needs the {name} block")
        if not wanted and value is not None:
            raise MaskMismatch(f"{ablation_mask.name} masks out the {name} block")
    dtype = head.sigma_out.weight.dtype
    x = torch.as_tensor(x, dtype=dtype)
    d = torch.as_tensor(d, dtype=dtype)
    parts = [encode_position(POINT_PE, x)]
    if f2d is not None:
        parts.append(torch.as_tensor(f2d, dtype=dtype))
    if F_x is not None:
        parts.append(torch.as_tensor(F_x, dtype=dtype))
    h = torch.cat(parts, dim=-1)
    for layer in head.trunk:
        h = F.silu(layer(h))
    sigma = head.density_scale * F.softplus(head.sigma_out(h)[..., 0] - head.density_shift)
    logits = head.label_out(h)
    c = torch.cat([head.bottleneck(h), encode_position(DIR_PE, d)], dim=-1)
    color = torch.sigmoid(head.color_out(F.silu(head.color_hidden(c))))
    return SemanticFieldSample(sigma, color, logits)


@dataclass
class Conditioning:
    """Everything the field needs from the input view."""

    camera: Camera
    bounds: Bounds
    background: torch.Tensor  # (3,)
    fmap: FeatureMap | None = None
    volumes: MultiScaleVolumes | None = None

    def normalize(self, points: np.ndarray) -> np.ndarray:
        return (points - self.bounds.center) / self.bounds.half_extent


def pixel_features(fmap: FeatureMap, camera: Camera, points: np.ndarray) -> torch.Tensor:
    """f_2D at world points; zero for points behind the camera or off the image."""
    uv, z = project_points(camera, points)
    uv = np.where((z > 1e-9)[:, None], uv, -1e9)
    return sample_feature(fmap, torch.as_tensor(uv, dtype=fmap.values.dtype))


def field_at(head: FieldHead, cond: Conditioning, points: np.ndarray, dirs: np.ndarray) -> SemanticFieldSample:
    f2d = pixel_features(cond.fmap, cond.camera, points) if head.mask.pixel else None
    fx = query_interaction(cond.volumes, points) if head.mask.volume else None
    return eval_field(head, torch.as_tensor(cond.normalize(points)), torch.as_tensor(np.ascontiguousarray(dirs)), f2d, fx, head.mask)


@dataclass
class RayRender:
    color: torch.Tensor  # (R, 3)
    label_probs: torch.Tensor  # (R, 3)
    depth: torch.Tensor  # (R,)
    opacity: torch.Tensor  # (R,)
    weights: torch.Tensor | None = None  # (R, S)


def composite(sigma, color, logits, t, delta, background) -> RayRender:
    """Emission-absorption quadrature over samples (R, S).

    Transmittance is accumulated in log space: ``T_k = exp(-sum_{j<k} sigma_j delta_j)``.
    """
    tau = sigma * delta
    alpha = -torch.expm1(-tau)
    log_t = torch.cumsum(tau, dim=-1) - tau
    w = torch.exp(-log_t) * alpha
    opacity = w.sum(-1)
    rest = 1.0 - opacity
    rgb = (w[..., None] * color).sum(-2) + rest[..., None] * background
    probs = (w[..., None] * torch.softmax(logits, dim=-1)).sum(-2)
    probs = torch.cat([probs[..., :1] + rest[..., None], probs[..., 1:]], dim=-1)
    depth = (w * t).sum(-1) / torch.clamp(opacity, min=DEPTH_EPS)
    return RayRender(rgb, probs, depth, opacity, w)


def importance_depths(t, delta, weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """Extra depths drawn from the piecewise-constant pdf of ``weights`` per bin."""
    w = np.asarray(weights, dtype=np.float64) + 1e-5
    pdf = w / w.sum(-1, keepdims=True)
    cdf = np.concatenate([np.zeros((len(w), 1)), np.cumsum(pdf, -1)], -1)
    u = rng.random((len(w), n))
    idx = np.clip(np.array([np.searchsorted(c, uu, side="right") - 1 for c, uu in zip(cdf, u)]), 0, w.shape[1] - 1)
    lo_edge = t - delta / 2
    frac = (u - np.take_along_axis(cdf, idx, -1)) / np.take_along_axis(pdf, idx, -1)
    return np.take_along_axis(lo_edge, idx, -1) + np.clip(frac, 0, 1) * np.take_along_axis(delta, idx, -1)


def render_rays(head: FieldHead, cond: Conditioning, origins, dirs, n_samples: int = 64,
                stratified: bool = False, rng: np.random.Generator | None = None,
                n_importance: int = 0, keep_weights: bool = False) -> RayRender:
    """Render rays clipped to the volume bounds; rays missing the box show background."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    dtype = head.sigma_out.weight.dtype
    bg = torch.as_tensor(cond.background, dtype=dtype)
    n = len(dirs)
    near, far, hit = ray_box_intersection(origins, dirs, cond.bounds.lo, cond.bounds.hi)
    rgb = bg.expand(n, 3).clone()
    probs = torch.zeros((n, N_LABELS), dtype=dtype)
    probs[:, 0] = 1.0
    depth = torch.zeros(n, dtype=dtype)
    opacity = torch.zeros(n, dtype=dtype)
    weights = torch.zeros((n, n_samples + n_importance), dtype=dtype) if keep_weights else None
    idx = np.flatnonzero(hit)
    if len(idx) == 0:
        return RayRender(rgb, probs, depth, opacity, weights)
    t, delta = sample_depths(near[idx], far[idx], n_samples, stratified, rng)
    if n_importance > 0:
        with torch.no_grad():
            coarse = _render_depths(head, cond, origins[idx], dirs[idx], t, delta, bg)
        extra = importance_depths(t, delta, coarse.weights.detach().cpu().numpy(), n_importance, rng or np.random.default_rng(0))
        t = np.sort(np.concatenate([t, extra], -1), -1)
        delta = np.concatenate([np.diff(t, axis=-1), (far[idx] - t[:, -1])[:, None]], -1)
    out = _render_depths(head, cond, origins[idx], dirs[idx], t, delta, bg)
    sel = torch.as_tensor(idx)
    rgb = rgb.index_put((sel,), out.color)
    probs = probs.index_put((sel,), out.label_probs)
    depth = depth.index_put((sel,), out.depth)
    opacity = opacity.index_put((sel,), out.opacity)
    if keep_weights:
        weights = weights.index_put((sel,), out.weights)
    return RayRender(rgb, probs, depth, opacity, weights)


def _render_depths(head, cond, origins, dirs, t, delta, bg) -> RayRender:
    r, s = t.shape
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    d = np.broadcast_to(dirs[:, None, :], pts.shape)
    out = field_at(head, cond, pts.reshape(-1, 3), d.reshape(-1, 3))
    dtype = head.sigma_out.weight.dtype
    return composite(out.sigma.reshape(r, s), out.color.reshape(r, s, 3), out.label_logits.reshape(r, s, N_LABELS),
                     torch.as_tensor(t, dtype=dtype), torch.as_tensor(delta, dtype=dtype), bg)


def render_ray(head: FieldHead, cond: Conditioning, ray, n_samples: int = 64, seed: int | None = None) -> RayRender:
    """Single-ray render; ``seed`` switches on stratified sampling."""
    rng = None if seed is None else np.random.default_rng(seed)
    out = render_rays(head, cond, ray.origin[None], ray.direction[None], n_samples, seed is not None, rng)
    return RayRender(out.color[0], out.label_probs[0], out.depth[0], out.opacity[0])


def render_view(head: FieldHead, cond: Conditioning, camera_out: Camera, n_samples: int = 64,
                chunk: int = 1024, n_importance: int = 0):
    """Render a full image. Returns numpy ``(rgb, label_probs, depth, opacity)``."""
    h, w = camera_out.height, camera_out.width
    dirs = pixel_directions(camera_out, pixel_grid(w, h).reshape(-1, 2))
    origins = np.broadcast_to(camera_out.center, dirs.shape)
    parts = []
    rng = np.random.default_rng(0)
    with torch.no_grad():
        for s in range(0, len(dirs), chunk):
            out = render_rays(head, cond, origins[s:s + chunk], dirs[s:s + chunk], n_samples,
                              n_importance=n_importance, rng=rng)
            parts.append([out.color, out.label_probs, out.depth, out.opacity])
    rgb, probs, depth, opac = (torch.cat(p).cpu().numpy() for p in zip(*parts))
    return rgb.reshape(h, w, 3), probs.reshape(h, w, N_LABELS), depth.reshape(h, w), opac.reshape(h, w)
