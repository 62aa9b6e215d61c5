"""The trainable model and the per-view conditioning pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .config import TrainConfig, int_list
from .feature_volume import (CodeBook, Bounds, VolumeSources, build_volume, compute_bounds, feature_dim,
                             perturb_sources, random_angles, rotate_sources, rotation_matrix, volume_sources)
from .image_encoder import ImageEncoder, encode_image
from .interaction_encoder import InteractionEncoder, encode
from .semantic_field import Conditioning, FieldHead, ablation
from .synthetic.dataset import SceneDataset
from .synthetic.hand import generate_hand


class GraspField(nn.Module):
    """Image encoder, sparse CNN (unless the mask skips it) and field head."""

    def __init__(self, config: TrainConfig, n_faces: int):
        super().__init__()
        self.config = config
        self.mask = ablation(config.ablation)
        c = config.image_channels
        self.encoder = ImageEncoder(c, int_list(config.encoder_widths, 3, "encoder_widths"))
        widths = int_list(config.cnn_widths, 3, "cnn_widths")
        self.cnn = InteractionEncoder(feature_dim(c), widths) if self.mask.volume else None
        self.head = FieldHead(self.mask, c, sum(widths), config.hidden,
                              density_scale=config.density_scale, density_shift=config.density_shift)
        self.codes = CodeBook(n_faces, config.code_seed)

    @classmethod
    def create(cls, config: TrainConfig, n_faces: int | None = None, dtype=torch.float32) -> "GraspField":
        """Build with weights drawn from ``config.seed``."""
        if n_faces is None:
            n_faces = generate_hand(np.zeros(16)).n_faces
        torch.manual_seed(config.seed)
        return cls(config, n_faces).to(dtype)

    @property
    def dtype(self):
        return self.head.sigma_out.weight.dtype


def scene_bounds(ds: SceneDataset, config: TrainConfig) -> Bounds:
    return compute_bounds(ds.hand.centroids(), config.margin, config.voxel_size)


@dataclass
class SourceCache:
    """Weight-independent volume geometry per (scene, input view)."""

    entries: dict = field(default_factory=dict)

    def get(self, key, ds: SceneDataset, view: int, config: TrainConfig, include_object: bool) -> VolumeSources:
        if key not in self.entries:
            v = ds.views[view]
            self.entries[key] = volume_sources(ds.hand.centroids(), v.mask, v.camera, scene_bounds(ds, config),
                                               include_object)
        return self.entries[key]


def condition(model: GraspField, ds: SceneDataset, view: int, rng: np.random.Generator | None = None,
              cache: SourceCache | None = None, key=None) -> Conditioning:
    """Encode input view ``view`` of ``ds``; ``rng`` turns on the volume augmentations."""
    cfg = model.config
    v = ds.views[view]
    fmap = encode_image(torch.as_tensor(v.image, dtype=model.dtype), model.encoder)
    bounds = scene_bounds(ds, cfg)
    bg = torch.as_tensor(ds.background, dtype=model.dtype)
    volumes = None
    if model.mask.volume:
        if cache is not None:
            sources = cache.get(key if key is not None else view, ds, view, cfg, model.mask.object_entries)
        else:
            sources = volume_sources(ds.hand.centroids(), v.mask, v.camera, bounds, model.mask.object_entries)
        frame = None
        if rng is not None:
            sources = perturb_sources(sources, cfg.perturb_sigma, rng)
            if cfg.rotate_max > 0:
                frame = rotation_matrix(random_angles(rng, cfg.rotate_max))
                sources = rotate_sources(sources, frame)
        volume = build_volume(sources, fmap, model.codes, frame)
        volumes = encode(model.cnn, volume)
    return Conditioning(v.camera, bounds, bg, fmap if model.mask.pixel or model.mask.volume else None, volumes)
