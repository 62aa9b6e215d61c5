"""Small convolutional encoder and pixel-aligned feature sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import ShapeMismatch

STRIDE = 4


@dataclass
class FeatureMap:
    """Encoder output. ``values`` has shape (C, H', W') and one cell per ``stride`` pixels."""

    values: torch.Tensor
    stride: int
    image_width: int
    image_height: int

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


class ImageEncoder(nn.Module):
    """Four 3x3 convolutions; the second and fourth halve the resolution.

    SiLU between layers, none after the last, so the output is an affine
    read-out that the downstream networks can scale freely.
    """

    def __init__(self, channels: int = 32, widths=(16, 32, 32)):
        super().__init__()
        self.channels = channels
        sizes = [3, *widths, channels]
        strides = (1, 2, 1, 2)
        self.convs = nn.ModuleList(
            nn.Conv2d(sizes[k], sizes[k + 1], 3, stride=strides[k], padding=1) for k in range(4)
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """``image`` (H, W, 3) in [0, 1] -> (C, ceil(H/4), ceil(W/4))."""
        x = (image.permute(2, 0, 1)[None] * 2.0 - 1.0).to(self.convs[0].weight.dtype)
        for k, conv in enumerate(self.convs):
            x = conv(x)
            if k < len(self.convs) - 1:
                x = F.silu(x)
        return x[0]

    def load_weights(self, state: dict) -> None:
        own = self.state_dict()
        for name, value in state.items():
            if name not in own or tuple(own[name].shape) != tuple(value.shape):
                raise ShapeMismatch(f"encoder weight {name!r} with shape {tuple(value.shape)} does not fit")
        missing = set(own) - set(state)
        if missing:
            raise ShapeMismatch(f"encoder weights missing {sorted(missing)[0]!r}")
        self.load_state_dict(state)


def encode_image(image, encoder: ImageEncoder) -> FeatureMap:
    image = torch.as_tensor(np.asarray(image) if not isinstance(image, torch.Tensor) else image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ShapeMismatch(f"expected an H x W x 3 image, got {tuple(image.shape)}")
    return FeatureMap(encoder(image), STRIDE, image.shape[1], image.shape[0])


def sample_feature(fmap: FeatureMap, pixels) -> torch.Tensor:
    """Bilinear lookup at continuous pixel coordinates, shape (N, 2) -> (N, C).

    Cell ``j`` is centered on pixel coordinate ``stride * (j + 0.5)``. Inside
    the image the lookup clamps to the border cells; outside it returns zeros.
    """
    values = fmap.values
    pixels = torch.as_tensor(pixels, dtype=values.dtype)
    flat = pixels.reshape(-1, 2)
    if flat.shape[0] == 0:
        return values.new_zeros(pixels.shape[:-1] + (fmap.channels,))
    # grid_sample with align_corners=False puts cell centers at the same spots
    norm = torch.stack([2.0 * flat[:, 0] / (fmap.stride * fmap.width) - 1.0,
                        2.0 * flat[:, 1] / (fmap.stride * fmap.height) - 1.0], dim=-1)
    out = F.grid_sample(values[None], norm[None, :, None, :], mode="bilinear",
                        padding_mode="border", align_corners=False)[0, :, :, 0].T
    inside = ((flat[:, 0] >= 0) & (flat[:, 0] < fmap.image_width)
              & (flat[:, 1] >= 0) & (flat[:, 1] < fmap.image_height))
    out = out * inside[:, None].to(out.dtype)
    return out.reshape(pixels.shape[:-1] + (fmap.channels,))
