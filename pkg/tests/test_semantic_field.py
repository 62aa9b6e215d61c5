import numpy as np
import pytest
import torch

from graspfield.errors import MaskMismatch
from graspfield.feature_volume import Bounds
from graspfield.geometry import Camera, sample_depths
from graspfield.image_encoder import FeatureMap
from graspfield.semantic_field import (ABLATIONS, Conditioning, FieldHead, ablation, composite, eval_field, render_rays,
                                       render_view)


def constant_render(sigma, near, far, n, color=(0.2, 0.4, 0.6), bg=(1.0, 1.0, 1.0)):
    t, delta = sample_depths([near], [far], n, False)
    t, delta = torch.as_tensor(t), torch.as_tensor(delta)
    sig = torch.full_like(t, sigma)
    col = torch.tensor(color, dtype=torch.float64).expand(1, n, 3)
    logits = torch.zeros((1, n, 3), dtype=torch.float64)
    logits[..., 2] = 5.0
    return composite(sig, col, logits, t, delta, torch.tensor(bg, dtype=torch.float64))


def test_quadrature_bias_has_closed_form():
    """Midpoint samples with the last segment ending at far cover far - near - w / 2."""
    for sigma_len in (0.5, 2.0, 20.0):
        for n in (16, 64, 256):
            out = constant_render(sigma_len / 0.1, 0.3, 0.4, n)
            expected = 1 - np.exp(-sigma_len * (1 - 0.5 / n))
            assert abs(out.opacity.item() - expected) < 1e-12


def test_constant_density_converges_to_analytic_opacity():
    analytic = 1 - np.exp(-30.0)
    errors = [abs(constant_render(300.0, 0.3, 0.4, n).opacity.item() - analytic) for n in (16, 64, 256)]
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-6


def test_color_and_labels_blend_with_background():
    out = constant_render(5.0, 0.0, 0.1, 64)
    a = out.opacity.item()
    assert np.allclose(out.color[0].numpy(), a * np.array([0.2, 0.4, 0.6]) + (1 - a))
    probs = out.label_probs[0].numpy()
    assert np.isclose(probs.sum(), 1.0)
    assert probs[0] >= 1 - a - 1e-12
    assert probs[2] > probs[1]


def test_opaque_single_sample():
    t, delta = torch.tensor([[0.5]], dtype=torch.float64), torch.tensor([[1.0]], dtype=torch.float64)
    out = composite(torch.tensor([[50.0]], dtype=torch.float64), torch.tensor([[[0.1, 0.2, 0.3]]], dtype=torch.float64),
                    torch.zeros((1, 1, 3), dtype=torch.float64), t, delta, torch.ones(3, dtype=torch.float64))
    assert np.allclose(out.color[0].numpy(), (0.1, 0.2, 0.3), atol=1e-12)
    assert np.isclose(out.depth.item(), 0.5)


def test_empty_ray_gives_background_and_zero_depth():
    out = constant_render(0.0, 0.0, 1.0, 8, bg=(0.3, 0.2, 0.1))
    assert np.allclose(out.color[0].numpy(), (0.3, 0.2, 0.1))
    assert out.depth.item() == 0.0
    assert np.allclose(out.label_probs[0].numpy(), (1, 0, 0))


def _head(name, hidden=16):
    return FieldHead(ABLATIONS[name], image_channels=4, volume_channels=6, hidden=hidden).double()


@pytest.mark.parametrize("name", sorted(ABLATIONS))
def test_mask_contract(name):
    head = _head(name)
    mask = ablation(name)
    n = 5
    x, d = torch.zeros(n, 3), torch.tensor([[0.0, 0.0, 1.0]]).expand(n, 3)
    f2d = torch.ones(n, 4) if mask.pixel else None
    fx = torch.ones(n, 6) if mask.volume else None
    out = eval_field(head, x, d, f2d, fx, mask)
    assert out.sigma.shape == (n,) and out.color.shape == (n, 3) and out.label_logits.shape == (n, 3)
    assert torch.all(out.sigma >= 0) and torch.all((out.color > 0) & (out.color < 1))
    with pytest.raises(MaskMismatch):
        eval_field(head, x, d, None if mask.pixel else torch.ones(n, 4), fx, mask)
    other = ABLATIONS["M2" if name != "M2" else "M5"]
    with pytest.raises(MaskMismatch):
        eval_field(head, x, d, f2d, fx, other)


def test_density_and_labels_ignore_direction(rng):
    head = _head("M5")
    x = torch.as_tensor(rng.uniform(-1, 1, (10, 3)))
    f2d, fx = torch.as_tensor(rng.standard_normal((10, 4))), torch.as_tensor(rng.standard_normal((10, 6)))
    d1 = torch.as_tensor(rng.standard_normal((10, 3)))
    d2 = torch.as_tensor(rng.standard_normal((10, 3)))
    a, b = eval_field(head, x, d1, f2d, fx, head.mask), eval_field(head, x, d2, f2d, fx, head.mask)
    assert torch.equal(a.sigma, b.sigma) and torch.equal(a.label_logits, b.label_logits)
    assert not torch.allclose(a.color, b.color)


def _pixel_cond():
    cam = Camera.look_at((0.0, -0.3, 0.0), (0, 0, 0), (0, 0, 1), 20.0, 8, 6)
    bounds = Bounds(np.full(3, -0.05), np.full(3, 0.05), 0.01, (10, 10, 10))
    fmap = FeatureMap(torch.randn(4, 2, 2, dtype=torch.float64), 4, 8, 6)
    return Conditioning(cam, bounds, torch.tensor([0.1, 0.2, 0.3], dtype=torch.float64), fmap, None)


def test_rays_missing_the_box_show_background():
    cond = _pixel_cond()
    head = _head("M2")
    out = render_rays(head, cond, np.array([[0.0, -0.3, 0.5], [0.0, -0.3, 0.0]]),
                      np.array([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]), 8)
    assert torch.allclose(out.color[0], cond.background)
    assert out.opacity[0] == 0
    assert out.opacity[1] > 0


def test_render_view_shapes_and_determinism():
    cond = _pixel_cond()
    head = _head("M2")
    a = render_view(head, cond, cond.camera, 8, chunk=7)
    b = render_view(head, cond, cond.camera, 8)
    assert a[0].shape == (6, 8, 3) and a[1].shape == (6, 8, 3) and a[2].shape == (6, 8)
    for x, y in zip(a, b):
        assert np.allclose(x, y)
    assert np.allclose(a[1].sum(-1), 1.0)
