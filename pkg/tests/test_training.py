import numpy as np
import pytest
import torch

from graspfield.config import TrainConfig
from graspfield.errors import CheckpointError, ConfigError, DivergedTraining, NoObjectPixels
from graspfield.model import GraspField
from graspfield.semantic_field import RayRender
from graspfield.synthetic.dataset import OBJECT_LABEL, View
from graspfield.training import (finite_difference_check, learning_rate, load_checkpoint, loss, make_optimizer,
                                 object_ratio, sample_rays, save_checkpoint, train)

TINY = dict(epochs=2, iterations_per_epoch=2, rays_per_image=16, samples_per_ray=8, image_channels=4,
            encoder_widths="4,4,4", cnn_widths="4,4,4", hidden=8, margin=0.01, decay_epoch=1)


def _render(colors, probs):
    colors = torch.as_tensor(colors, dtype=torch.float64)
    probs = torch.as_tensor(probs, dtype=torch.float64)
    n = len(colors)
    return RayRender(colors, probs, torch.zeros(n), torch.ones(n))


def test_loss_is_zero_for_perfect_predictions():
    gt = np.array([[0.1, 0.5, 0.9], [0.3, 0.3, 0.3]])
    total, color, label = loss(_render(gt, [[0, 1, 0], [0, 0, 1]]), gt, [1, 2])
    assert total.item() == 0.0 and color.item() == 0.0 and label.item() == 0.0


def test_loss_terms_by_hand():
    gt = np.array([[0.0, 0.0, 0.0]])
    total, color, label = loss(_render([[0.1, 0.2, 0.2]], [[0.5, 0.25, 0.25]]), gt, [0])
    assert np.isclose(color.item(), 0.01 + 0.04 + 0.04)
    assert np.isclose(label.item(), np.log(2))
    assert np.isclose(total.item(), color.item() + label.item())


def test_loss_clamps_zero_probability():
    total = loss(_render([[0.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]]), np.zeros((1, 3)), [2])[0]
    assert np.isfinite(total.item())


def test_sample_rays_object_share(small_dataset):
    view = small_dataset.views[0]
    batch = sample_rays(view, 200, 0.5, 3)
    cols, rows = batch.pixels.T
    assert np.all(view.mask[rows[:100], cols[:100]] == OBJECT_LABEL)
    assert np.array_equal(batch.labels, view.mask[rows, cols])
    assert np.array_equal(batch.colors, view.image[rows, cols])
    again = sample_rays(view, 200, 0.5, 3)
    assert np.array_equal(again.pixels, batch.pixels)
    blank = View(view.image, np.zeros_like(view.mask), view.camera)
    with pytest.raises(NoObjectPixels):
        sample_rays(blank, 10, 0.5, 0)
    assert len(sample_rays(blank, 10, 0.0, 0).pixels) == 10


def test_schedules():
    cfg = TrainConfig()
    assert learning_rate(cfg, 200) == 1e-3
    assert np.isclose(learning_rate(cfg, 201), 1e-4)
    ramp = 0.1 * cfg.total_iterations
    assert object_ratio(cfg, 0) == pytest.approx(0.5 / ramp)
    assert object_ratio(cfg, int(ramp) - 1) == pytest.approx(0.5)
    assert object_ratio(cfg, cfg.total_iterations - 1) == 0.5


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(ablation="M7")
    with pytest.raises(ConfigError):
        TrainConfig(encoder_widths="1,2")
    assert TrainConfig.from_dict({"epochs": "3"}).epochs == 3
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epoch": 3})


@pytest.mark.parametrize("name", ["M2", "M3", "M4", "M5"])
def test_training_runs_for_every_ablation(small_dataset, name):
    cfg = TrainConfig(ablation=name, **TINY)
    res = train([small_dataset], cfg)
    assert res.iteration == 4 and len(res.log) == 4
    assert all(np.isfinite(r["loss"]) for r in res.log)
    assert (res.model.cnn is None) == (name == "M2")


def test_resume_matches_uninterrupted_run(small_dataset, tmp_path):
    cfg = TrainConfig(**TINY)
    full = train([small_dataset], cfg)
    part = train([small_dataset], cfg, stop=2)
    save_checkpoint(tmp_path / "c.ckpt", part.model, part.optimizer, part.iteration)
    model, opt, it = load_checkpoint(tmp_path / "c.ckpt")
    assert it == 2
    rest = train([small_dataset], cfg, model, opt, start=it)
    for a, b in zip(full.model.parameters(), rest.model.parameters()):
        assert torch.equal(a, b)
    assert full.log[2:] == rest.log


def test_checkpoint_round_trip_and_corruption(small_dataset, tmp_path):
    cfg = TrainConfig(**TINY)
    model = GraspField.create(cfg, small_dataset.hand.n_faces)
    save_checkpoint(tmp_path / "m.ckpt", model, make_optimizer(model), 0)
    back, _, _ = load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == cfg
    for (n, a), (_, b) in zip(model.state_dict().items(), back.state_dict().items()):
        assert torch.equal(a, b), n
    assert np.array_equal(back.codes.face_codes(), model.codes.face_codes())
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.ckpt")


def test_diverged_training_is_reported(small_dataset):
    cfg = TrainConfig(**TINY)
    model = GraspField.create(cfg, small_dataset.hand.n_faces)
    with torch.no_grad():
        model.head.sigma_out.bias.fill_(float("nan"))
    with pytest.raises(DivergedTraining):
        train([small_dataset], cfg, model)


def test_finite_differences_on_a_quadratic():
    w = torch.nn.Parameter(torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64))
    report = finite_difference_check({"w": w}, lambda: (w**3).sum(), np.random.default_rng(0))
    assert report["max_rel_error"] < 1e-6
