"""Loss, ray sampling, the training loop, checkpoints and gradient checks.

Every iteration draws its randomness from ``default_rng([seed, iteration])``,
so a run resumed from a checkpoint continues exactly as an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, int_list
from .errors import CheckpointError, ConfigError, DivergedTraining, NoObjectPixels
from .geometry import pixel_directions
from .model import GraspField, SourceCache, condition
from .semantic_field import N_LABELS, RayRender, render_rays
from .synthetic.dataset import OBJECT_LABEL, View

log = logging.getLogger(__name__)

CE_EPS = 1e-7
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
MAGIC = b"GFCKPT01"
FORMAT_VERSION = 1


# -- loss -----------------------------------------------------------------

def loss(renders: RayRender, gt_colors, gt_labels):
    """Summed squared color error plus label cross-entropy.

    Returns ``(total, color_term, label_term)``; probabilities are clamped
    to [1e-7, 1] before the log.
    """
    dtype = renders.color.dtype
    gt_colors = torch.as_tensor(gt_colors, dtype=dtype)
    labels = torch.as_tensor(np.asarray(gt_labels), dtype=torch.long)
    color_term = ((renders.color - gt_colors) ** 2).sum()
    p = torch.clamp(renders.label_probs, CE_EPS, 1.0)
    label_term = -torch.log(p.gather(-1, labels[:, None])).sum()
    return color_term + label_term, color_term, label_term


# -- ray sampling ---------------------------------------------------------

@dataclass
class RayBatch:
    pixels: np.ndarray  # (n, 2) integer pixel indices (column, row)
    origins: np.ndarray
    directions: np.ndarray
    colors: np.ndarray
    labels: np.ndarray


def sample_rays(view: View, n: int, object_ratio: float, seed) -> RayBatch:
    """``round(n * object_ratio)`` rays through object pixels, the rest uniform.

    ``seed`` may be an integer or a numpy Generator. Pixels are drawn with
    replacement; rays pass through pixel centers.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    h, w = view.mask.shape
    n_obj = int(round(n * object_ratio))
    flat = view.mask.reshape(-1)
    picks = []
    if n_obj > 0:
        obj = np.flatnonzero(flat == OBJECT_LABEL)
        if len(obj) == 0:
            raise NoObjectPixels("object-ray ratio is positive but the view has no object pixels")
        picks.append(obj[rng.integers(0, len(obj), n_obj)])
    picks.append(rng.integers(0, h * w, n - n_obj))
    idx = np.concatenate(picks)
    rows, cols = np.divmod(idx, w)
    centers = np.stack([cols + 0.5, rows + 0.5], axis=1)
    dirs = pixel_directions(view.camera, centers)
    origins = np.broadcast_to(view.camera.center, dirs.shape).copy()
    return RayBatch(np.stack([cols, rows], axis=1), origins, dirs, view.image[rows, cols], flat[idx].astype(np.int64))


# -- schedules ------------------------------------------------------------

def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Rate for 1-based ``epoch``: base rate up to ``decay_epoch``, scaled after."""
    return config.learning_rate * (config.decay_factor if epoch > config.decay_epoch else 1.0)


def epoch_of(config: TrainConfig, iteration: int) -> int:
    return iteration // config.iterations_per_epoch + 1


def object_ratio(config: TrainConfig, iteration: int) -> float:
    """Linear ramp from 0 to the final ratio over the first ``ramp_fraction`` of iterations."""
    ramp = config.ramp_fraction * config.total_iterations
    if ramp <= 0:
        return config.object_ray_ratio_final
    return config.object_ray_ratio_final * min(1.0, (iteration + 1) / ramp)


# -- checkpoints ----------------------------------------------------------

def make_optimizer(model: GraspField) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=model.config.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS,
                            foreach=False)


def _tensors(model: GraspField, optimizer=None) -> dict:
    out = {f"model.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                st = optimizer.state.get(p)
                if st:
                    out[f"adam.exp_avg.{names[id(p)]}"] = st["exp_avg"]
                    out[f"adam.exp_avg_sq.{names[id(p)]}"] = st["exp_avg_sq"]
    return out


def _adam_steps(optimizer) -> int:
    for st in optimizer.state.values():
        return int(st["step"])
    return 0


def save_checkpoint(path, model: GraspField, optimizer=None, iteration: int = 0) -> None:
    """Magic, header length, JSON header, then little-endian float32 tensors."""
    tensors = _tensors(model, optimizer)
    directory, blobs, offset = [], [], 0
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy().astype("<f4"))
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "n_faces": model.codes.n_faces,
        "code_seed": model.codes.seed,
        "iteration": iteration,
        "adam_steps": _adam_steps(optimizer) if optimizer is not None else 0,
        "tensors": directory,
    }
    head = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs))


def load_checkpoint(path, dtype=torch.float32):
    """Returns ``(model, optimizer, iteration)``."""
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC or len(data) < len(MAGIC) + 8:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", data[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(data[start:start + n])
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version in {path}")
    blob = data[start + n:]
    arrays = {}
    try:
        for entry in header["tensors"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"]).reshape(entry["shape"])
            arrays[entry["name"]] = torch.from_numpy(arr.copy())
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint {path}: {exc}") from None
    config = TrainConfig.from_dict(header["config"])
    model = GraspField.create(config, header["n_faces"], dtype)
    state = {k[len("model."):]: v.to(dtype) for k, v in arrays.items() if k.startswith("model.")}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint does not match the configured model: {exc}") from None
    optimizer = make_optimizer(model)
    steps = header.get("adam_steps", 0)
    if steps:
        for name, p in model.named_parameters():
            m, v = arrays.get(f"adam.exp_avg.{name}"), arrays.get(f"adam.exp_avg_sq.{name}")
            if m is not None:
                optimizer.state[p] = {"step": torch.tensor(float(steps)), "exp_avg": m.to(dtype),
                                      "exp_avg_sq": v.to(dtype)}
    return model, optimizer, header["iteration"]


# -- training loop --------------------------------------------------------

@dataclass
class TrainResult:
    model: GraspField
    optimizer: torch.optim.Optimizer
    iteration: int
    log: list


def _usable_views(config: TrainConfig, n_views: int) -> list:
    held = set(int_list(config.holdout_views, None, "holdout_views")) if config.holdout_views else set()
    return [v for v in range(n_views) if v not in held]


def _input_views(config: TrainConfig, n_views: int) -> list:
    usable = _usable_views(config, n_views)
    if not config.input_views:
        return usable
    return [v for v in int_list(config.input_views, None, "input_views") if v in usable]


def train(datasets, config: TrainConfig, model: GraspField | None = None, optimizer=None, start: int = 0,
          stop: int | None = None, log_path=None, callback=None) -> TrainResult:
    """Run iterations ``start .. stop`` (default: to the configured total)."""
    datasets = list(datasets)
    if not datasets:
        raise ConfigError("training needs at least one dataset")
    for ds in datasets:
        if len(_usable_views(config, len(ds.views))) < 2 or not _input_views(config, len(ds.views)):
            raise ConfigError("every dataset needs an input view and a different supervision view")
    if model is None:
        model = GraspField.create(config, datasets[0].hand.n_faces)
    if optimizer is None:
        optimizer = make_optimizer(model)
    stop = config.total_iterations if stop is None else stop
    cache = SourceCache()
    records = []
    sink = open(log_path, "a") if log_path else None
    try:
        for it in range(start, stop):
            rng = np.random.default_rng([config.seed, it])
            s = int(rng.integers(len(datasets)))
            ds = datasets[s]
            choices = _input_views(config, len(ds.views))
            i = choices[int(rng.integers(len(choices)))]
            others = [j for j in _usable_views(config, len(ds.views)) if j != i]
            j = others[int(rng.integers(len(others)))]
            ratio = object_ratio(config, it)
            if not np.any(ds.views[j].mask == OBJECT_LABEL):
                ratio = 0.0  # nothing to aim at in this view
            batch = sample_rays(ds.views[j], config.rays_per_image, ratio, rng)
            cond = condition(model, ds, i, rng, cache, (s, i))
            out = render_rays(model.head, cond, batch.origins, batch.directions, config.samples_per_ray,
                              stratified=True, rng=rng, n_importance=config.importance_samples)
            total, color_term, label_term = loss(out, batch.colors, batch.labels)
            if not torch.isfinite(total):
                raise DivergedTraining(f"non-finite loss at iteration {it}")
            lr = learning_rate(config, epoch_of(config, it))
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad(set_to_none=False)
            total.backward()
            optimizer.step()
            if (it + 1) % config.log_every == 0 or it + 1 == stop:
                rec = {"iteration": it + 1, "loss": total.item(), "color": color_term.item(),
                       "label": label_term.item(), "lr": lr, "object_ratio": ratio, "scene": s,
                       "input_view": i, "target_view": j}
                records.append(rec)
                if sink:
                    sink.write(json.dumps(rec) + "\n")
            if callback is not None:
                callback(it + 1, model)
    finally:
        if sink:
            sink.close()
    return TrainResult(model, optimizer, stop, records)


# -- gradient checks ------------------------------------------------------

def _rel_error(a: np.ndarray, b: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_difference_check(params: dict, readout, rng: np.random.Generator, step: float = 1e-5,
                            max_entries: int | None = None, floor: float = 1e-6) -> dict:
    """Central differences on (a random subset of) every parameter entry.

    ``readout`` returns a scalar tensor. The relative error of an entry is
    ``|a - n| / max(|a|, |n|, floor * max|grad|)``: entries far below the
    largest gradient are judged on the absolute scale that finite
    differences can resolve. Returns the max error and the entry count.
    """
    for p in params.values():
        p.grad = None
    value = readout()
    value.backward()
    floor = floor * max(1.0, max(float(p.grad.abs().max()) for p in params.values()))
    worst, checked, worst_name = 0.0, 0, ""
    for name, p in params.items():
        grad = p.grad.detach().clone().reshape(-1)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.numel())
        if max_entries is not None and len(idx) > max_entries:
            idx = np.sort(rng.choice(len(idx), max_entries, replace=False))
        for k in idx:
            orig = flat[k].item()
            with torch.no_grad():
                flat[k] = orig + step
                hi = readout().item()
                flat[k] = orig - step
                lo = readout().item()
                flat[k] = orig
            num = (hi - lo) / (2 * step)
            err = float(_rel_error(np.array(grad[k].item()), np.array(num), floor))
            if err > worst:
                worst, worst_name = err, name
            checked += 1
    return {"max_rel_error": worst, "entries": checked, "worst_parameter": worst_name}


COMPONENTS = ("image_encoder", "interaction_encoder", "field_head", "end_to_end")


def gradient_check(component: str, seed: int = 0, step: float = 1e-5, perturbation: float | None = None) -> dict:
    """Analytic vs central-difference gradients for a small float64 instance.

    With ``perturbation=0`` the analytic gradient is compared with itself,
    which must give exactly zero error.
    """
    from . import gradcheck_instances as gi

    if component not in COMPONENTS:
        raise ValueError(f"component must be one of {COMPONENTS}")
    rng = np.random.default_rng([seed, 99])
    params, readout, max_entries = gi.build(component, seed)
    if perturbation == 0:
        for p in params.values():
            p.grad = None
        readout().backward()
        g = np.concatenate([p.grad.reshape(-1).numpy() for p in params.values()])
        return {"component": component, "seed": seed, "max_rel_error": float(_rel_error(g, g.copy(), 1e-6).max()),
                "entries": len(g), "worst_parameter": ""}
    report = finite_difference_check(params, readout, rng, step, max_entries)
    report.update(component=component, seed=seed)
    return report
