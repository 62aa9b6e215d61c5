"""Command-line entry points.

Every command reads an optional flat ``key = value`` file given with
``--config`` and then applies ``--key value`` overrides. Boolean keys also
accept ``--key`` and ``--no-key``. Failures exit with status 1 after printing
one ``Code: message`` line to stderr.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

from .config import TrainConfig, coerce, format_config, int_list, parse_config_text
from .errors import CheckpointError, ConfigError, EmptyMesh, GraspFieldError
from .mesh import write_obj

MANIFEST = "manifest.txt"


# -- run configurations ---------------------------------------------------

@dataclass
class GenerateConfig:
    out: str = "data"
    object_kind: str = "sphere"
    object_size: str = "0.035"
    grasps: str = "0,1,2,3,4"
    test_grasps: str = "4"
    n_views: int = 8
    resolution: int = 64
    seed: int = 0
    force: bool = False


@dataclass
class TrainRunConfig(TrainConfig):
    data: str = "data"
    split: str = "train"
    out: str = "model.ckpt"
    log: str = ""  # defaults to <out>.log
    resume: str = ""
    save_every: int = 0  # intermediate checkpoints; 0 = only the final one


@dataclass
class RenderConfig:
    checkpoint: str = "model.ckpt"
    scene: str = ""
    input_view: int = 0
    views: str = ""  # dataset views to render; empty = all
    orbit: int = 0  # extra orbit cameras around the scene
    orbit_seed: int = 0
    samples: int = 0  # 0 = the checkpoint's samples_per_ray
    out: str = "render"


@dataclass
class ReconstructConfig:
    checkpoint: str = "model.ckpt"
    scene: str = ""
    input_view: int = 0
    voxel_size: float = 0.002
    margin: float = 0.06
    sanitize: bool = True
    out: str = "meshes"


@dataclass
class EvaluateConfig:
    checkpoints: str = ""  # "M2=a.ckpt,M5=b.ckpt"
    data: str = "data"
    split: str = "test"
    input_view: int = 0
    voxel_size: float = 0.002
    margin: float = 0.06
    sanitize: bool = True
    render: bool = True
    samples: int = 0
    ground_truth: bool = False  # score ground-truth meshes against themselves
    out: str = "report.jsonl"


# -- argument handling ----------------------------------------------------

def _bool_fields(record_type) -> set:
    return {f.name for f in fields(record_type) if f.type in (bool, "bool")}


def parse_overrides(tokens: list, record_type) -> dict:
    """``--key value`` pairs; boolean keys may stand alone or use a ``no-`` prefix."""
    bools = _bool_fields(record_type)
    values = {}
    k = 0
    while k < len(tokens):
        tok = tokens[k]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
            values[key] = value
            k += 1
            continue
        if key.startswith("no_") and key[3:] in bools:
            values[key[3:]] = False
            k += 1
            continue
        nxt = tokens[k + 1] if k + 1 < len(tokens) else None
        if key in bools and (nxt is None or nxt.startswith("--")):
            values[key] = True
            k += 1
            continue
        if nxt is None:
            raise ConfigError(f"missing value for --{key}")
        values[key] = nxt
        k += 2
    return values


def load_run_config(record_type, config_path: str | None, tokens: list):
    values = {}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        values.update(parse_config_text(path.read_text()))
    values.update(parse_overrides(tokens, record_type))
    return record_type(**coerce(record_type, values))


def _train_part(cfg: TrainConfig) -> TrainConfig:
    """The TrainConfig part of a train run configuration."""
    names = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in asdict(cfg).items() if k in names})


# -- datasets ---------------------------------------------------------------

def read_manifest(data_dir) -> list:
    """``[(grasp_id, split, directory)]`` in manifest order."""
    path = Path(data_dir) / MANIFEST
    if not path.is_file():
        raise ConfigError(f"no {MANIFEST} in {data_dir}")
    rows = []
    for line in path.read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            gid, split, name = line.split()
            rows.append((int(gid), split, Path(data_dir) / name))
    return rows


def load_split(data_dir, split: str) -> list:
    from .synthetic.dataset import read_dataset

    rows = [r for r in read_manifest(data_dir) if split in ("all", r[1])]
    if not rows:
        raise ConfigError(f"no scenes in split {split!r} of {data_dir}")
    return [read_dataset(d) for _, _, d in rows]


def cmd_generate_data(cfg: GenerateConfig) -> list:
    from .synthetic.dataset import make_dataset, write_dataset
    from .synthetic.grasp import generate_grasp_scene
    from .synthetic.objects import ObjectSpec

    out = Path(cfg.out)
    if out.exists():
        if not cfg.force:
            raise ConfigError(f"{out} exists; pass --force to overwrite")
        shutil.rmtree(out)
    grasps = int_list(cfg.grasps, None, "grasps")
    test = set(int_list(cfg.test_grasps, None, "test_grasps"))
    try:
        spec = ObjectSpec(cfg.object_kind, tuple(float(v) for v in cfg.object_size.split(",")))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out.mkdir(parents=True)
    rows = []
    for gid in grasps:
        scene = generate_grasp_scene(spec, gid, seed=cfg.seed)
        ds = make_dataset(scene, cfg.n_views, cfg.resolution, seed=cfg.seed)
        split = "test" if gid in test else "train"
        ds.meta["split"] = split
        name = f"scene_{gid}"
        write_dataset(ds, out / name)
        rows.append((gid, split, name))
    (out / MANIFEST).write_text("# grasp_id split directory\n" + "".join(f"{g} {s} {n}\n" for g, s, n in rows))
    # the output path is left out so a dataset's bytes do not depend on where it lives
    settings = {k: v for k, v in asdict(cfg).items() if k not in ("out", "force")}
    (out / "generate.cfg").write_text(format_config(settings))
    return rows


def cmd_train(cfg: TrainRunConfig):
    from .training import load_checkpoint, save_checkpoint, train

    datasets = load_split(cfg.data, cfg.split)
    log_path = Path(cfg.log or cfg.out + ".log")
    model = optimizer = None
    start = 0
    train_cfg = _train_part(cfg)
    if cfg.resume:
        model, optimizer, start = load_checkpoint(cfg.resume)
        train_cfg = model.config
    else:
        log_path.unlink(missing_ok=True)
    total = train_cfg.total_iterations
    step = cfg.save_every if cfg.save_every > 0 else total
    result = None
    it = start
    while it < total or result is None:
        stop = min(total, it + step)
        result = train(datasets, train_cfg, model, optimizer, it, stop, log_path)
        model, optimizer, it = result.model, result.optimizer, result.iteration
        save_checkpoint(cfg.out, model, optimizer, it)
    return result


def _load_model(path: str):
    from .training import load_checkpoint

    if not Path(path).is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    model = load_checkpoint(path)[0]
    model.eval()
    return model


def _load_scene(path: str):
    from .synthetic.dataset import read_dataset

    if not path or not Path(path, "meta.txt").is_file():
        raise ConfigError(f"not a scene directory: {path!r}")
    return read_dataset(path)


def _save_png(path: Path, array) -> None:
    Image.fromarray(array).save(path, optimize=False)


def cmd_render(cfg: RenderConfig) -> list:
    import torch

    from .model import condition
    from .semantic_field import render_view
    from .synthetic.dataset import view_cameras

    model = _load_model(cfg.checkpoint)
    ds = _load_scene(cfg.scene)
    cameras = []
    ids = int_list(cfg.views, None, "views") if cfg.views else range(len(ds.views))
    for k in ids:
        if not 0 <= k < len(ds.views):
            raise ConfigError(f"view {k} out of range")
        cameras.append((f"view_{k}", ds.views[k].camera))
    if cfg.orbit > 0:
        pts = np.concatenate([ds.hand.vertices, ds.object_mesh.vertices])
        center = (pts.min(axis=0) + pts.max(axis=0)) / 2
        radius = float(np.linalg.norm(pts - center, axis=1).max())
        res = ds.resolution[0]
        for k, cam in enumerate(view_cameras(center, radius, cfg.orbit, res, cfg.orbit_seed)):
            cameras.append((f"orbit_{k}", cam))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = cfg.samples or model.config.samples_per_ray
    with torch.no_grad():
        cond = condition(model, ds, cfg.input_view)
        for name, cam in cameras:
            rgb, probs, depth, opacity = render_view(model.head, cond, cam, samples)
            _save_png(out / f"{name}.png", np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8))
            _save_png(out / f"{name}_mask.png", probs.argmax(-1).astype(np.uint8))
            np.save(out / f"{name}_depth.npy", depth.astype(np.float32))
            np.save(out / f"{name}_opacity.npy", opacity.astype(np.float32))
    return [n for n, _ in cameras]


def cmd_reconstruct(cfg: ReconstructConfig) -> dict:
    import torch

    from .model import condition
    from .pipeline import reconstruct_scene

    model = _load_model(cfg.checkpoint)
    ds = _load_scene(cfg.scene)
    with torch.no_grad():
        cond = condition(model, ds, cfg.input_view)
        meshes = reconstruct_scene(model, ds, cond, cfg.margin, cfg.voxel_size, cfg.sanitize)
    if meshes["whole"].is_empty:
        raise EmptyMesh("the field has no occupied voxel at the reconstruction iso level")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for tag in ("whole", "hand", "object"):
        write_obj(meshes[tag], out / f"{tag}.obj")
    (out / "stats.json").write_text(json.dumps(meshes["stats"], indent=1, sort_keys=True) + "\n")
    return meshes


def _parse_checkpoints(text: str) -> dict:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"checkpoints entries look like NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        out[name.strip().upper()] = path.strip() or None
    return out


def cmd_evaluate(cfg: EvaluateConfig) -> list:
    from .evaluation import MetricReport, format_reports, run_benchmark, score_meshes, summary_table
    from .mesh import concatenate

    datasets = load_split(cfg.data, cfg.split)
    if cfg.ground_truth:
        reports = []
        for ds in datasets:
            gt_hand = ds.hand.as_mesh()
            whole = concatenate([gt_hand, ds.object_mesh], "whole")
            reports.append(MetricReport(str(ds.meta.get("grasp_id", "?")), "GT",
                                        mesh=score_meshes(whole, gt_hand, ds.object_mesh, gt_hand, ds.object_mesh)))
    else:
        checkpoints = _parse_checkpoints(cfg.checkpoints)
        if not checkpoints:
            raise ConfigError("no checkpoints given")
        missing = {k: (v if v and Path(v).is_file() else None) for k, v in checkpoints.items()}
        reports = run_benchmark(missing, datasets, input_view=cfg.input_view, recon_margin=cfg.margin,
                                voxel_size=cfg.voxel_size, sanitize=cfg.sanitize,
                                n_samples=cfg.samples or None, render=cfg.render)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_reports(reports))
    out.with_suffix(".txt").write_text(summary_table(reports))
    return reports


COMMANDS = {
    "generate-data": (GenerateConfig, cmd_generate_data),
    "train": (TrainRunConfig, cmd_train),
    "render": (RenderConfig, cmd_render),
    "reconstruct": (ReconstructConfig, cmd_reconstruct),
    "evaluate": (EvaluateConfig, cmd_evaluate),
}


def main(argv=None) -> int:
    from .runtime import configure

    parser = argparse.ArgumentParser(prog="graspfield", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--threads", type=int, default=1, help="torch worker threads")
    args, rest = parser.parse_known_args(argv)
    record_type, fn = COMMANDS[args.command]
    try:
        configure(args.threads)
        cfg = load_run_config(record_type, args.config, rest)
        fn(cfg)
    except GraspFieldError as exc:
        print(f"{exc.code}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"{type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
