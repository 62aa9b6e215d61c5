"""Multi-view ground-truth rendering and the on-disk dataset layout.

Layout of one scene directory::

    cameras.txt        view id, K (9), R (9), t (3), width, height per line
    view_<k>.png       8-bit RGB
    view_<k>_mask.png  8-bit labels, 0 background / 1 hand / 2 object
    hand.obj           posed hand mesh (fixed face order)
    object_gt.obj      ground-truth object mesh
    meta.txt           key = value records (grasp id, seed, split, ...)

Images are quantized to 8 bits in memory as well, so a dataset read back
from disk equals the one that was written.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..geometry import Camera
from ..mesh import TriangleMesh, read_obj, write_obj
from .grasp import BACKGROUND, Scene
from .hand import HandMesh, generate_hand
from .raytrace import trace_labels

BACKGROUND_LABEL, HAND_LABEL, OBJECT_LABEL = 0, 1, 2


def quantize(image: np.ndarray) -> np.ndarray:
    """Round colors to the nearest 8-bit level."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


@dataclass
class View:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) uint8 labels
    camera: Camera


@dataclass
class SceneDataset:
    views: list
    hand: HandMesh
    object_mesh: TriangleMesh  # held out from training
    background: tuple
    meta: dict = field(default_factory=dict)

    @property
    def resolution(self) -> tuple:
        return self.views[0].camera.width, self.views[0].camera.height


def render_ground_truth(scene: Scene | None, camera: Camera):
    """Ray-traced ``(image, mask, depth)``; ``scene=None`` renders nothing but background."""
    camera.validate()
    if scene is None:
        return trace_labels(camera, [], [], [], BACKGROUND)
    return trace_labels(camera, [scene.hand.as_mesh(), scene.object_mesh],
                        [scene.hand_albedo, scene.object_spec.albedo], [HAND_LABEL, OBJECT_LABEL],
                        scene.background)


def scene_radius(scene: Scene) -> float:
    pts = np.concatenate([scene.hand.vertices, scene.object_mesh.vertices])
    return float(np.linalg.norm(pts - scene.centroid(), axis=1).max())


def view_cameras(center, radius: float, n_views: int, resolution: int, seed: int,
                 distance_factor: float = 3.0, fill: float = 0.9) -> list:
    """Cameras on a jittered Fibonacci sphere, all looking at ``center``.

    ``fill`` is the fraction of the half-image spanned by a sphere of
    ``radius`` around the center.
    """
    rng = np.random.default_rng([seed, 104729])
    golden = np.pi * (3.0 - np.sqrt(5.0))
    cams = []
    distance = distance_factor * radius
    focal = fill * (resolution / 2) * np.sqrt(distance**2 - radius**2) / radius
    for k in range(n_views):
        z = 1 - 2 * (k + 0.5) / n_views + rng.uniform(-0.5, 0.5) / n_views
        phi = golden * k + rng.uniform(-0.3, 0.3)
        r = np.sqrt(max(0.0, 1 - z * z))
        eye = np.asarray(center) + distance * np.array([r * np.cos(phi), r * np.sin(phi), z])
        cams.append(Camera.look_at(eye, center, (0.0, 0.0, 1.0), focal, resolution, resolution))
    return cams


def make_dataset(scene: Scene, n_views: int = 8, resolution: int = 64, seed: int = 0) -> SceneDataset:
    if n_views < 2:
        raise ValueError("a dataset needs at least two views")
    background = tuple(quantize(np.asarray(scene.background)).tolist())
    views = []
    for cam in view_cameras(scene.centroid(), scene_radius(scene), n_views, resolution, seed):
        image, mask, _ = render_ground_truth(scene, cam)
        views.append(View(quantize(image), mask, cam))
    meta = {
        "grasp_id": scene.grasp_id,
        "seed": seed,
        "hand_seed": scene.seed,
        "object_kind": scene.object_spec.kind,
        "object_size": list(scene.object_spec.size),
        "hand_pose": scene.hand.pose_params.tolist(),
        "rig_rotation": np.asarray(scene.rig_rotation).ravel().tolist(),
        "rig_translation": np.asarray(scene.rig_translation).tolist(),
    }
    return SceneDataset(views, scene.hand, scene.object_mesh, background, meta)


def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def write_dataset(ds: SceneDataset, directory) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, view in enumerate(ds.views):
        c = view.camera
        nums = list(c.intrinsics.ravel()) + list(c.rotation.ravel()) + list(c.translation)
        lines.append(f"{k} " + " ".join("%.17g" % v for v in nums) + f" {c.width} {c.height}")
        Image.fromarray(np.round(view.image * 255).astype(np.uint8), "RGB").save(out / f"view_{k}.png")
        Image.fromarray(view.mask.astype(np.uint8), "L").save(out / f"view_{k}_mask.png")
    (out / "cameras.txt").write_text("\n".join(lines) + "\n")
    write_obj(ds.hand.as_mesh(), out / "hand.obj")
    write_obj(ds.object_mesh, out / "object_gt.obj")
    meta = dict(ds.meta, background=list(ds.background))
    (out / "meta.txt").write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in meta.items()))


def _parse_meta(text: str) -> dict:
    meta = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def read_cameras(path) -> list:
    cams = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        f = line.split()
        nums = np.array([float(v) for v in f[1:22]])
        cams.append(Camera(nums[:9].reshape(3, 3), nums[9:18].reshape(3, 3), nums[18:21], int(f[22]), int(f[23])))
    return cams


def read_dataset(directory, load_object: bool = True) -> SceneDataset:
    src = Path(directory)
    meta = _parse_meta((src / "meta.txt").read_text())
    views = []
    for k, cam in enumerate(read_cameras(src / "cameras.txt")):
        image = np.asarray(Image.open(src / f"view_{k}.png").convert("RGB"), dtype=np.float64) / 255.0
        mask = np.asarray(Image.open(src / f"view_{k}_mask.png"), dtype=np.uint8)
        views.append(View(image, mask, cam))
    # rebuild part bookkeeping from the pose; the stored vertices are authoritative
    pose = np.array([float(v) for v in meta["hand_pose"].split()])
    rot = np.array([float(v) for v in meta["rig_rotation"].split()]).reshape(3, 3)
    shift = np.array([float(v) for v in meta["rig_translation"].split()])
    hand = generate_hand(pose, int(meta.get("hand_seed", meta["seed"]))).transformed(rot, shift)
    stored = read_obj(src / "hand.obj")
    hand.vertices = stored.vertices
    hand.faces = stored.triangles
    obj = read_obj(src / "object_gt.obj", "object") if load_object else TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int), "object")
    background = tuple(float(v) for v in meta["background"].split())
    return SceneDataset(views, hand, obj, background, meta)
