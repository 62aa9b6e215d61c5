"""Image and mesh metrics, plus the ablation benchmark runner."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.spatial import cKDTree

from .errors import EmptyCloud, EmptyMesh, GraspFieldError, ShapeMismatch
from .mesh import TriangleMesh, concatenate

PSNR_CAP = 99.0
SSIM_WINDOW = 7
SSIM_K1, SSIM_K2 = 0.01, 0.03
SURFACE_SAMPLES = 10_000


def psnr(pred, gt) -> float:
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)) ** 2))
    if mse <= 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * math.log10(1.0 / mse)))


def ssim(pred, gt, window: int = SSIM_WINDOW, data_range: float = 1.0) -> float:
    """Mean SSIM with a uniform window and sample covariances, averaged over channels.

    Border pixels within half a window of the edge are left out of the mean.
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    n = window * window
    cov_norm = n / (n - 1)
    pad = (window - 1) // 2
    scores = []
    for ch in range(x.shape[-1]):
        a, b = x[..., ch], y[..., ch]
        ux, uy = uniform_filter(a, window), uniform_filter(b, window)
        vx = cov_norm * (uniform_filter(a * a, window) - ux * ux)
        vy = cov_norm * (uniform_filter(b * b, window) - uy * uy)
        vxy = cov_norm * (uniform_filter(a * b, window) - ux * uy)
        s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2))
        scores.append(s[pad:s.shape[0] - pad, pad:s.shape[1] - pad].mean())
    return float(np.mean(scores))


def semantic_iou(pred_labels, gt_labels, classes=(1, 2)) -> float:
    """Mean IoU over ``classes``; a class absent from both maps is skipped (1 if all are)."""
    p, g = np.asarray(pred_labels), np.asarray(gt_labels)
    vals = []
    for c in classes:
        union = np.sum((p == c) | (g == c))
        if union:
            vals.append(np.sum((p == c) & (g == c)) / union)
    return float(np.mean(vals)) if vals else 1.0


def image_metrics(pred_image, gt_image, pred_labels, gt_labels):
    """``(psnr, ssim, iou)``; labels are integer maps (argmax already taken)."""
    if np.shape(pred_image) != np.shape(gt_image) or np.shape(pred_labels) != np.shape(gt_labels):
        raise ShapeMismatch(f"image shapes {np.shape(pred_image)} vs {np.shape(gt_image)}, labels "
                            f"{np.shape(pred_labels)} vs {np.shape(gt_labels)}")
    return psnr(pred_image, gt_image), ssim(pred_image, gt_image), semantic_iou(pred_labels, gt_labels)


def sample_surface(mesh: TriangleMesh, n_points: int = SURFACE_SAMPLES, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform points on the mesh surface."""
    if mesh.is_empty:
        raise EmptyMesh("cannot sample an empty mesh")
    areas = mesh.triangle_areas()
    if areas.sum() <= 0:
        raise EmptyMesh("mesh has zero area")
    rng = np.random.default_rng([seed, 4242])
    tri = rng.choice(len(areas), n_points, p=areas / areas.sum())
    r1, r2 = rng.random(n_points), rng.random(n_points)
    s = np.sqrt(r1)
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    return (1 - s)[:, None] * a + (s * (1 - r2))[:, None] * b + (s * r2)[:, None] * c


def _check(cloud, name):
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(cloud) == 0:
        raise EmptyCloud(f"{name} cloud is empty")
    return cloud


def nearest_distances(src, dst) -> np.ndarray:
    """Distance from every ``src`` point to its nearest ``dst`` point."""
    return cKDTree(dst).query(src, k=1)[0]


def f_score(pred, gt, threshold_mm: float) -> float:
    """Harmonic mean of precision and recall at ``threshold_mm``; clouds in meters."""
    pred, gt = _check(pred, "predicted"), _check(gt, "ground-truth")
    tau = threshold_mm / 1000.0
    precision = float(np.mean(nearest_distances(pred, gt) <= tau))
    recall = float(np.mean(nearest_distances(gt, pred) <= tau))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def chamfer(pred, gt) -> float:
    """Symmetric mean nearest-neighbor distance in millimeters."""
    pred, gt = _check(pred, "predicted"), _check(gt, "ground-truth")
    return 1000.0 * 0.5 * (nearest_distances(pred, gt).mean() + nearest_distances(gt, pred).mean())


@dataclass
class MeshScores:
    f5: float
    f10: float
    chamfer_mm: float | None


def mesh_scores(pred: TriangleMesh, gt: TriangleMesh, n_points: int = SURFACE_SAMPLES, seed: int = 0) -> MeshScores:
    """F-scores and Chamfer distance; an empty prediction scores 0 with no distance."""
    gt_pts = sample_surface(gt, n_points, seed)
    try:
        pred_pts = sample_surface(pred, n_points, seed + 1)
    except EmptyMesh:
        return MeshScores(0.0, 0.0, None)
    return MeshScores(f_score(pred_pts, gt_pts, 5.0), f_score(pred_pts, gt_pts, 10.0), chamfer(pred_pts, gt_pts))


@dataclass
class MetricReport:
    scene: str
    ablation: str
    psnr: float | None = None
    ssim: float | None = None
    iou: float | None = None
    mesh: dict = field(default_factory=dict)  # "w" / "o" / "h" -> MeshScores as dict
    runtime_s: float = 0.0
    error: str | None = None

    def records(self) -> list:
        """Flat (scene, ablation, metric, value) rows."""
        rows = []
        for name in ("psnr", "ssim", "iou"):
            rows.append((self.scene, self.ablation, name, getattr(self, name)))
        for part, scores in self.mesh.items():
            for key, label in (("f5", "F5"), ("f10", "F10"), ("chamfer_mm", "CD")):
                rows.append((self.scene, self.ablation, f"{label}_{part}", scores.get(key)))
        rows.append((self.scene, self.ablation, "runtime_s", self.runtime_s))
        if self.error:
            rows.append((self.scene, self.ablation, "error", self.error))
        return rows


def score_meshes(pred_whole, pred_hand, pred_object, gt_hand, gt_object, seed: int = 0) -> dict:
    gt_whole = concatenate([gt_hand, gt_object], "whole")
    return {"w": asdict(mesh_scores(pred_whole, gt_whole, seed=seed)),
            "o": asdict(mesh_scores(pred_object, gt_object, seed=seed)),
            "h": asdict(mesh_scores(pred_hand, gt_hand, seed=seed))}


def evaluate_scene(model, ds, input_view: int = 0, recon_margin: float = 0.06, voxel_size: float = 0.002,
                   sanitize: bool = True, n_samples: int | None = None, seed: int = 0, render: bool = True) -> MetricReport:
    """Render every other view from ``input_view``, reconstruct, and score."""
    from .model import condition
    from .pipeline import reconstruct_scene
    from .semantic_field import render_view

    start = time.perf_counter()
    report = MetricReport(str(ds.meta.get("grasp_id", "?")), model.mask.name)
    cond = condition(model, ds, input_view)
    n_samples = n_samples or model.config.samples_per_ray
    if render:
        vals = []
        for k, view in enumerate(ds.views):
            if k == input_view:
                continue
            rgb, probs, _, _ = render_view(model.head, cond, view.camera, n_samples)
            vals.append(image_metrics(rgb, view.image, probs.argmax(-1), view.mask))
        report.psnr, report.ssim, report.iou = (float(np.mean(v)) for v in zip(*vals))
    meshes = reconstruct_scene(model, ds, cond, recon_margin, voxel_size, sanitize)
    report.mesh = score_meshes(meshes["whole"], meshes["hand"], meshes["object"], ds.hand.as_mesh(),
                               ds.object_mesh, seed)
    report.runtime_s = time.perf_counter() - start
    return report


def run_benchmark(checkpoints: dict, test_datasets, **kwargs) -> list:
    """One report per (ablation, scene). A missing or broken checkpoint yields error rows only."""
    from .training import load_checkpoint

    reports = []
    for name, path in checkpoints.items():
        try:
            if path is None:
                raise FileNotFoundError(f"no checkpoint for {name}")
            model = path if not isinstance(path, (str, bytes)) and hasattr(path, "head") else load_checkpoint(path)[0]
        except (OSError, GraspFieldError, ValueError) as exc:
            for ds in test_datasets:
                reports.append(MetricReport(str(ds.meta.get("grasp_id", "?")), name, error=f"{type(exc).__name__}: {exc}"))
            continue
        model.eval()
        for ds in test_datasets:
            try:
                reports.append(evaluate_scene(model, ds, **kwargs))
            except GraspFieldError as exc:
                reports.append(MetricReport(str(ds.meta.get("grasp_id", "?")), name, error=f"{exc.code}: {exc}"))
    return reports


def format_reports(reports) -> str:
    """JSON lines, one record per scene x ablation x metric."""
    lines = []
    for r in reports:
        for scene, abl, metric, value in r.records():
            lines.append(json.dumps({"scene": scene, "ablation": abl, "metric": metric, "value": value}))
    return "\n".join(lines) + "\n"


def summary_table(reports) -> str:
    cols = ["psnr", "ssim", "iou", "F5_w", "F10_w", "CD_w", "F5_o", "F10_o", "CD_o", "F5_h", "F10_h", "CD_h"]
    out = ["ablation scene " + " ".join(cols)]
    for r in reports:
        vals = {m: v for _, _, m, v in r.records()}
        cells = []
        for c in cols:
            v = vals.get(c)
            cells.append("-" if v is None or isinstance(v, str) else f"{v:.3f}")
        line = f"{r.ablation} {r.scene} " + " ".join(cells)
        if r.error:
            line += f"  error={r.error}"
        out.append(line)
    return "\n".join(out) + "\n"
