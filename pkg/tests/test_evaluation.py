import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from graspfield.errors import EmptyCloud, EmptyMesh, ShapeMismatch
from graspfield.evaluation import (MetricReport, chamfer, f_score, format_reports, image_metrics, mesh_scores, psnr,
                                   run_benchmark, sample_surface, semantic_iou, ssim, summary_table)
from graspfield.mesh import TriangleMesh, icosphere

from oracles import brute_chamfer, brute_f_score


def test_identity_images():
    img = np.random.default_rng(0).random((16, 16, 3))
    lab = np.random.default_rng(1).integers(0, 3, (16, 16))
    assert image_metrics(img, img, lab, lab) == (99.0, 1.0, 1.0)


def test_constant_offset_psnr():
    gt = np.full((8, 8, 3), 0.4)
    assert psnr(gt + 0.1, gt) == pytest.approx(20.0)


def test_ssim_matches_reference_implementation(rng):
    a = rng.random((20, 24, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    ref = structural_similarity(a, b, win_size=7, data_range=1.0, channel_axis=-1, use_sample_covariance=True)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-12)


def test_iou_cases():
    gt = np.array([[1, 1, 2, 0]])
    assert semantic_iou(np.array([[0, 0, 2, 0]]), gt) == pytest.approx(0.5)  # hand 0, object 1
    assert semantic_iou(np.array([[1, 2, 2, 0]]), gt) == pytest.approx((0.5 + 0.5) / 2)
    with pytest.raises(ShapeMismatch):
        image_metrics(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), gt, gt)


def test_sample_surface_properties():
    tri = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0]], float), np.array([[0, 1, 2]]))
    pts = sample_surface(tri, 3, seed=4)
    assert pts.shape == (3, 3)
    assert np.all(pts[:, 2] == 0) and np.all(pts[:, :2] >= 0) and np.all(pts[:, 0] + pts[:, 1] / 2 <= 1 + 1e-12)
    assert np.array_equal(sample_surface(tri, 50, 7), sample_surface(tri, 50, 7))
    sphere = icosphere(0.05, 3).transformed(np.eye(3), [0.1, 0.2, 0.3])
    assert np.linalg.norm(sample_surface(sphere, 10_000, 0).mean(axis=0) - [0.1, 0.2, 0.3]) < 1e-3
    with pytest.raises(EmptyMesh):
        sample_surface(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 60), st.integers(1, 60), st.floats(1.0, 30.0))
def test_point_metrics_match_brute_force(seed, n, m, tau):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 0.05, (n, 3)), rng.uniform(0, 0.05, (m, 3))
    assert f_score(a, b, tau) == brute_f_score(a, b, tau)
    assert chamfer(a, b) == pytest.approx(brute_chamfer(a, b), abs=1e-9)
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-12)
    assert f_score(a, b, tau) == pytest.approx(f_score(b, a, tau), abs=1e-12)


def test_point_metric_edge_cases():
    a = np.random.default_rng(0).random((30, 3))
    assert f_score(a, a, 1.0) == 1.0 and chamfer(a, a) == 0.0
    assert f_score(a, a + 0.1, 10.0) == 0.0
    assert chamfer([[0, 0, 0]], [[0.003, 0, 0]]) == pytest.approx(3.0)
    with pytest.raises(EmptyCloud):
        chamfer(np.zeros((0, 3)), a)
    with pytest.raises(EmptyCloud):
        f_score(a, np.zeros((0, 3)), 5)


def test_ground_truth_against_itself():
    mesh = icosphere(0.04, 2)
    s = mesh_scores(mesh, mesh)
    assert s.f5 == 1.0 and s.f10 == 1.0
    assert s.chamfer_mm < 1.0  # two independent samplings of one surface
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
    assert mesh_scores(empty, mesh).f10 == 0.0


def test_benchmark_reports_missing_checkpoint_per_row(small_dataset, tmp_path):
    reports = run_benchmark({"M2": None, "M5": str(tmp_path / "nope.ckpt")}, [small_dataset])
    assert len(reports) == 2 and all(r.error for r in reports)
    text = format_reports(reports)
    assert '"metric": "error"' in text
    assert "M5" in summary_table(reports)


def test_report_records_have_class_subscripts():
    r = MetricReport("0", "M5", 20.0, 0.8, 0.5, {p: {"f5": 0.1, "f10": 0.2, "chamfer_mm": 3.0} for p in "woh"})
    names = {m for _, _, m, _ in r.records()}
    assert {"F5_w", "F10_o", "CD_h", "psnr", "ssim", "iou"} <= names
