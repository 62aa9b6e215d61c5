import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graspfield.errors import GraspInfeasible, JointLimit
from graspfield.geometry import Camera
from graspfield.mesh import (box_mesh, concatenate, icosphere, mesh_stats, point_mesh_distance, point_triangle_distance,
                             read_obj, write_obj)
from graspfield.synthetic.dataset import (BACKGROUND_LABEL, HAND_LABEL, OBJECT_LABEL, make_dataset, read_dataset,
                                          render_ground_truth, write_dataset)
from graspfield.synthetic.grasp import GRASPS, generate_grasp_scene
from graspfield.synthetic.hand import JOINT_LIMITS, N_POSE, generate_hand
from graspfield.synthetic.objects import ObjectSpec, object_mesh, signed_distance
from graspfield.synthetic.raytrace import intersect


def test_primitive_meshes_are_closed():
    for mesh in (box_mesh((-1, -1, -1), (1, 2, 3), (2, 3, 1)), icosphere(0.5, 2)):
        stats = mesh_stats(mesh)
        assert stats.euler == 2 and stats.boundary_edges == 0
        n = mesh.face_normals()
        outward = np.einsum("ij,ij->i", n, mesh.centroids() - mesh.vertices.mean(axis=0))
        assert np.all(outward > 0)


def test_obj_round_trip(tmp_path):
    mesh = icosphere(0.1, 1)
    write_obj(mesh, tmp_path / "m.obj")
    back = read_obj(tmp_path / "m.obj")
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.allclose(back.vertices, mesh.vertices)


def test_point_triangle_distance_against_dense_sampling(rng):
    a, b, c = rng.standard_normal((3, 3))
    pts = rng.standard_normal((20, 3))
    w = rng.dirichlet(np.ones(3), 200_000)
    samples = w @ np.stack([a, b, c])
    brute = np.linalg.norm(pts[:, None] - samples[None], axis=-1).min(axis=1)
    exact = point_triangle_distance(pts, a[None], b[None], c[None])[:, 0]
    assert np.all(exact <= brute + 1e-12)
    assert np.allclose(exact, brute, atol=2e-2)


def test_concatenate_offsets_indices():
    a, b = icosphere(1.0, 0), box_mesh((0, 0, 0), (1, 1, 1))
    m = concatenate([a, b])
    assert len(m.vertices) == len(a.vertices) + len(b.vertices)
    assert m.triangles.max() == len(m.vertices) - 1


def test_hand_topology_is_pose_independent(rng):
    lo, hi = JOINT_LIMITS.T
    h0 = generate_hand(np.zeros(N_POSE))
    h1 = generate_hand(rng.uniform(lo, hi), seed=3)
    assert np.array_equal(h0.faces, h1.faces)
    assert np.array_equal(h0.face_part, h1.face_part)
    assert h0.n_faces == h1.n_faces
    with pytest.raises(JointLimit):
        generate_hand(hi + 0.1)
    with pytest.raises(JointLimit):
        generate_hand(np.zeros(5))


def test_object_sdf_sign(rng):
    spec = ObjectSpec("box", (0.04, 0.03, 0.02), translation=np.array([0.1, 0.0, 0.0]))
    assert signed_distance(spec, [[0.1, 0.0, 0.0]])[0] < 0
    mesh = object_mesh(spec)
    assert np.allclose(signed_distance(spec, mesh.vertices), 0.0, atol=1e-9)


def test_intersect_hits_sphere_at_analytic_depth():
    mesh = icosphere(1.0, 4)
    o = np.array([[0.0, 0.0, -3.0], [0.0, 3.0, -3.0]])
    d = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    t, tri = intersect(o, d, mesh.vertices, mesh.triangles)[:2]
    assert abs(t[0] - 2.0) < 2e-3
    assert tri[1] < 0 and not np.isfinite(t[1])


def test_grasp_scene_contacts_without_penetration(sphere_scene):
    spec = sphere_scene.object_spec
    assert len(sphere_scene.contacts) >= 2
    assert signed_distance(spec, sphere_scene.hand.vertices).min() > -2e-3


def test_oversized_object_is_infeasible():
    with pytest.raises(GraspInfeasible):
        generate_grasp_scene(ObjectSpec("sphere", (0.08,)), 1)


@pytest.mark.parametrize("grasp_id", range(len(GRASPS)))
def test_every_grasp_family_fits_the_default_sphere(grasp_id):
    scene = generate_grasp_scene(ObjectSpec("sphere", (0.035,)), grasp_id, seed=1)
    assert scene.grasp_id == grasp_id


def test_ground_truth_labels(sphere_scene):
    cam = Camera.look_at(sphere_scene.centroid() + np.array([0, -0.4, 0]), sphere_scene.centroid(), (0, 0, 1),
                         60.0, 32, 32)
    image, mask, depth = render_ground_truth(sphere_scene, cam)
    assert image.shape == (32, 32, 3) and mask.shape == (32, 32)
    assert set(np.unique(mask)) <= {BACKGROUND_LABEL, HAND_LABEL, OBJECT_LABEL}
    assert np.any(mask == HAND_LABEL) and np.any(mask == OBJECT_LABEL)
    bg = mask == BACKGROUND_LABEL
    assert np.allclose(image[bg], sphere_scene.background)
    assert np.all(np.isinf(depth[bg])) or np.all(depth[bg] <= 0)
    empty_img, empty_mask, _ = render_ground_truth(None, cam)
    assert np.all(empty_mask == 0)


def test_dataset_round_trip(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path / "s")
    back = read_dataset(tmp_path / "s")
    assert len(back.views) == len(small_dataset.views)
    for a, b in zip(back.views, small_dataset.views):
        assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
        assert np.allclose(a.camera.intrinsics, b.camera.intrinsics)
        assert np.allclose(a.camera.rotation, b.camera.rotation)
    assert np.array_equal(back.hand.vertices, small_dataset.hand.vertices)
    assert np.array_equal(back.hand.faces, small_dataset.hand.faces)


def test_dataset_is_deterministic(sphere_scene, small_dataset):
    again = make_dataset(sphere_scene, n_views=3, resolution=24, seed=0)
    for a, b in zip(again.views, small_dataset.views):
        assert np.array_equal(a.image, b.image)
