"""Procedural articulated hand with a fixed triangle topology.

The hand is a palm block plus five three-segment fingers, all boxes. Every
segment hinges about the palmar edge of its parent, so flexion within the
joint limits never folds one box into its neighbour. Box sides are split into
a quad lattice whose resolution depends only on the rest dimensions; the
face count and face ordering are therefore identical for every pose, and
face ``i`` always lies on the same part of the same finger.

Hand frame: x across the palm (thumb side negative), y from wrist to
fingertips, z out of the back of the hand. The palmar side faces -z.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import JointLimit
from ..mesh import TriangleMesh, box_mesh

FINGERS = ("thumb", "index", "middle", "ring", "little")
PART_NAMES = ("palm",) + tuple(f"{f}{k}" for f in FINGERS for k in (1, 2, 3))
N_POSE = 16  # thumb opposition + 3 flexion angles per finger

# (low, high) radians; index 0 is thumb opposition in [0, 1] (unitless blend)
JOINT_LIMITS = np.array(
    [(0.0, 1.0), (0.0, 0.8), (0.0, 1.0), (0.0, 1.2)]
    + [(0.0, 1.5708), (0.0, 1.5708), (0.0, 1.3)] * 4
)

PALM = ((-0.042, -0.090, 0.0), (0.042, 0.0, 0.024))
FINGER_X = (-0.0315, -0.0105, 0.0105, 0.0315)
FINGER_LENGTHS = ((0.040, 0.025, 0.020), (0.044, 0.028, 0.021), (0.041, 0.026, 0.020), (0.033, 0.020, 0.018))
FINGER_WIDTH = (0.017, 0.017, 0.017, 0.015)
THUMB_LENGTHS = (0.040, 0.032, 0.026)
THUMB_WIDTH, THUMB_THICKNESS = 0.020, 0.018
THUMB_BASE = np.array([-0.040, -0.062, 0.004])
GRASP_CENTER = np.array([0.0, 0.010, -0.045])
LATTICE = 0.015  # target quad size on box sides


@dataclass
class HandMesh:
    vertices: np.ndarray
    faces: np.ndarray
    pose_params: np.ndarray
    face_part: np.ndarray  # part index (into PART_NAMES) of every face
    part_transforms: np.ndarray  # (16, 4, 4) part-to-world
    part_dims: np.ndarray  # (16, 3) box extents (width, length, thickness)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def as_mesh(self) -> TriangleMesh:
        return TriangleMesh(self.vertices, self.faces, "hand")

    def part_points(self, part: int) -> np.ndarray:
        """Vertices and face centroids of one part (surface samples)."""
        faces = self.faces[self.face_part == part]
        return np.concatenate([self.vertices[np.unique(faces)], self.vertices[faces].mean(axis=1)])

    def transformed(self, rotation, translation) -> "HandMesh":
        rotation = np.asarray(rotation, dtype=np.float64)
        translation = np.asarray(translation, dtype=np.float64)
        rig = np.eye(4)
        rig[:3, :3], rig[:3, 3] = rotation, translation
        return HandMesh(self.vertices @ rotation.T + translation, self.faces.copy(), self.pose_params.copy(),
                        self.face_part.copy(), rig @ self.part_transforms, self.part_dims.copy())


def parent_of(part: int) -> int:
    """Kinematic parent (palm is its own root, returns -1)."""
    if part == 0:
        return -1
    return 0 if (part - 1) % 3 == 0 else part - 1


def adjacent_parts(a: int, b: int) -> bool:
    return parent_of(a) == b or parent_of(b) == a


def _rot_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _frame(rotation, origin):
    m = np.eye(4)
    m[:3, :3], m[:3, 3] = rotation, origin
    return m


def _thumb_base(opposition: float) -> np.ndarray:
    y = (1 - opposition) * np.array([-0.64, 0.77, 0.0]) + opposition * np.array([0.15, 0.60, -0.78])
    y /= np.linalg.norm(y)
    toward = GRASP_CENTER - THUMB_BASE
    flex = (1 - opposition) * np.array([0.0, 0.0, -1.0]) + opposition * toward / np.linalg.norm(toward)
    flex -= flex.dot(y) * y
    z = -flex / np.linalg.norm(flex)
    x = np.cross(y, z)
    return _frame(np.stack([x, y, z], axis=1), THUMB_BASE)


def _divisions(dims):
    return tuple(max(1, int(np.ceil(d / LATTICE - 1e-9))) for d in dims)


@lru_cache(maxsize=1)
def _rest_boxes():
    boxes = [box_mesh(PALM[0], PALM[1], _divisions(np.subtract(PALM[1], PALM[0])))]
    chains = [(THUMB_LENGTHS, THUMB_WIDTH, THUMB_THICKNESS)]
    chains += [(FINGER_LENGTHS[f], FINGER_WIDTH[f], FINGER_WIDTH[f]) for f in range(4)]
    for lengths, width, thick in chains:
        for length in lengths:
            d = (width, length, thick)
            boxes.append(box_mesh((-width / 2, 0.0, 0.0), d, _divisions(d)))
    return boxes


def check_pose(pose_params) -> np.ndarray:
    pose = np.asarray(pose_params, dtype=np.float64).reshape(-1)
    if pose.shape != (N_POSE,):
        raise JointLimit(f"expected {N_POSE} pose parameters, got {pose.size}")
    bad = np.flatnonzero((pose < JOINT_LIMITS[:, 0] - 1e-12) | (pose > JOINT_LIMITS[:, 1] + 1e-12))
    if len(bad):
        raise JointLimit(f"pose parameter {int(bad[0])} = {pose[bad[0]]:.4f} outside {tuple(JOINT_LIMITS[bad[0]])}")
    return pose


def hand_scale(seed: int) -> float:
    """Per-seed global size factor in [0.97, 1.03]."""
    return float(0.97 + 0.06 * np.random.default_rng([seed, 7919]).random())


def generate_hand(pose_params, seed: int = 0) -> HandMesh:
    pose = check_pose(pose_params)
    scale = hand_scale(seed)

    transforms, dims = [], []
    lo, hi = np.array(PALM[0]), np.array(PALM[1])
    transforms.append(np.eye(4))
    dims.append(hi - lo)

    chains = [(_thumb_base(pose[0]), THUMB_LENGTHS, THUMB_WIDTH, THUMB_THICKNESS, pose[1:4])]
    for f in range(4):
        base = _frame(np.eye(3), (FINGER_X[f], 0.0, 0.0))
        chains.append((base, FINGER_LENGTHS[f], FINGER_WIDTH[f], FINGER_WIDTH[f], pose[4 + 3 * f:7 + 3 * f]))
    for base, lengths, width, thick, flex in chains:
        frame = base
        for k in range(3):
            frame = frame @ _frame(_rot_x(-flex[k]), (0.0, 0.0, 0.0))
            transforms.append(frame.copy())
            dims.append(np.array([width, lengths[k], thick]))
            frame = frame @ _frame(np.eye(3), (0.0, lengths[k], 0.0))

    verts, faces, face_part, offset = [], [], [], 0
    for part, (m, box) in enumerate(zip(transforms, _rest_boxes())):
        verts.append(box.vertices @ m[:3, :3].T + m[:3, 3])
        faces.append(box.triangles + offset)
        face_part.append(np.full(len(box.triangles), part))
        offset += len(box.vertices)

    transforms = np.stack(transforms)
    transforms[:, :3, 3] *= scale
    return HandMesh(np.concatenate(verts) * scale, np.concatenate(faces), pose,
                    np.concatenate(face_part), transforms, np.stack(dims) * scale)


def box_signed_distance(points, transform, dims, part: int) -> np.ndarray:
    """Exact signed distance to one hand part (negative inside)."""
    local = (np.asarray(points) - transform[:3, 3]) @ transform[:3, :3]
    if part == 0:
        center = np.zeros(3) + (np.array(PALM[0]) + np.array(PALM[1])) / 2 * (dims[0] / (PALM[1][0] - PALM[0][0]))
    else:
        center = np.array([0.0, dims[1] / 2, dims[2] / 2])
    q = np.abs(local - center) - dims / 2
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside
