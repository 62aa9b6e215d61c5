"""Grasp scenes: place an object against the hand and close the fingers on it.

Finger closing follows the usual auto-grasp rule: all joints of a finger
flex together at fixed ratios; when a segment touches the object (or another
part of the hand) the joints proximal to it freeze and the remaining distal
joints keep closing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import GraspInfeasible
from ..mesh import TriangleMesh
from . import objects
from .hand import JOINT_LIMITS, HandMesh, adjacent_parts, box_signed_distance, generate_hand

CONTACT_THRESHOLD = 0.005  # fingertip segment counts as touching within this distance
PENETRATION_TOLERANCE = 0.002
TOUCH_DISTANCE = 0.001  # closing stops at this clearance
HAND_ALBEDO = (0.87, 0.65, 0.52)
BACKGROUND = (0.12, 0.14, 0.18)


@dataclass(frozen=True)
class GraspFamily:
    name: str
    opposition: float
    anchor: tuple  # hand-frame point the object rests against
    approach: tuple  # direction from anchor toward the object center
    ratios: tuple  # per finger (thumb..little), per joint flexion ratio
    caps: tuple  # per finger, max closing parameter (radians of the leading joint)
    max_aperture: float


_WRAP = (1.0, 1.0, 0.9)
GRASPS = (
    GraspFamily("power", 0.7, (0.0, -0.030, 0.0), (0.0, 0.25, -1.0),
                ((1.0, 1.0, 1.0),) + (_WRAP,) * 4, (0.8, 1.6, 1.6, 1.6, 1.6), 0.12),
    GraspFamily("pinch", 1.0, (-0.022, 0.040, -0.010), (0.0, 0.3, -1.0),
                ((1.0, 1.0, 1.0), (0.8, 1.0, 0.6), _WRAP, _WRAP, _WRAP), (0.8, 1.6, 0.6, 0.6, 0.6), 0.09),
    GraspFamily("tripod", 1.0, (-0.012, 0.045, -0.010), (0.0, 0.3, -1.0),
                ((1.0, 1.0, 1.0), (0.8, 1.0, 0.6), (0.8, 1.0, 0.6), _WRAP, _WRAP), (0.8, 1.6, 1.6, 0.6, 0.6), 0.09),
    GraspFamily("precision", 0.9, (0.0, 0.050, -0.010), (0.0, 0.3, -1.0),
                ((1.0, 1.0, 1.0),) + ((0.7, 0.9, 0.6),) * 4, (0.8, 1.6, 1.6, 1.6, 1.6), 0.11),
    GraspFamily("hook", 0.0, (0.0, 0.020, 0.0), (0.0, 0.0, -1.0),
                ((1.0, 1.0, 1.0),) + ((0.1, 1.0, 0.9),) * 4, (0.0, 1.6, 1.6, 1.6, 1.6), 0.10),
)


@dataclass
class Scene:
    hand: HandMesh
    object_spec: objects.ObjectSpec
    object_mesh: TriangleMesh
    grasp_id: int
    background: tuple = BACKGROUND
    hand_albedo: tuple = HAND_ALBEDO
    contacts: list = field(default_factory=list)  # finger names touching the object
    rig_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # hand frame to world
    rig_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    seed: int = 0

    def centroid(self) -> np.ndarray:
        """Center of the axis-aligned box around hand and object."""
        pts = np.concatenate([self.hand.vertices, self.object_mesh.vertices])
        return (pts.min(axis=0) + pts.max(axis=0)) / 2


def _finger_parts(finger: int):
    return [1 + 3 * finger + k for k in range(3)]


def _clearance(hand: HandMesh, parts, spec) -> float:
    pts = np.concatenate([hand.part_points(p) for p in parts])
    return float(objects.signed_distance(spec, pts).min())


def _self_clearance(hand: HandMesh, part: int) -> float:
    pts = hand.part_points(part)
    d = [box_signed_distance(pts, hand.part_transforms[q], hand.part_dims[q], q).min()
         for q in range(16) if q != part and not adjacent_parts(part, q) and (q - 1) // 3 != (part - 1) // 3]
    return float(min(d))


def _close_finger(pose, finger, family, spec, seed, step=0.02):
    """Close one finger on the object; returns the updated pose."""
    pose = pose.copy()
    joints = [1 + k if finger == 0 else 4 + 3 * (finger - 1) + k for k in range(3)]
    ratios = np.asarray(family.ratios[finger])
    parts = _finger_parts(finger)
    first = 0
    travel = 0.0

    def blocked(p, active_from):
        hand = generate_hand(p, seed)
        for k in range(active_from, 3):
            if _clearance(hand, [parts[k]], spec) < TOUCH_DISTANCE:
                return k
            if finger == 0 and _self_clearance(hand, parts[k]) < TOUCH_DISTANCE:
                return k
        return None

    while first < 3 and travel < family.caps[finger]:
        trial = pose.copy()
        for k in range(first, 3):
            j = joints[k]
            trial[j] = np.clip(pose[j] + step * ratios[k], JOINT_LIMITS[j, 0], JOINT_LIMITS[j, 1])
        if np.allclose(trial, pose):
            break
        hit = blocked(trial, first)
        if hit is None:
            pose = trial
            travel += step
            continue
        lo, hi = 0.0, 1.0  # bisect the step to land just short of contact
        for _ in range(8):
            mid = (lo + hi) / 2
            probe = pose + mid * (trial - pose)
            if blocked(probe, first) is None:
                lo = mid
            else:
                hi = mid
        pose = pose + lo * (trial - pose)
        first = hit + 1
    return pose


def generate_grasp_scene(object_spec: objects.ObjectSpec, grasp_id: int, seed: int = 0) -> Scene:
    if not 0 <= grasp_id < len(GRASPS):
        raise ValueError(f"grasp_id must be in [0, {len(GRASPS)}), got {grasp_id}")
    family = GRASPS[grasp_id]
    if 2 * objects.bounding_radius(object_spec) > family.max_aperture:
        raise GraspInfeasible(f"object too large for a {family.name} grasp")
    rng = np.random.default_rng([seed, grasp_id])

    pose = np.zeros(16)
    pose[0] = family.opposition
    open_hand = generate_hand(pose, seed)
    approach = np.asarray(family.approach, dtype=np.float64)
    approach /= np.linalg.norm(approach)
    anchor = np.asarray(family.anchor) + rng.uniform(-0.003, 0.003, 3)
    local_rot = object_spec.rotation
    reach = objects.support(object_spec.posed(local_rot, np.zeros(3)), -approach)
    center = anchor + (reach + 0.0015) * approach + object_spec.translation
    spec = object_spec.posed(local_rot, center)
    for _ in range(40):
        gap = _clearance(open_hand, range(16), spec)
        if gap >= 0.0015:
            break
        spec = spec.posed(local_rot, spec.translation + (0.0015 - gap + 1e-4) * approach)
    else:
        raise GraspInfeasible("could not clear the open hand")

    for finger in (1, 2, 3, 4, 0):
        pose = _close_finger(pose, finger, family, spec, seed)
    hand = generate_hand(pose, seed)

    if _clearance(hand, range(16), spec) < -PENETRATION_TOLERANCE:
        raise GraspInfeasible("hand penetrates the object")
    fingers = ("thumb", "index", "middle", "ring", "little")
    contacts = [fingers[f] for f in range(5) if _clearance(hand, [_finger_parts(f)[2]], spec) <= CONTACT_THRESHOLD]
    if len(contacts) < 2:
        raise GraspInfeasible(f"{family.name} grasp reached only {len(contacts)} fingertip contacts")

    rot = Rotation.from_euler("zyx", [rng.uniform(0, 2 * np.pi), rng.uniform(-0.35, 0.35),
                                      rng.uniform(-0.35, 0.35)]).as_matrix()
    shift = rng.uniform(-0.02, 0.02, 3)
    world_spec = spec.posed(rot @ spec.rotation, rot @ spec.translation + shift)
    return Scene(hand.transformed(rot, shift), world_spec, objects.object_mesh(world_spec), grasp_id,
                 contacts=contacts, rig_rotation=rot, rig_translation=shift, seed=seed)
