"""Closed-form hand-object relative pose from two keypoint triples.

Three object keypoints are first adjusted so the (wrist, functional, little)
contact triangle is congruent to the calibrated hand triangle, staying in the
plane of the originals. Orthonormal frames are then built on both triples
(x along wrist->functional, z along the plane normal), and the relative pose
is the hand frame expressed in object-frame coordinates.

All functions are pure; collinearity is rejected when the cross-product norm
of the spanning edges drops to 1e-8 or below (squared meters).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError, InvalidModelError

COLLINEARITY_EPS = 1e-8


@dataclass(frozen=True)
class HandModel:
    """Calibrated hand triangle edge lengths in meters."""

    wrist_to_functional: float
    wrist_to_little: float
    functional_to_little: float
    functional_finger: str = "index"

    def __post_init__(self):
        a, b, c = self.wrist_to_functional, self.wrist_to_little, self.functional_to_little
        if min(a, b, c) <= 0:
            raise InvalidModelError("hand triangle lengths must be positive")
        if a + b <= c or a + c <= b or b + c <= a:
            raise InvalidModelError("hand triangle lengths violate the strict triangle inequality")
        if self.functional_finger not in ("index", "thumb"):
            raise InvalidModelError(f"functional finger must be 'index' or 'thumb', got {self.functional_finger!r}")


@dataclass(frozen=True)
class Frame:
    origin: np.ndarray
    rotation: np.ndarray  # columns are the x, y, z axes


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray


@dataclass(frozen=True)
class AdjustedContacts:
    """Contact targets in the original plane, ordered to match the hand keypoints."""

    functional: np.ndarray
    little: np.ndarray
    wrist: np.ndarray


def _point(p, name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise InvalidArgumentError(f"{name} must be a 3-vector")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite coordinates")
    return arr


def adjust_keypoints(k0, k1, k2, hand: HandModel) -> AdjustedContacts:
    """Fit the hand triangle into the plane of (k0, k1, k2).

    k0 anchors the wrist; the functional contact sits along k0->k1 at the
    calibrated wrist-functional length; the little contact lands on k2's side
    of that axis so all three side lengths match the hand model.
    """
    p0 = _point(k0, "k0")
    p1 = _point(k1, "k1")
    p2 = _point(k2, "k2")
    edge1 = p1 - p0
    edge2 = p2 - p0
    normal = np.cross(edge1, edge2)
    if np.linalg.norm(normal) <= COLLINEARITY_EPS:
        raise DegenerateGeometryError("object keypoints are collinear", stage="adjust_keypoints")
    u = edge1 / np.linalg.norm(edge1)
    v = np.cross(normal, u)
    v = v / np.linalg.norm(v)  # in-plane, orthogonal to u, on k2's side
    lwf = hand.wrist_to_functional
    lwl = hand.wrist_to_little
    lfl = hand.functional_to_little
    along = (lwl * lwl + lwf * lwf - lfl * lfl) / (2.0 * lwf)
    across = np.sqrt(lwl * lwl - along * along)
    return AdjustedContacts(
        functional=p0 + lwf * u,
        little=p0 + along * u + across * v,
        wrist=p0.copy(),
    )


def build_frame(origin, f, l) -> Frame:
    """Orthonormal frame: x along origin->f, z along the (f, l) plane normal."""
    o = _point(origin, "origin")
    pf = _point(f, "f")
    pl = _point(l, "l")
    ef = pf - o
    el = pl - o
    cross = np.cross(ef, el)
    if np.linalg.norm(cross) <= COLLINEARITY_EPS:
        raise DegenerateGeometryError("frame points are collinear", stage="build_frame")
    x = ef / np.linalg.norm(ef)
    z = cross / np.linalg.norm(cross)
    y = np.cross(z, x)
    return Frame(origin=o, rotation=np.column_stack((x, y, z)))


def relative_pose(object_pts: Sequence, hand_pts: Sequence) -> RigidTransform:
    """Hand frame expressed in object-frame coordinates.

    `object_pts` and `hand_pts` are (wrist, functional, little) triples; the
    rotation is R_obj^T R_hand and the translation R_obj^T (W - W_obj).
    """
    w_o, f_o, l_o = object_pts
    w_h, f_h, l_h = hand_pts
    try:
        obj = build_frame(w_o, f_o, l_o)
    except DegenerateGeometryError as exc:
        raise DegenerateGeometryError(str(exc), stage="object_frame") from exc
    try:
        hand = build_frame(w_h, f_h, l_h)
    except DegenerateGeometryError as exc:
        raise DegenerateGeometryError(str(exc), stage="hand_frame") from exc
    rotation = obj.rotation.T @ hand.rotation
    translation = obj.rotation.T @ (_point(w_h, "wrist") - obj.origin)
    return RigidTransform(rotation=rotation, translation=translation)


def canonical_hand_points(hand: HandModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(wrist, functional, little) laid flat: wrist at origin, functional on +x."""
    lwf = hand.wrist_to_functional
    lwl = hand.wrist_to_little
    lfl = hand.functional_to_little
    along = (lwl * lwl + lwf * lwf - lfl * lfl) / (2.0 * lwf)
    across = np.sqrt(lwl * lwl - along * along)
    return (
        np.zeros(3),
        np.array([lwf, 0.0, 0.0]),
        np.array([along, across, 0.0]),
    )


def grasp_pose_for_execution(object_kps: Sequence, hand: HandModel, current_hand_pts: Sequence) -> RigidTransform:
    """Adjust the object keypoints to the hand triangle, then solve the relative pose."""
    k0, k1, k2 = object_kps
    contacts = adjust_keypoints(k0, k1, k2, hand)
    return relative_pose(
        (contacts.wrist, contacts.functional, contacts.little),
        tuple(current_hand_pts),
    )


def alignment_map(pose: RigidTransform, object_frame: Frame):
    """World-space rigid map that drives the posed hand onto the object frame.

    Reconstructs the hand frame from the relative pose, then returns f(p)
    moving hand-frame coordinates onto the object frame. With an exact pose,
    f sends each hand keypoint to its adjusted contact point.
    """
    r_obj = object_frame.rotation
    r_hand = r_obj @ pose.rotation
    w_hand = r_obj @ pose.translation + object_frame.origin

    def apply(p: np.ndarray) -> np.ndarray:
        return r_obj @ (r_hand.T @ (np.asarray(p, dtype=np.float64) - w_hand)) + object_frame.origin

    return apply
