import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from keygrasp import kgt
from keygrasp.errors import DegenerateGeometryError, InvalidModelError
from keygrasp.kgt import (
    HandModel,
    adjust_keypoints,
    alignment_map,
    build_frame,
    canonical_hand_points,
    grasp_pose_for_execution,
    relative_pose,
)

RIGHT_TRIANGLE = HandModel(
    wrist_to_functional=1.0, wrist_to_little=1.0, functional_to_little=np.sqrt(2.0)
)

INSPIRE_LIKE = HandModel(
    wrist_to_functional=0.17, wrist_to_little=0.12, functional_to_little=0.11
)


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def assert_rotation(r, tol=1e-9):
    assert np.linalg.norm(r.T @ r - np.eye(3)) < tol
    assert abs(np.linalg.det(r) - 1.0) < tol


class TestHandModel:
    def test_triangle_inequality_enforced(self):
        with pytest.raises(InvalidModelError):
            HandModel(wrist_to_functional=1.0, wrist_to_little=1.0, functional_to_little=2.0)
        with pytest.raises(InvalidModelError):
            HandModel(wrist_to_functional=-0.1, wrist_to_little=1.0, functional_to_little=1.0)

    def test_functional_finger_choice_validated(self):
        with pytest.raises(InvalidModelError):
            HandModel(0.17, 0.12, 0.11, functional_finger="pinky")
        assert HandModel(0.17, 0.12, 0.11, functional_finger="thumb").functional_finger == "thumb"


class TestAdjustKeypoints:
    def test_fixpoint_when_already_congruent(self):
        w, f, l = canonical_hand_points(INSPIRE_LIKE)
        shift = np.array([0.4, -0.2, 0.9])
        contacts = adjust_keypoints(w + shift, f + shift, l + shift, INSPIRE_LIKE)
        assert np.abs(contacts.wrist - (w + shift)).max() < 1e-9
        assert np.abs(contacts.functional - (f + shift)).max() < 1e-9
        assert np.abs(contacts.little - (l + shift)).max() < 1e-9

    def test_planar_congruence_solved_by_hand(self):
        contacts = adjust_keypoints(
            np.zeros(3), np.array([2.0, 0, 0]), np.array([0, 2.0, 0]), RIGHT_TRIANGLE
        )
        assert np.abs(contacts.functional - [1.0, 0.0, 0.0]).max() < 1e-12
        assert np.abs(contacts.little - [0.0, 1.0, 0.0]).max() < 1e-12
        assert np.abs(contacts.wrist).max() == 0.0

    def test_collinear_rejected(self):
        with pytest.raises(DegenerateGeometryError) as err:
            adjust_keypoints(np.zeros(3), np.array([1.0, 0, 0]), np.array([2.0, 0, 0]), RIGHT_TRIANGLE)
        assert err.value.stage == "adjust_keypoints"

    @given(st.integers(0, 2**32 - 1))
    def test_output_triangle_matches_hand_and_plane(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-0.3, 0.3, (3, 3))
        normal = np.cross(pts[1] - pts[0], pts[2] - pts[0])
        if np.linalg.norm(normal) <= 1e-4:
            return
        contacts = adjust_keypoints(pts[0], pts[1], pts[2], INSPIRE_LIKE)
        assert np.linalg.norm(contacts.functional - contacts.wrist) == pytest.approx(
            INSPIRE_LIKE.wrist_to_functional, abs=1e-9
        )
        assert np.linalg.norm(contacts.little - contacts.wrist) == pytest.approx(
            INSPIRE_LIKE.wrist_to_little, abs=1e-9
        )
        assert np.linalg.norm(contacts.little - contacts.functional) == pytest.approx(
            INSPIRE_LIKE.functional_to_little, abs=1e-9
        )
        unit = normal / np.linalg.norm(normal)
        for p in (contacts.functional, contacts.little):
            assert abs(unit @ (p - pts[0])) < 1e-9


class TestBuildFrame:
    def test_canonical_frame_is_identity(self):
        frame = build_frame(np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
        assert np.abs(frame.rotation - np.eye(3)).max() < 1e-12

    def test_quarter_turn_about_z(self):
        frame = build_frame(np.zeros(3), np.array([0, 1.0, 0]), np.array([-1.0, 0, 0]))
        expected = np.column_stack(([0, 1, 0], [-1, 0, 0], [0, 0, 1.0]))
        assert np.abs(frame.rotation - expected).max() < 1e-12

    def test_parallel_points_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            build_frame(np.zeros(3), np.array([1.0, 1.0, 0]), np.array([2.0, 2.0, 0]))

    def test_rotation_valid_and_scale_covariant_100_cases(self):
        rng = np.random.default_rng(20240817)
        checked = 0
        while checked < 100:
            origin = rng.standard_normal(3)
            f = origin + rng.standard_normal(3)
            l = origin + rng.standard_normal(3)
            if np.linalg.norm(np.cross(f - origin, l - origin)) <= 1e-6:
                continue
            frame = build_frame(origin, f, l)
            assert_rotation(frame.rotation)
            s, t = 0.3 + rng.random(), 0.3 + rng.random()
            scaled = build_frame(origin, origin + s * (f - origin), origin + t * (l - origin))
            assert np.abs(scaled.rotation - frame.rotation).max() < 1e-9
            checked += 1


class TestRelativePose:
    def test_identical_triples_give_identity(self):
        triple = (np.zeros(3), np.array([0.17, 0, 0]), np.array([0.05, 0.1, 0]))
        pose = relative_pose(triple, triple)
        assert np.abs(pose.rotation - np.eye(3)).max() < 1e-12
        assert np.abs(pose.translation).max() < 1e-12

    def test_known_rotation_recovered(self):
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])  # +90 deg about z
        obj = (np.zeros(3), np.array([0.17, 0, 0]), np.array([0.05, 0.1, 0]))
        hand = tuple(rot @ p for p in obj)
        pose = relative_pose(obj, hand)
        obj_frame = build_frame(*obj)
        expected = obj_frame.rotation.T @ rot @ obj_frame.rotation
        assert np.abs(pose.rotation - expected).max() < 1e-9
        assert np.abs(pose.translation).max() < 1e-12

    def test_pure_translation_in_canonical_frame(self):
        obj = (np.zeros(3), np.array([1.0, 0, 0]), np.array([0.0, 1.0, 0]))  # identity frame
        shift = np.array([0.1, 0.0, 0.0])
        hand = tuple(p + shift for p in obj)
        pose = relative_pose(obj, hand)
        assert np.abs(pose.rotation - np.eye(3)).max() < 1e-9
        assert np.abs(pose.translation - shift).max() < 1e-12

    @given(st.integers(0, 2**32 - 1))
    def test_round_trip_recovers_ground_truth(self, seed):
        rng = np.random.default_rng(seed)
        obj = (rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3))
        if np.linalg.norm(np.cross(obj[1] - obj[0], obj[2] - obj[0])) <= 1e-4:
            return
        rot = random_rotation(rng)
        shift = rng.standard_normal(3)
        hand = tuple(rot @ p + shift for p in obj)
        pose = relative_pose(obj, hand)
        assert_rotation(pose.rotation)
        obj_frame = build_frame(*obj)
        hand_frame = build_frame(*hand)
        assert np.abs(obj_frame.rotation @ pose.rotation - hand_frame.rotation).max() < 1e-9
        assert np.abs(obj_frame.rotation @ pose.translation + obj_frame.origin - hand[0]).max() < 1e-9


class TestGraspPoseForExecution:
    def test_identity_when_hand_already_at_contacts(self):
        kps = (np.array([0.1, 0.2, 0.3]), np.array([0.27, 0.2, 0.3]), np.array([0.15, 0.3, 0.3]))
        contacts = adjust_keypoints(*kps, INSPIRE_LIKE)
        hand_pts = (contacts.wrist, contacts.functional, contacts.little)
        pose = grasp_pose_for_execution(kps, INSPIRE_LIKE, hand_pts)
        assert np.abs(pose.rotation - np.eye(3)).max() < 1e-9
        assert np.abs(pose.translation).max() < 1e-9

    def test_randomized_alignment_round_trip(self):
        rng = np.random.default_rng(424242)
        worst = 0.0
        for _ in range(1000):
            kps = rng.uniform(-0.3, 0.3, (3, 3))
            if np.linalg.norm(np.cross(kps[1] - kps[0], kps[2] - kps[0])) <= 1e-4:
                continue
            rot = random_rotation(rng)
            shift = rng.uniform(-0.5, 0.5, 3)
            w, f, l = canonical_hand_points(INSPIRE_LIKE)
            hand_pts = (rot @ w + shift, rot @ f + shift, rot @ l + shift)
            pose = grasp_pose_for_execution(kps, INSPIRE_LIKE, hand_pts)
            assert_rotation(pose.rotation)
            contacts = adjust_keypoints(kps[0], kps[1], kps[2], INSPIRE_LIKE)
            obj_frame = build_frame(contacts.wrist, contacts.functional, contacts.little)
            mover = alignment_map(pose, obj_frame)
            errs = [
                np.linalg.norm(mover(hand_pts[0]) - contacts.wrist),
                np.linalg.norm(mover(hand_pts[1]) - contacts.functional),
                np.linalg.norm(mover(hand_pts[2]) - contacts.little),
            ]
            worst = max(worst, max(errs))
        assert worst < 1e-9

    def test_collinear_keypoints_name_the_stage(self):
        kps = (np.zeros(3), np.array([0.1, 0, 0]), np.array([0.2, 0, 0]))
        w, f, l = canonical_hand_points(INSPIRE_LIKE)
        with pytest.raises(DegenerateGeometryError) as err:
            grasp_pose_for_execution(kps, INSPIRE_LIKE, (w, f, l))
        assert err.value.stage == "adjust_keypoints"
