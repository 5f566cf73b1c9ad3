import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reduced_ekf.se2 import J, GroupElement, Pose, apply_group_action, rot, to_global, to_relative, wrap_angle

angles = st.floats(-20.0, 20.0, allow_nan=False)
coords = st.floats(-50.0, 50.0, allow_nan=False)


def test_rot_identity_and_quarter_turn():
    np.testing.assert_array_equal(rot(0.0), np.eye(2))
    np.testing.assert_allclose(rot(math.pi / 2), J, atol=1e-15)


def test_J_properties():
    np.testing.assert_array_equal(J @ J, -np.eye(2))
    np.testing.assert_array_equal(J.T, -J)


@given(angles)
def test_rot_orthogonal(theta):
    r = rot(theta)
    np.testing.assert_allclose(r @ r.T, np.eye(2), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


@given(angles, angles)
def test_rot_homomorphism(a, b):
    np.testing.assert_allclose(rot(a) @ rot(b), rot(a + b), atol=1e-12)


@pytest.mark.parametrize(
    "theta, expected",
    [(0.0, 0.0), (3 * math.pi, math.pi), (math.pi, math.pi), (-math.pi, math.pi), (2 * math.pi, 0.0)],
)
def test_wrap_angle_cases(theta, expected):
    assert wrap_angle(theta) == pytest.approx(expected, abs=1e-12)


def test_wrap_angle_just_below_minus_pi():
    out = wrap_angle(-math.pi - 1e-9)
    assert out < math.pi
    assert out == pytest.approx(math.pi - 1e-9, abs=1e-12)


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_wrap_angle_range_and_congruence(theta):
    out = wrap_angle(theta)
    assert -math.pi < out <= math.pi
    k = (theta - out) / (2 * math.pi)
    assert k == pytest.approx(round(k), abs=1e-9)


def test_to_relative_examples():
    np.testing.assert_allclose(to_relative(Pose([0, 0], 0), [1, 2]), [1, 2])
    np.testing.assert_allclose(to_relative(Pose([1, 0], math.pi / 2), [1, 1]), [1, 0], atol=1e-15)


def test_to_global_examples():
    np.testing.assert_allclose(to_global(Pose([0, 0], 0), [3, -1]), [3, -1])
    np.testing.assert_allclose(to_global(Pose([1, 1], math.pi), [1, 0]), [0, 1], atol=1e-15)


def test_round_trips_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pose = Pose(rng.uniform(-10, 10, 2), rng.uniform(-4, 4))
        pf = rng.uniform(-10, 10, 2)
        np.testing.assert_allclose(to_global(pose, to_relative(pose, pf)), pf, atol=1e-12)
        z = rng.uniform(-5, 5, 2)
        np.testing.assert_allclose(to_relative(pose, to_global(pose, z)), z, atol=1e-12)


def test_to_relative_vectorized_matches_scalar():
    rng = np.random.default_rng(1)
    pose = Pose([2.0, -1.0], 0.7)
    pts = rng.normal(size=(5, 2))
    batch = to_relative(pose, pts)
    for row, pt in zip(batch, pts):
        np.testing.assert_allclose(row, to_relative(pose, pt))


def test_group_identity_leaves_state_unchanged():
    pose = Pose([1.0, 2.0], 0.3)
    feats = np.array([[3.0, 4.0], [-1.0, 0.5]])
    new_pose, new_feats = apply_group_action(GroupElement(), pose, feats)
    np.testing.assert_array_equal(new_pose.p, pose.p)
    assert new_pose.theta == pose.theta
    np.testing.assert_array_equal(new_feats, feats)


def test_pure_translation_keeps_relative_coordinates():
    pose = Pose([1.0, 2.0], 0.3)
    feats = np.array([[3.0, 4.0], [-1.0, 0.5]])
    new_pose, new_feats = apply_group_action(GroupElement([1.0, 0.0], 0.0), pose, feats)
    np.testing.assert_allclose(to_relative(new_pose, new_feats), to_relative(pose, feats), atol=1e-12)


@settings(max_examples=1000, deadline=None)
@given(coords, coords, angles, coords, coords, angles, st.lists(st.tuples(coords, coords), min_size=1, max_size=5))
def test_relative_coordinates_invariant_under_group(px, py, th, gx, gy, gth, feats):
    pose = Pose([px, py], th)
    feats = np.array(feats)
    new_pose, new_feats = apply_group_action(GroupElement([gx, gy], gth), pose, feats)
    np.testing.assert_allclose(to_relative(new_pose, new_feats), to_relative(pose, feats), atol=1e-10)


@given(coords, coords, angles, coords, coords, angles, coords, coords, angles)
def test_group_action_composes(x1, y1, t1, x2, y2, t2, px, py, th):
    g1, g2 = GroupElement([x1, y1], t1), GroupElement([x2, y2], t2)
    pose = Pose([px, py], th)
    feats = np.array([[1.0, -2.0], [0.5, 3.0]])
    step_pose, step_feats = apply_group_action(g1, *apply_group_action(g2, pose, feats))
    once_pose, once_feats = apply_group_action(g1 @ g2, pose, feats)
    np.testing.assert_allclose(step_pose.p, once_pose.p, atol=1e-12)
    assert wrap_angle(step_pose.theta - once_pose.theta) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(step_feats, once_feats, atol=1e-12)
