import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reduced_ekf.scenario import FeatureMap
from reduced_ekf.se2 import GroupElement, Pose, apply_group_action, to_relative
from reduced_ekf.sensors import (
    CameraRig,
    RelativeMeasurement,
    bearing_measure,
    measure_features,
    odometry_read,
    read_measurement_log,
    triangulate,
    visible_features,
    write_measurement_log,
)

RIG = CameraRig()


def bearings_of(z, rig=RIG):
    """Noiseless bearings of a robot-frame point from both cameras."""
    cam_l, cam_r = rig.camera_poses(Pose([0.0, 0.0], 0.0))
    return bearing_measure(cam_l, z, 0.0), bearing_measure(cam_r, z, 0.0)


def fmap_of(*pts):
    return FeatureMap(np.array(pts, dtype=float), np.arange(len(pts)))


def test_rig_geometry():
    np.testing.assert_allclose(RIG.left, [0.0, 0.25])
    np.testing.assert_allclose(RIG.right, -RIG.left)
    assert RIG.fov == pytest.approx(math.radians(120))
    assert RIG.max_range == 5.0
    rig = CameraRig.for_robot(0.5)
    np.testing.assert_allclose(rig.left, RIG.left)


def test_odometry_noiseless_is_exact():
    rng = np.random.default_rng(0)
    r = odometry_read([1.2, 0.0], 0.3, np.zeros((2, 2)), 0.0, rng)
    np.testing.assert_array_equal(r.v_m, [1.2, 0.0])
    assert r.w_m == 0.3


def test_odometry_sample_statistics():
    rng = np.random.default_rng(1)
    n = 100_000
    q_v = np.diag([0.01, 0.01])
    reads = [odometry_read([1.0, 0.0], 0.2, q_v, 0.01, rng) for _ in range(n)]
    v = np.array([r.v_m for r in reads])
    w = np.array([r.w_m for r in reads])
    assert np.all(np.abs(v.mean(axis=0) - [1.0, 0.0]) < 3 * 0.1 / math.sqrt(n))
    assert abs(w.mean() - 0.2) < 3 * 0.1 / math.sqrt(n)
    np.testing.assert_allclose(v.std(axis=0), 0.1, rtol=0.02)
    assert w.std() == pytest.approx(0.1, rel=0.02)


@pytest.mark.parametrize(
    "pt, visible",
    [((10.0, 0.0), False), ((1.0, 0.0), True), ((-1.0, 0.0), False), ((4.9, 0.0), True), ((0.5, 3.0), False)],
)
def test_visibility_cases(pt, visible):
    assert (visible_features(Pose([0, 0], 0), RIG, fmap_of(pt)) == [0]) is visible


def test_visibility_range_measured_from_centre():
    pose = Pose([2.0, 1.0], 0.0)
    assert visible_features(pose, RIG, fmap_of((7.0, 1.0))) == [0]
    assert visible_features(pose, RIG, fmap_of((7.01, 1.0))) == []


def test_visibility_empty_map():
    assert visible_features(Pose([0, 0], 0), RIG, fmap_of()) == []


def test_bearing_axes():
    cam = Pose([1.0, 2.0], 0.5)
    x_axis = cam.p + 2.0 * cam.R[:, 0]
    y_axis = cam.p + 2.0 * cam.R[:, 1]
    assert bearing_measure(cam, x_axis, 1e-4) == pytest.approx(0.0, abs=1e-12)
    assert bearing_measure(cam, y_axis, 1e-4) == pytest.approx(math.pi / 2, abs=1e-12)


def test_bearing_noise_std():
    rng = np.random.default_rng(2)
    cam = Pose([0.0, 0.0], 0.0)
    b = np.array([bearing_measure(cam, [3.0, 0.0], 1e-4, rng) for _ in range(20_000)])
    assert b.std() == pytest.approx(0.01, rel=0.03)


def test_bearing_zero_range_fails():
    with pytest.raises(ValueError):
        bearing_measure(Pose([1.0, 1.0], 0.0), [1.0, 1.0], 1e-4)


def test_triangulate_point_ahead():
    z, cov = triangulate(*bearings_of([1.0, 0.0]), RIG, 1e-4)
    np.testing.assert_allclose(z, [1.0, 0.0], atol=1e-9)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_triangulate_noiseless_round_trip():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 100:
        pose = Pose(rng.uniform(-20, 20, 2), rng.uniform(-math.pi, math.pi))
        pf = pose.p + pose.R @ rng.uniform([0.3, -4], [5, 4])
        fmap = fmap_of(pf)
        if not visible_features(pose, RIG, fmap):
            continue
        (m,) = measure_features(pose, RIG, fmap, 1e-4, rng=None)
        np.testing.assert_allclose(m.z, to_relative(pose, pf), atol=1e-9)
        checked += 1


def test_triangulate_parallel_rays_dropped():
    assert triangulate(0.3, 0.3, RIG, 1e-4) is None
    assert triangulate(0.3, 0.3 + 0.5e-4, RIG, 1e-4) is None


def test_triangulate_behind_camera_dropped():
    # rays diverging forward meet behind the rig
    assert triangulate(0.2, -0.2, RIG, 1e-4) is None


def test_triangulate_jacobian_by_finite_differences():
    b_l, b_r = bearings_of([2.5, 0.7])
    z, cov = triangulate(b_l, b_r, RIG, 1.0)
    h = 1e-7
    fd = np.column_stack(
        [
            (triangulate(b_l + h, b_r, RIG, 1.0)[0] - triangulate(b_l - h, b_r, RIG, 1.0)[0]) / (2 * h),
            (triangulate(b_l, b_r + h, RIG, 1.0)[0] - triangulate(b_l, b_r - h, RIG, 1.0)[0]) / (2 * h),
        ]
    )
    np.testing.assert_allclose(cov, fd @ fd.T, rtol=1e-6)


def test_triangulate_cov_matches_monte_carlo():
    rng = np.random.default_rng(4)
    qz = 1e-4
    b_l, b_r = bearings_of([2.0, 0.3])
    _, cov = triangulate(b_l, b_r, RIG, qz)
    e = math.sqrt(qz) * rng.standard_normal((100_000, 2))
    samples = np.array([triangulate(b_l + a, b_r + b, RIG, qz)[0] for a, b in e])
    sample_cov = np.cov(samples.T)
    assert np.linalg.norm(sample_cov - cov) / np.linalg.norm(cov) < 0.15


def test_triangulated_cov_grows_with_range():
    traces = []
    for k in [1.0, 1.5, 2.0, 3.0, 4.0]:
        _, cov = triangulate(*bearings_of(k * np.array([1.0, 0.4])), RIG, 1e-4)
        traces.append(np.trace(cov))
    assert np.all(np.diff(traces) > 0)


def test_measure_features_consumes_two_normals_each():
    fmap = fmap_of((1.0, 0.0), (2.0, 0.5), (-3.0, 0.0))
    pose = Pose([0.0, 0.0], 0.0)
    a = np.random.default_rng(5)
    measure_features(pose, RIG, fmap, 1e-4, a, sample_noise=False)
    b = np.random.default_rng(5)
    b.standard_normal(4)
    assert a.standard_normal() == b.standard_normal()


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-30, 30), st.floats(-30, 30), st.floats(-math.pi, math.pi),
    st.floats(-30, 30), st.floats(-30, 30), st.floats(-math.pi, math.pi),
    st.integers(0, 2**31),
)
def test_pipeline_invariant_under_group(px, py, th, gx, gy, gth, seed):
    rng = np.random.default_rng(seed)
    pose = Pose([px, py], th)
    pts = pose.p + rng.uniform(-6, 6, (30, 2))
    fmap = fmap_of(*pts)
    g = GroupElement([gx, gy], gth)
    pose2, pts2 = apply_group_action(g, pose, pts)
    fmap2 = fmap_of(*pts2)
    vis = visible_features(pose, RIG, fmap)
    assert visible_features(pose2, RIG, fmap2) == vis
    for (cam, cam2) in zip(RIG.camera_poses(pose), RIG.camera_poses(pose2)):
        for i in vis:
            b1 = bearing_measure(cam, fmap.position(i), 0.0)
            b2 = bearing_measure(cam2, fmap2.position(i), 0.0)
            assert abs(math.remainder(b1 - b2, 2 * math.pi)) < 1e-10
    m1 = measure_features(pose, RIG, fmap, 1e-4, np.random.default_rng(seed))
    m2 = measure_features(pose2, RIG, fmap2, 1e-4, np.random.default_rng(seed))
    assert [m.feature_id for m in m1] == [m.feature_id for m in m2]
    for a, b in zip(m1, m2):
        np.testing.assert_allclose(a.z, b.z, atol=1e-10 * max(1.0, np.abs(a.z).max()))


def test_measurement_log_round_trip(tmp_path):
    cov = np.array([[1e-3, 2e-4], [2e-4, 5e-3]])
    batches = [
        (0, [RelativeMeasurement(3, np.array([1.0 / 3, -2.0]), cov)]),
        (1, []),
        (2, [RelativeMeasurement(4, np.array([0.1, 0.2]), cov), RelativeMeasurement(7, np.array([3.0, 1e-9]), 2 * cov)]),
    ]
    path = tmp_path / "m.csv"
    write_measurement_log(batches, path)
    back = read_measurement_log(path)
    assert sorted(back) == [0, 2]
    for step, batch in batches:
        for a, b in zip(batch, back.get(step, [])):
            assert a.feature_id == b.feature_id
            np.testing.assert_array_equal(a.z, b.z)
            np.testing.assert_array_equal(a.cov, b.cov)
