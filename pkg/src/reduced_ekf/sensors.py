"""Odometry and binocular-camera simulation.

Each camera reports a noisy bearing to a feature; the two bearings are
intersected into a robot-frame relative position whose covariance is the
first-order pushforward of the bearing noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .scenario import FeatureMap
from .se2 import Pose, to_relative

#: Rays closer to parallel than this (radians) are not triangulated.
PARALLEL_TOLERANCE = 1e-4


@dataclass(frozen=True)
class OdometryReading:
    v_m: np.ndarray
    w_m: float


@dataclass(frozen=True)
class RelativeMeasurement:
    feature_id: int
    z: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class CameraRig:
    """Two forward-looking cameras on the left and right rim of a round robot."""

    left: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.25]))
    right: np.ndarray = field(default_factory=lambda: np.array([0.0, -0.25]))
    yaw: float = 0.0
    fov: float = math.radians(120.0)
    max_range: float = 5.0

    @classmethod
    def for_robot(cls, diameter: float = 0.5, fov: float = math.radians(120.0), max_range: float = 5.0) -> "CameraRig":
        r = 0.5 * diameter
        return cls(np.array([0.0, r]), np.array([0.0, -r]), 0.0, fov, max_range)

    def camera_poses(self, pose: Pose) -> tuple[Pose, Pose]:
        return (
            pose.compose(Pose(self.left, self.yaw)),
            pose.compose(Pose(self.right, -self.yaw)),
        )


def _noise_factor(cov) -> np.ndarray:
    # symmetric square root; tolerates a zero matrix for noiseless runs
    vals, vecs = np.linalg.eigh(np.atleast_2d(np.asarray(cov, dtype=float)))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def odometry_read(true_v, true_w: float, Q_v, Q_w: float, rng: np.random.Generator) -> OdometryReading:
    """One noisy odometry sample. Always consumes three normals from ``rng``."""
    e = rng.standard_normal(3)
    v_m = np.asarray(true_v, dtype=float) + _noise_factor(Q_v) @ e[:2]
    w_m = float(true_w) + math.sqrt(max(Q_w, 0.0)) * e[2]
    return OdometryReading(v_m, w_m)


def visible_features(pose: Pose, rig: CameraRig, fmap: FeatureMap) -> list[int]:
    """Ids of features within range of the robot and inside both camera cones."""
    if len(fmap) == 0:
        return []
    rel = to_relative(pose, fmap.positions)
    ok = np.hypot(rel[:, 0], rel[:, 1]) <= rig.max_range
    half = 0.5 * rig.fov
    for mount, yaw in ((rig.left, rig.yaw), (rig.right, -rig.yaw)):
        d = rel - mount
        ang = np.arctan2(d[:, 1], d[:, 0]) - yaw
        ang = np.pi - np.mod(np.pi - ang, 2.0 * np.pi)
        ok &= np.abs(ang) <= half
    return [int(i) for i in fmap.ids[ok]]


def bearing_measure(cam_pose: Pose, pf, Q_z: float, rng: Optional[np.random.Generator] = None) -> float:
    """Bearing of ``pf`` in the camera frame plus ``N(0, Q_z)`` noise (one normal drawn)."""
    rel = to_relative(cam_pose, pf)
    if np.hypot(rel[0], rel[1]) == 0.0:
        raise ValueError("feature coincides with the camera centre")
    noise = 0.0 if rng is None else math.sqrt(max(Q_z, 0.0)) * rng.standard_normal()
    return math.atan2(rel[1], rel[0]) + noise


def triangulate(bearing_left: float, bearing_right: float, rig: CameraRig, Q_z: float):
    """Intersect the two bearing rays in the robot frame.

    Returns ``(z, cov)``, or ``None`` when the rays are nearly parallel or
    meet behind either camera.
    """
    a_l = bearing_left + rig.yaw
    a_r = bearing_right - rig.yaw
    d_l = np.array([math.cos(a_l), math.sin(a_l)])
    d_r = np.array([math.cos(a_r), math.sin(a_r)])
    cross = d_l[0] * d_r[1] - d_l[1] * d_r[0]  # sin(a_r - a_l)
    if abs(cross) < math.sin(PARALLEL_TOLERANCE):
        return None
    base = rig.right - rig.left
    s_l = (base[0] * d_r[1] - base[1] * d_r[0]) / cross
    s_r = (base[0] * d_l[1] - base[1] * d_l[0]) / cross
    if s_l <= 0.0 or s_r <= 0.0:
        return None
    z = rig.left + s_l * d_l
    # d z / d bearing_left moves the point along the right ray and vice versa
    H = np.column_stack([s_l * d_r / cross, -s_r * d_l / cross])
    cov = Q_z * (H @ H.T)
    return z, 0.5 * (cov + cov.T)


def measure_features(pose: Pose, rig: CameraRig, fmap: FeatureMap, Q_z: float, rng=None, sample_noise: bool = True):
    """Triangulated measurements of every visible feature, in id order.

    Two normals per visible feature are drawn from ``rng`` even when
    ``sample_noise`` is false, keeping streams aligned across noise settings.
    """
    cam_l, cam_r = rig.camera_poses(pose)
    scale = 1.0 if sample_noise else 0.0
    out = []
    for fid in visible_features(pose, rig, fmap):
        pf = fmap.position(fid)
        e = rng.standard_normal(2) if rng is not None else np.zeros(2)
        sigma = math.sqrt(Q_z) * scale
        b_l = bearing_measure(cam_l, pf, Q_z) + sigma * e[0]
        b_r = bearing_measure(cam_r, pf, Q_z) + sigma * e[1]
        result = triangulate(b_l, b_r, rig, Q_z)
        if result is not None:
            out.append(RelativeMeasurement(fid, *result))
    return out


MEASUREMENT_COLUMNS = ["step", "feature_id", "zx", "zy", "cov_xx", "cov_xy", "cov_yy"]


def write_measurement_log(batches: Iterable[tuple[int, list[RelativeMeasurement]]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MEASUREMENT_COLUMNS)
        for step, batch in batches:
            for m in batch:
                writer.writerow(
                    [step, m.feature_id]
                    + [repr(float(x)) for x in (m.z[0], m.z[1], m.cov[0, 0], m.cov[0, 1], m.cov[1, 1])]
                )


def read_measurement_log(path) -> dict[int, list[RelativeMeasurement]]:
    batches: dict[int, list[RelativeMeasurement]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cxy = float(row["cov_xy"])
            cov = np.array([[float(row["cov_xx"]), cxy], [cxy, float(row["cov_yy"])]])
            m = RelativeMeasurement(int(row["feature_id"]), np.array([float(row["zx"]), float(row["zy"])]), cov)
            batches.setdefault(int(row["step"]), []).append(m)
    return batches
