"""Ground-truth trajectories and feature maps.

Every trajectory stores its poses as the forward-Euler chain of its own body
velocities, so a noiseless filter driven by the stored controls reproduces
the truth exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .se2 import Pose, rot, wrap_angle

#: Built-in waypoints for the general trajectory: a closed tour with sharp corners.
GENERAL_WAYPOINTS = np.array(
    [
        [0.0, 0.0],
        [8.0, 0.0],
        [14.0, 1.0],
        [16.0, 6.0],
        [12.0, 10.0],
        [6.0, 9.0],
        [4.0, 14.0],
        [-2.0, 16.0],
        [-6.0, 11.0],
        [-4.0, 5.0],
        [0.0, 0.0],
    ]
)
GENERAL_TOTAL_TIME = 60.0


@dataclass(frozen=True)
class Trajectory:
    """Sampled ground truth.

    ``poses[k]`` is ``(x, y, theta)`` at time ``k * dt``; ``v[k]`` and ``w[k]``
    drive the step from ``poses[k]`` to ``poses[k + 1]``.
    """

    dt: float
    poses: np.ndarray
    v: np.ndarray
    w: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.w)

    @property
    def frequency(self) -> float:
        return 1.0 / self.dt

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def pose(self, k: int) -> Pose:
        return Pose.from_vector(self.poses[k])

    @property
    def samples(self) -> Iterator[tuple[Pose, np.ndarray, float]]:
        for k in range(self.n_steps):
            yield self.pose(k), self.v[k], float(self.w[k])

    def path_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.poses[:, :2], axis=0), axis=1)))


@dataclass(frozen=True)
class FeatureMap:
    positions: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        ids = np.asarray(self.ids, dtype=int).reshape(-1)
        if len(ids) != len(pos):
            raise ValueError("one id per feature position is required")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("feature ids must be unique")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.ids)

    def position(self, feature_id: int) -> np.ndarray:
        return self.positions[np.flatnonzero(self.ids == feature_id)[0]]


@dataclass(frozen=True)
class Scenario:
    trajectory: Trajectory
    features: FeatureMap
    Q_v: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01]))
    Q_w: float = 0.01
    Q_z: float = 1e-4
    robot_diameter: float = 0.5
    fov: float = math.radians(120.0)
    max_range: float = 5.0
    seed: int = 0

    def __post_init__(self):
        q_v = np.asarray(self.Q_v, dtype=float).reshape(2, 2)
        if not np.allclose(q_v, q_v.T) or np.any(np.linalg.eigvalsh(q_v) <= 0):
            raise ValueError("Q_v must be symmetric positive definite")
        if self.Q_w <= 0 or self.Q_z <= 0:
            raise ValueError("Q_w and Q_z must be positive")
        object.__setattr__(self, "Q_v", q_v)


def euler_chain(start, v: np.ndarray, w: np.ndarray, dt: float) -> np.ndarray:
    """Forward-Euler poses from ``start`` under body velocities ``v`` and rates ``w``."""
    poses = np.empty((len(w) + 1, 3))
    poses[0] = start
    for k in range(len(w)):
        x, y, th = poses[k]
        p = np.array([x, y]) + dt * (rot(th) @ v[k])
        poses[k + 1] = (p[0], p[1], wrap_angle(th + dt * w[k]))
    return poses


def _check_positive(**kwargs) -> None:
    for name, value in kwargs.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def line_trajectory(length: float, speed: float, frequency: float) -> Trajectory:
    """Straight run along +x at constant speed."""
    _check_positive(length=length, speed=speed, frequency=frequency)
    dt = 1.0 / frequency
    n = int(round(length / speed * frequency))
    v = np.tile([speed, 0.0], (n, 1))
    w = np.zeros(n)
    return Trajectory(dt, euler_chain([0.0, 0.0, 0.0], v, w, dt), v, w)


def circle_trajectory(radius: float, speed: float, frequency: float) -> Trajectory:
    """One counter-clockwise revolution starting at the origin heading along +x."""
    _check_positive(radius=radius, speed=speed, frequency=frequency)
    dt = 1.0 / frequency
    rate = speed / radius
    n = int(round(2.0 * math.pi / rate * frequency))
    v = np.tile([speed, 0.0], (n, 1))
    w = np.full(n, rate)
    return Trajectory(dt, euler_chain([0.0, 0.0, 0.0], v, w, dt), v, w)


def waypoint_spline(waypoints: Sequence, total_time: float) -> CubicSpline:
    pts = np.asarray(waypoints, dtype=float)
    times = np.linspace(0.0, total_time, len(pts))
    return CubicSpline(times, pts, bc_type="natural")


def spline_trajectory(waypoints: Sequence, total_time: float, frequency: float) -> Trajectory:
    """Follow a natural cubic spline through ``waypoints`` (uniform in time).

    Heading is the direction of the spline velocity; the robot only moves
    forward in its body frame.
    """
    pts = np.asarray(waypoints, dtype=float)
    if len(pts) < 4:
        raise ValueError("spline trajectory needs at least 4 waypoints")
    _check_positive(total_time=total_time, frequency=frequency)
    dt = 1.0 / frequency
    n = int(round(total_time * frequency))
    spline = waypoint_spline(pts, total_time)
    t = np.arange(n) * dt
    vel = spline(t, 1)
    acc = spline(t, 2)
    speed = np.linalg.norm(vel, axis=1)
    if np.any(speed < 1e-6):
        raise ValueError("spline velocity vanishes; heading undefined")
    w = (vel[:, 0] * acc[:, 1] - vel[:, 1] * acc[:, 0]) / speed**2
    v = np.column_stack([speed, np.zeros(n)])
    start = [pts[0, 0], pts[0, 1], math.atan2(vel[0, 1], vel[0, 0])]
    return Trajectory(dt, euler_chain(start, v, w, dt), v, w)


def general_trajectory(frequency: float) -> Trajectory:
    return spline_trajectory(GENERAL_WAYPOINTS, GENERAL_TOTAL_TIME, frequency)


def scatter_features(traj: Trajectory, density: float, corridor_halfwidth: float = 5.0, rng=None) -> FeatureMap:
    """Scatter ``round(density * path_length)`` features uniformly in the corridor around the path.

    ``rng`` is a seed or a ``numpy.random.Generator``.
    """
    _check_positive(density=density)
    rng = np.random.default_rng(rng)
    count = int(round(density * traj.path_length()))
    if count == 0:
        return FeatureMap(np.zeros((0, 2)), np.zeros(0, dtype=int))

    path = _resample_path(traj.poses[:, :2], spacing=0.05)
    tree = cKDTree(path)
    lo = path.min(axis=0) - corridor_halfwidth
    hi = path.max(axis=0) + corridor_halfwidth
    accepted = []
    n_found = 0
    while n_found < count:
        cand = rng.uniform(lo, hi, size=(max(256, 2 * count), 2))
        dist, _ = tree.query(cand)
        keep = cand[dist <= corridor_halfwidth]
        accepted.append(keep)
        n_found += len(keep)
    positions = np.concatenate(accepted)[:count]
    return FeatureMap(positions, np.arange(count))


def _resample_path(points: np.ndarray, spacing: float) -> np.ndarray:
    out = [points[:1]]
    for a, b in zip(points[:-1], points[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        s = np.linspace(0.0, 1.0, n + 1)[1:, None]
        out.append(a + s * (b - a))
    return np.concatenate(out)


# -- text serialization ------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_scenario(scenario: Scenario, path) -> None:
    """Write a scenario as sectioned plain text; floats keep full precision."""
    traj = scenario.trajectory
    lines = ["# planar SLAM scenario", "[parameters]"]
    lines.append(f"dt = {_fmt(traj.dt)}")
    lines.append(f"Q_v = {' '.join(_fmt(x) for x in scenario.Q_v.ravel())}")
    lines.append(f"Q_w = {_fmt(scenario.Q_w)}")
    lines.append(f"Q_z = {_fmt(scenario.Q_z)}")
    lines.append(f"robot_diameter = {_fmt(scenario.robot_diameter)}")
    lines.append(f"fov = {_fmt(scenario.fov)}")
    lines.append(f"max_range = {_fmt(scenario.max_range)}")
    lines.append(f"seed = {int(scenario.seed)}")
    lines.append("")
    lines.append("[poses]")
    lines.append("k,x,y,theta")
    for k, (x, y, th) in enumerate(traj.poses):
        lines.append(f"{k},{_fmt(x)},{_fmt(y)},{_fmt(th)}")
    lines.append("")
    lines.append("[controls]")
    lines.append("k,vx,vy,w")
    for k in range(traj.n_steps):
        lines.append(f"{k},{_fmt(traj.v[k, 0])},{_fmt(traj.v[k, 1])},{_fmt(traj.w[k])}")
    lines.append("")
    lines.append("[features]")
    lines.append("id,x,y")
    for fid, (x, y) in zip(scenario.features.ids, scenario.features.positions):
        lines.append(f"{fid},{_fmt(x)},{_fmt(y)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scenario(path) -> Scenario:
    sections: dict[str, list[str]] = {}
    current = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            raise ValueError(f"content outside any section: {line!r}")
        else:
            sections[current].append(line)

    params = {}
    for line in sections["parameters"]:
        key, _, value = line.partition("=")
        params[key.strip()] = value.strip()

    def table(name):
        rows = sections[name][1:]
        if not rows:
            return np.zeros((0, len(sections[name][0].split(","))))
        return np.array([[float(x) for x in r.split(",")] for r in rows])

    poses = table("poses")[:, 1:]
    controls = table("controls")
    feats = table("features")
    traj = Trajectory(float(params["dt"]), poses, controls[:, 1:3].reshape(-1, 2), controls[:, 3])
    return Scenario(
        trajectory=traj,
        features=FeatureMap(feats[:, 1:3], feats[:, 0].astype(int)),
        Q_v=np.array([float(x) for x in params["Q_v"].split()]).reshape(2, 2),
        Q_w=float(params["Q_w"]),
        Q_z=float(params["Q_z"]),
        robot_diameter=float(params["robot_diameter"]),
        fov=float(params["fov"]),
        max_range=float(params["max_range"]),
        seed=int(params["seed"]),
    )
