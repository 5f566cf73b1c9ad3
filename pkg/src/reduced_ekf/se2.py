"""Planar rigid-motion primitives.

Poses are ``(p, theta)`` with ``p`` the global position and ``theta`` the
heading of the robot's intrinsic frame. Features are plain 2-vectors, either
global (``pf``) or expressed in the robot frame (``z``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

#: Quarter-turn generator; ``J @ J == -I`` and ``J.T == -J``.
J = np.array([[0.0, -1.0], [1.0, 0.0]])
J.setflags(write=False)


def wrap_angle(theta):
    """Wrap an angle (or array of angles) to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


def rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose:
    p: np.ndarray
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(2))
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    @property
    def R(self) -> np.ndarray:
        return rot(self.theta)

    def as_vector(self) -> np.ndarray:
        return np.array([self.p[0], self.p[1], self.theta])

    @classmethod
    def from_vector(cls, x: Sequence[float]) -> "Pose":
        return cls(np.array(x[:2], dtype=float), float(x[2]))

    def compose(self, other: "Pose") -> "Pose":
        """Express ``other`` (given in this pose's frame) in the parent frame."""
        return Pose(self.p + self.R @ other.p, self.theta + other.theta)


@dataclass(frozen=True)
class GroupElement:
    """An element of SE(2) acting on states: rotate by ``dtheta``, then shift by ``dp``."""

    dp: np.ndarray = field(default_factory=lambda: np.zeros(2))
    dtheta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dp", np.asarray(self.dp, dtype=float).reshape(2))
        object.__setattr__(self, "dtheta", float(wrap_angle(self.dtheta)))

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        # (self @ other) acts as `other` first, then `self`.
        return GroupElement(rot(self.dtheta) @ other.dp + self.dp, self.dtheta + other.dtheta)

    def act_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ rot(self.dtheta).T + self.dp


def to_relative(pose: Pose, pf) -> np.ndarray:
    """Feature position(s) ``pf`` seen from ``pose``: ``R(theta)^T (pf - p)``.

    Accepts a single 2-vector or an ``(n, 2)`` array.
    """
    pf = np.asarray(pf, dtype=float)
    return (pf - pose.p) @ pose.R


def to_global(pose: Pose, z) -> np.ndarray:
    """Inverse of :func:`to_relative`: ``p + R(theta) z``."""
    z = np.asarray(z, dtype=float)
    return pose.p + z @ pose.R.T


def apply_group_action(g: GroupElement, pose: Pose, features) -> tuple[Pose, np.ndarray]:
    """Move the robot and every feature by the same rigid motion.

    Relative feature coordinates are invariant under this map.
    """
    new_pose = Pose(g.act_point(pose.p), pose.theta + g.dtheta)
    feats = np.asarray(features, dtype=float).reshape(-1, 2)
    return new_pose, g.act_point(feats)
