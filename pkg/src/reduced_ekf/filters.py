"""Classical, first-estimate and reduced EKFs for planar SLAM.

The classical and first-estimate filters estimate ``(p, theta, pf_1, ...)``
with global feature positions. The reduced filter estimates
``(p, theta, z_1, ...)`` with feature positions relative to the robot; its
measurement model is the identity on the ``z`` block, and the update leaves
the conditional of the pose given the features untouched.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .gaussian import MomentGaussian, Partition, check_condition, reduced_bayes_update, symmetrize
from .se2 import J, Pose, rot, wrap_angle
from .sensors import OdometryReading, RelativeMeasurement

POSE_DIM = 3


class Coordinates(enum.Enum):
    GLOBAL_FEATURES = "global"
    RELATIVE_FEATURES = "relative"


class UnknownFeatureError(KeyError):
    pass


@dataclass
class FilterBelief:
    """Stacked state ``[p, theta, f_1, f_2, ...]`` with feature blocks located via ``registry``."""

    coordinates: Coordinates
    mean: np.ndarray
    cov: np.ndarray
    registry: dict[int, int] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def n_features(self) -> int:
        return len(self.registry)

    @property
    def pose(self) -> Pose:
        return Pose.from_vector(self.mean[:POSE_DIM])

    def feature_block(self, feature_id: int) -> slice:
        try:
            start = self.registry[feature_id]
        except KeyError:
            raise UnknownFeatureError(f"feature {feature_id} is not registered") from None
        return slice(start, start + 2)

    def as_gaussian(self) -> MomentGaussian:
        return MomentGaussian(self.mean, self.cov)

    def copy(self) -> "FilterBelief":
        return FilterBelief(self.coordinates, self.mean.copy(), self.cov.copy(), dict(self.registry))


def initial_belief(coordinates: Coordinates, pose: Pose, pose_cov=None) -> FilterBelief:
    cov = np.zeros((POSE_DIM, POSE_DIM)) if pose_cov is None else np.array(pose_cov, dtype=float)
    return FilterBelief(coordinates, pose.as_vector(), cov)


# -- Jacobians and nullspaces ------------------------------------------------


def pose_transition(p_next, p_prev) -> np.ndarray:
    """Pose block of the transition matrix, ``[[I, J (p_next - p_prev)], [0, 1]]``."""
    phi = np.eye(POSE_DIM)
    phi[:2, 2] = J @ (np.asarray(p_next, dtype=float) - np.asarray(p_prev, dtype=float))
    return phi


def global_transition(p_next, p_prev, n_features: int) -> np.ndarray:
    phi = np.eye(POSE_DIM + 2 * n_features)
    phi[:POSE_DIM, :POSE_DIM] = pose_transition(p_next, p_prev)
    return phi


def relative_transition(p_next, p_prev, dtheta: float, n_features: int, z_model: str = "linear") -> np.ndarray:
    """Transition matrix of the relative-feature model.

    Feature blocks are ``I - dtheta J`` (``z_model="linear"``) or
    ``R(dtheta)^T`` (``"exact"``); the feature-to-pose blocks vanish either way.
    """
    phi = global_transition(p_next, p_prev, n_features)
    m = rot(dtheta).T if z_model == "exact" else np.eye(2) - dtheta * J
    for i in range(n_features):
        s = POSE_DIM + 2 * i
        phi[s : s + 2, s : s + 2] = m
    return phi


def global_measurement_jacobian(state: np.ndarray, feature_start: int) -> np.ndarray:
    """``dh_i`` of ``R(theta)^T (pf_i - p)`` over the full global-coordinate state."""
    p, th = state[:2], state[2]
    pf = state[feature_start : feature_start + 2]
    rt = rot(th).T
    h = np.zeros((2, state.size))
    h[:, :2] = -rt
    h[:, 2] = rt @ J.T @ (pf - p)
    h[:, feature_start : feature_start + 2] = rt
    return h


def relative_measurement_jacobian(dim: int, feature_start: int) -> np.ndarray:
    h = np.zeros((2, dim))
    h[:, feature_start : feature_start + 2] = np.eye(2)
    return h


def global_nullspace(state: np.ndarray) -> np.ndarray:
    n = state.size
    basis = np.zeros((n, 3))
    basis[:2, :2] = np.eye(2)
    basis[:2, 2] = J @ state[:2]
    basis[2, 2] = 1.0
    for s in range(POSE_DIM, n, 2):
        basis[s : s + 2, :2] = np.eye(2)
        basis[s : s + 2, 2] = J @ state[s : s + 2]
    return basis


def relative_nullspace(state: np.ndarray) -> np.ndarray:
    basis = np.zeros((state.size, 3))
    basis[:2, :2] = np.eye(2)
    basis[:2, 2] = J @ state[:2]
    basis[2, 2] = 1.0
    return basis


def nullspace_basis(b: FilterBelief) -> np.ndarray:
    if b.coordinates is Coordinates.GLOBAL_FEATURES:
        return global_nullspace(b.mean)
    return relative_nullspace(b.mean)


def _noise_jacobian_pose(theta: float, dt: float) -> np.ndarray:
    g = np.zeros((POSE_DIM, 3))
    g[:2, :2] = dt * rot(theta)
    g[2, 2] = dt
    return g


def _control_cov(Q_v, Q_w) -> np.ndarray:
    return linalg.block_diag(np.asarray(Q_v, dtype=float), np.atleast_2d(float(Q_w)))


def _append_blocks(b: FilterBelief, ids: Sequence[int], means: np.ndarray, cross: np.ndarray, block: np.ndarray) -> None:
    """Grow the belief by ``len(ids)`` feature blocks.

    ``cross`` is the covariance between the new blocks and the old state,
    ``block`` their joint covariance.
    """
    n_old, n_new = b.dim, 2 * len(ids)
    cov = np.empty((n_old + n_new, n_old + n_new))
    cov[:n_old, :n_old] = b.cov
    cov[n_old:, :n_old] = cross
    cov[:n_old, n_old:] = cross.T
    cov[n_old:, n_old:] = block
    for k, fid in enumerate(ids):
        b.registry[int(fid)] = n_old + 2 * k
    b.mean = np.concatenate([b.mean, means.ravel()])
    b.cov = cov


def _check_new(b: FilterBelief, measurements: Sequence[RelativeMeasurement]) -> None:
    seen = set()
    for m in measurements:
        if m.feature_id in b.registry or m.feature_id in seen:
            raise ValueError(f"feature {m.feature_id} is already registered")
        seen.add(m.feature_id)


# -- filters -----------------------------------------------------------------


class ClassicEKF:
    """EKF on global feature positions with Jacobians at the current estimate."""

    name = "ekf"
    coordinates = Coordinates.GLOBAL_FEATURES

    def __init__(self, pose0: Pose, Q_v, Q_w: float, pose_cov=None):
        self.belief = initial_belief(self.coordinates, pose0, pose_cov)
        self.Q_u = _control_cov(Q_v, Q_w)

    # Jacobian hooks overridden by the first-estimate variant
    def _propagation_displacement(self, p_prev: np.ndarray, p_next: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return p_next, p_prev

    def _linearization_point(self) -> np.ndarray:
        return self.belief.mean

    def propagate(self, odo: OdometryReading, dt: float) -> None:
        b = self.belief
        p, th = b.mean[:2].copy(), b.mean[2]
        dd = np.asarray(odo.v_m, dtype=float) * dt
        p_next = p + rot(th) @ dd
        th_next = wrap_angle(th + odo.w_m * dt)

        phi = pose_transition(*self._propagation_displacement(p, p_next))
        g = _noise_jacobian_pose(th, dt)
        # only the pose rows and columns change; keep them exact mirrors
        cov = b.cov
        rows = phi @ cov[:POSE_DIM, :]
        rows[:, :POSE_DIM] = symmetrize(rows[:, :POSE_DIM] @ phi.T + g @ self.Q_u @ g.T)
        cov[:POSE_DIM, :] = rows
        cov[POSE_DIM:, :POSE_DIM] = rows[:, POSE_DIM:].T
        b.mean[:2] = p_next
        b.mean[2] = th_next

    def register_features(self, measurements: Sequence[RelativeMeasurement]) -> None:
        """Augment with ``pf = p + R(theta) z``, correlated with the pose through the Jacobians."""
        if not measurements:
            return
        b = self.belief
        _check_new(b, measurements)
        p, th = b.mean[:2], b.mean[2]
        r = rot(th)
        k = len(measurements)
        jac_pose = np.zeros((2 * k, POSE_DIM))
        means = np.zeros((k, 2))
        meas_cov = np.zeros((2 * k, 2 * k))
        for i, m in enumerate(measurements):
            rz = r @ m.z
            means[i] = p + rz
            jac_pose[2 * i : 2 * i + 2, :2] = np.eye(2)
            jac_pose[2 * i : 2 * i + 2, 2] = J @ rz
            meas_cov[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = r @ m.cov @ r.T
        cross = jac_pose @ b.cov[:POSE_DIM, :]
        block = jac_pose @ b.cov[:POSE_DIM, :POSE_DIM] @ jac_pose.T + meas_cov
        _append_blocks(b, [m.feature_id for m in measurements], means, cross, symmetrize(block))

    def register_feature(self, m: RelativeMeasurement) -> None:
        self.register_features([m])

    def update(self, measurements: Sequence[RelativeMeasurement]) -> None:
        """Stacked EKF update with a Joseph-form covariance."""
        if not measurements:
            return
        b = self.belief
        lin = self._linearization_point()
        k = len(measurements)
        starts = [b.feature_block(m.feature_id).start for m in measurements]
        cols = np.concatenate([np.arange(POSE_DIM)] + [np.arange(s, s + 2) for s in starts])

        # H restricted to the columns it touches
        h = np.zeros((2 * k, cols.size))
        innov = np.zeros(2 * k)
        q = np.zeros((2 * k, 2 * k))
        rt_now = rot(b.mean[2]).T
        for i, (m, s) in enumerate(zip(measurements, starts)):
            rows = slice(2 * i, 2 * i + 2)
            pf_lin = lin[s : s + 2]
            rt = rot(lin[2]).T
            h[rows, :2] = -rt
            h[rows, 2] = rt @ J.T @ (pf_lin - lin[:2])
            h[rows, POSE_DIM + 2 * i : POSE_DIM + 2 * i + 2] = rt
            innov[rows] = m.z - rt_now @ (b.mean[s : s + 2] - b.mean[:2])
            q[rows, rows] = m.cov

        u = b.cov[:, cols] @ h.T  # P H^T
        s_mat = symmetrize(h @ u[cols] + q)
        check_condition(s_mat, "innovation covariance")
        gain = linalg.solve(s_mat, u.T, assume_a="pos").T
        b.mean = b.mean + gain @ innov
        b.mean[2] = wrap_angle(b.mean[2])
        # Joseph form (I - KH) P (I - KH)^T + K Q K^T, expanded as P + Z + Z^T
        # with Z = (K S / 2 - P H^T) K^T, so the result is exactly symmetric
        z = (0.5 * gain @ s_mat - u) @ gain.T
        z += z.T
        b.cov = b.cov + z

    def step(self, odo: OdometryReading, dt: float, batch: Sequence[RelativeMeasurement]) -> None:
        """Propagate, register unseen features from their first sighting, update with the rest."""
        self.propagate(odo, dt)
        self.observe(batch)

    def observe(self, batch: Sequence[RelativeMeasurement]) -> None:
        known = [m for m in batch if m.feature_id in self.belief.registry]
        fresh = [m for m in batch if m.feature_id not in self.belief.registry]
        self.register_features(fresh)
        self.update(known)

    def estimate_globals(self) -> tuple[Pose, dict[int, np.ndarray]]:
        b = self.belief
        return b.pose, {fid: b.mean[s : s + 2].copy() for fid, s in b.registry.items()}

    def nullspace_basis(self) -> np.ndarray:
        return nullspace_basis(self.belief)


class FirstEstimateEKF(ClassicEKF):
    """Classic EKF whose Jacobians use first-available estimates.

    Feature positions are frozen at their registration value; the pose
    displacement in the transition matrix is the difference of successive
    propagated (prior) positions, so transition matrices chain exactly.
    """

    name = "fej"

    def __init__(self, pose0: Pose, Q_v, Q_w: float, pose_cov=None):
        super().__init__(pose0, Q_v, Q_w, pose_cov)
        self.first_features: dict[int, np.ndarray] = {}
        self.prior_pose = self.belief.mean[:POSE_DIM].copy()

    def _propagation_displacement(self, p_prev, p_next):
        return p_next, self.prior_pose[:2]

    def propagate(self, odo: OdometryReading, dt: float) -> None:
        super().propagate(odo, dt)
        self.prior_pose = self.belief.mean[:POSE_DIM].copy()

    def register_features(self, measurements: Sequence[RelativeMeasurement]) -> None:
        super().register_features(measurements)
        for m in measurements:
            s = self.belief.registry[m.feature_id]
            self.first_features.setdefault(m.feature_id, self.belief.mean[s : s + 2].copy())

    def _linearization_point(self) -> np.ndarray:
        lin = self.belief.mean.copy()
        lin[:POSE_DIM] = self.prior_pose
        for fid, s in self.belief.registry.items():
            lin[s : s + 2] = self.first_features[fid]
        return lin

    def linearization_point(self) -> np.ndarray:
        """State at which the next measurement Jacobian is evaluated."""
        return self._linearization_point()


class ReducedEKF:
    """EKF on ``(p, theta, z_1, ...)`` with the conditional-preserving update.

    ``z_model`` selects how relative features move between steps:

    ``"exact"``
        ``z <- R(dtheta)^T (z - dd)``, the map induced by the Euler pose
        step, so a noiseless run tracks an Euler-chain trajectory exactly.
    ``"linear"``
        ``z <- (I - dtheta J) z - dd``, forward Euler on ``dz/dt = -v - w J z``.
    """

    name = "reduced"
    coordinates = Coordinates.RELATIVE_FEATURES

    def __init__(self, pose0: Pose, Q_v, Q_w: float, pose_cov=None, z_model: str = "exact"):
        if z_model not in ("exact", "linear"):
            raise ValueError(f"unknown z_model {z_model!r}")
        self.belief = initial_belief(self.coordinates, pose0, pose_cov)
        self.Q_u = _control_cov(Q_v, Q_w)
        self.z_model = z_model

    def propagate(self, odo: OdometryReading, dt: float) -> None:
        b = self.belief
        p, th = b.mean[:2].copy(), b.mean[2]
        dd = np.asarray(odo.v_m, dtype=float) * dt
        dth = odo.w_m * dt
        p_next = p + rot(th) @ dd
        z = b.mean[POSE_DIM:].reshape(-1, 2)

        if self.z_model == "exact":
            m = rot(dth).T
            z_next = (z - dd) @ m.T
            d_nv = -dt * m
            d_nw = -dt * (z_next @ J.T)
        else:
            m = np.eye(2) - dth * J
            z_next = z - dth * (z @ J.T) - dd
            d_nv = -dt * np.eye(2)
            d_nw = -dt * (z @ J.T)

        # noise Jacobian against (n_v, n_w); pose rows as in the global model
        g = np.zeros((b.dim, 3))
        g[:POSE_DIM] = _noise_jacobian_pose(th, dt)
        g[POSE_DIM::2, :2] = d_nv[0]
        g[POSE_DIM + 1 :: 2, :2] = d_nv[1]
        g[POSE_DIM::2, 2] = d_nw[:, 0]
        g[POSE_DIM + 1 :: 2, 2] = d_nw[:, 1]

        phi = pose_transition(p_next, p)
        cov = _block_transform(b.cov, phi, m)
        cov += g @ self.Q_u @ g.T
        b.cov = cov
        b.mean = np.concatenate([p_next, [wrap_angle(th + dth)], z_next.ravel()])

    def register_features(self, measurements: Sequence[RelativeMeasurement]) -> None:
        """New relative features enter independent of the existing state."""
        if not measurements:
            return
        b = self.belief
        _check_new(b, measurements)
        k = len(measurements)
        means = np.array([m.z for m in measurements])
        block = linalg.block_diag(*[m.cov for m in measurements])
        _append_blocks(b, [m.feature_id for m in measurements], means, np.zeros((2 * k, b.dim)), block)

    def register_feature(self, m: RelativeMeasurement) -> None:
        self.register_features([m])

    def partition(self) -> Partition:
        return Partition.leading(POSE_DIM, self.belief.dim)

    def update(self, measurements: Sequence[RelativeMeasurement], method: str = "moment") -> None:
        if not measurements:
            return
        b = self.belief
        k = len(measurements)
        n_obs = b.dim - POSE_DIM
        c = np.zeros((2 * k, n_obs))
        q = np.zeros((2 * k, 2 * k))
        z = np.zeros(2 * k)
        for i, m in enumerate(measurements):
            s = b.feature_block(m.feature_id).start - POSE_DIM
            c[2 * i : 2 * i + 2, s : s + 2] = np.eye(2)
            q[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = m.cov
            z[2 * i : 2 * i + 2] = m.z
        post = reduced_bayes_update(b.as_gaussian(), self.partition(), c, q, z, method=method)
        b.mean = post.mean
        b.mean[2] = wrap_angle(b.mean[2])
        b.cov = post.cov

    step = ClassicEKF.step
    observe = ClassicEKF.observe

    def estimate_globals(self) -> tuple[Pose, dict[int, np.ndarray]]:
        b = self.belief
        pose = b.pose
        r = pose.R
        return pose, {fid: pose.p + r @ b.mean[s : s + 2] for fid, s in b.registry.items()}

    def nullspace_basis(self) -> np.ndarray:
        return nullspace_basis(self.belief)


def _block_transform(cov: np.ndarray, phi_pose: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``Phi cov Phi^T`` for ``Phi = blockdiag(phi_pose, m, m, ..., m)``."""
    n = cov.shape[0]
    k = (n - POSE_DIM) // 2
    left = np.empty_like(cov)
    left[:POSE_DIM] = phi_pose @ cov[:POSE_DIM]
    left[POSE_DIM:] = (m @ cov[POSE_DIM:].reshape(k, 2, n)).reshape(n - POSE_DIM, n)
    out = np.empty_like(cov)
    out[:, :POSE_DIM] = left[:, :POSE_DIM] @ phi_pose.T
    out[:, POSE_DIM:] = (left[:, POSE_DIM:].reshape(n, k, 2) @ m.T).reshape(n, n - POSE_DIM)
    return out


FILTERS = {cls.name: cls for cls in (ClassicEKF, FirstEstimateEKF, ReducedEKF)}


# -- belief snapshots --------------------------------------------------------


def write_belief(b: FilterBelief, path) -> None:
    """CSV snapshot: one row per state index with its owner, mean and covariance row."""
    owner = ["pose"] * POSE_DIM + [""] * (b.dim - POSE_DIM)
    for fid, s in b.registry.items():
        owner[s] = owner[s + 1] = str(fid)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["coordinates", b.coordinates.value])
        writer.writerow(["index", "owner", "mean"] + [f"c{j}" for j in range(b.dim)])
        for i in range(b.dim):
            writer.writerow([i, owner[i], repr(float(b.mean[i]))] + [repr(float(x)) for x in b.cov[i]])


def read_belief(path) -> FilterBelief:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    coords = Coordinates(rows[0][1])
    body = rows[2:]
    mean = np.array([float(r[2]) for r in body])
    cov = np.array([[float(x) for x in r[3:]] for r in body]).reshape(len(body), len(body))
    registry = {}
    for r in body:
        if r[1] not in ("pose", "") and int(r[1]) not in registry:
            registry[int(r[1])] = int(r[0])
    return FilterBelief(coords, mean, cov, registry)
