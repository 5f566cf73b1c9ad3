"""Monte Carlo comparison of the three filters on shared sensor streams."""

from __future__ import annotations

import functools
import itertools
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .filters import FILTERS
from .scenario import (
    GENERAL_TOTAL_TIME,
    GENERAL_WAYPOINTS,
    Scenario,
    Trajectory,
    circle_trajectory,
    line_trajectory,
    scatter_features,
    spline_trajectory,
)
from .se2 import wrap_angle
from .sensors import CameraRig, OdometryReading, RelativeMeasurement, measure_features, odometry_read, visible_features

log = logging.getLogger(__name__)

METHODS = ("ekf", "fej", "reduced")
TRAJECTORIES = ("line", "circle", "general")
DENSITIES = ("low", "high")
FREQUENCIES = (10.0, 20.0)
QZ_LEVELS = (1e-4, 2e-4, 4e-4)

#: Average number of features visible per step, per trajectory and density tier.
TARGET_VISIBLE = {
    ("line", "low"): 20,
    ("line", "high"): 40,
    ("circle", "low"): 20,
    ("circle", "high"): 40,
    ("general", "low"): 25,
    ("general", "high"): 50,
}


@dataclass(frozen=True)
class ExperimentConfig:
    trajectory: str = "circle"
    density: str = "low"
    freq_hz: float = 10.0
    qz: float = 1e-4
    realizations: int = 20
    base_seed: int = 0
    qv: float = 0.01
    qw: float = 0.01
    line_length: float = 60.0
    line_speed: float = 1.0
    circle_radius: float = 10.0
    circle_speed: float = 1.57
    general_time: float = GENERAL_TOTAL_TIME
    corridor_halfwidth: float = 5.0
    visible_target: Optional[float] = None

    def __post_init__(self):
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"unknown trajectory {self.trajectory!r}; expected one of {TRAJECTORIES}")
        if self.density not in DENSITIES:
            raise ValueError(f"unknown density tier {self.density!r}; expected one of {DENSITIES}")
        if self.realizations < 1:
            raise ValueError("realizations must be at least 1")
        if not (self.freq_hz > 0 and self.qz > 0 and self.qv > 0 and self.qw > 0):
            raise ValueError("frequency and noise levels must be positive")

    @property
    def cell_key(self) -> str:
        return f"{self.trajectory}/{self.density}/{self.freq_hz:g}/{self.qz:g}"

    @property
    def cell_id(self) -> int:
        return zlib.crc32(self.cell_key.encode())

    @property
    def target_visible(self) -> float:
        if self.visible_target is not None:
            return self.visible_target
        return TARGET_VISIBLE[(self.trajectory, self.density)]

    @property
    def Q_v(self) -> np.ndarray:
        return np.diag([self.qv, self.qv])


@dataclass
class ErrorTrace:
    t: np.ndarray
    dp: np.ndarray
    dth: np.ndarray
    diverged: bool = False

    @property
    def mean_dp(self) -> float:
        return float(np.mean(self.dp))

    @property
    def mean_dth(self) -> float:
        return float(np.mean(self.dth))


@dataclass(frozen=True)
class ResultRow:
    trajectory: str
    density: str
    freq_hz: float
    qz: float
    method: str
    mean_dp_m: float
    mean_dth_rad: float
    n_ok: int
    n_diverged: int


@dataclass
class SensorStream:
    """Everything the filters consume: an initial sighting batch, then one (odometry, batch) per step."""

    dt: float
    initial: list[RelativeMeasurement]
    odometry: list[OdometryReading] = field(default_factory=list)
    batches: list[list[RelativeMeasurement]] = field(default_factory=list)


def build_trajectory(cfg: ExperimentConfig) -> Trajectory:
    if cfg.trajectory == "line":
        return line_trajectory(cfg.line_length, cfg.line_speed, cfg.freq_hz)
    if cfg.trajectory == "circle":
        return circle_trajectory(cfg.circle_radius, cfg.circle_speed, cfg.freq_hz)
    return spline_trajectory(GENERAL_WAYPOINTS, cfg.general_time, cfg.freq_hz)


def mean_visible(traj: Trajectory, fmap, rig: CameraRig) -> float:
    counts = [len(visible_features(traj.pose(k), rig, fmap)) for k in range(1, traj.n_steps + 1)]
    return float(np.mean(counts)) if counts else 0.0


def calibrate_density(
    traj: Trajectory,
    target_visible: float,
    rig: CameraRig,
    corridor_halfwidth: float = 5.0,
    trial_density: float = 5.0,
    seeds: Sequence[int] = (0, 1, 2),
) -> float:
    """Features per metre of path that give ``target_visible`` features per step on average.

    The visible count is linear in density, so one scaled trial per seed suffices.
    """
    measured = [
        mean_visible(traj, scatter_features(traj, trial_density, corridor_halfwidth, np.random.default_rng([7919, s])), rig)
        for s in seeds
    ]
    avg = float(np.mean(measured))
    if avg <= 0:
        raise ValueError("no features visible along the trajectory; cannot calibrate density")
    return trial_density * target_visible / avg


@functools.lru_cache(maxsize=None)
def _cached_density(cfg_key: tuple, target: float) -> float:
    cfg = ExperimentConfig(**dict(cfg_key))
    traj = build_trajectory(cfg)
    return calibrate_density(traj, target, CameraRig(), cfg.corridor_halfwidth)


def feature_density(cfg: ExperimentConfig) -> float:
    # density depends only on the geometry, not on noise or seeds
    geometry = replace(cfg, qz=1e-4, realizations=1, base_seed=0, density="low", visible_target=None)
    return _cached_density(tuple(sorted(vars(geometry).items())), float(cfg.target_visible))


def realization_rng(cfg: ExperimentConfig, index: int) -> np.random.Generator:
    """Independent stream per (base_seed, cell, realization)."""
    return np.random.default_rng(np.random.SeedSequence([cfg.base_seed, cfg.cell_id, index]))


def make_scenario(cfg: ExperimentConfig, rng: np.random.Generator, seed: int = 0) -> Scenario:
    traj = build_trajectory(cfg)
    fmap = scatter_features(traj, feature_density(cfg), cfg.corridor_halfwidth, rng)
    return Scenario(traj, fmap, cfg.Q_v, cfg.qw, cfg.qz, seed=seed)


def simulate_stream(scenario: Scenario, rig: CameraRig, rng: np.random.Generator, noiseless: bool = False) -> SensorStream:
    """Draw the odometry and camera readings for a whole run."""
    traj = scenario.trajectory
    q_v = np.zeros((2, 2)) if noiseless else scenario.Q_v
    q_w = 0.0 if noiseless else scenario.Q_w
    stream = SensorStream(
        traj.dt,
        measure_features(traj.pose(0), rig, scenario.features, scenario.Q_z, rng, sample_noise=not noiseless),
    )
    for k in range(traj.n_steps):
        stream.odometry.append(odometry_read(traj.v[k], traj.w[k], q_v, q_w, rng))
        stream.batches.append(
            measure_features(traj.pose(k + 1), rig, scenario.features, scenario.Q_z, rng, sample_noise=not noiseless)
        )
    return stream


def run_filter(method: str, scenario: Scenario, stream: SensorStream) -> ErrorTrace:
    traj = scenario.trajectory
    flt = FILTERS[method](traj.pose(0), scenario.Q_v, scenario.Q_w)
    n = traj.n_steps
    t = (np.arange(n) + 1) * traj.dt
    dp = np.full(n, np.nan)
    dth = np.full(n, np.nan)
    k = -1
    try:
        flt.observe(stream.initial)
        for k in range(n):
            flt.step(stream.odometry[k], traj.dt, stream.batches[k])
            est = flt.belief.mean
            if not (np.all(np.isfinite(est[:3]))):
                raise FloatingPointError("non-finite pose estimate")
            truth = traj.poses[k + 1]
            dp[k] = math.hypot(est[0] - truth[0], est[1] - truth[1])
            dth[k] = abs(wrap_angle(est[2] - truth[2]))
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("%s diverged at step %d: %s", method, k, exc)
        return ErrorTrace(t, dp, dth, diverged=True)
    return ErrorTrace(t, dp, dth)


def simulate_realization(
    cfg: ExperimentConfig, index: int, methods: Sequence[str] = METHODS, noiseless: bool = False
) -> tuple[Scenario, SensorStream, dict[str, ErrorTrace]]:
    """Build realization ``index`` of ``cfg`` and run every filter in ``methods`` on one shared stream."""
    rng = realization_rng(cfg, index)
    scenario = make_scenario(cfg, rng, seed=index)
    stream = simulate_stream(scenario, CameraRig(), rng, noiseless=noiseless)
    return scenario, stream, {m: run_filter(m, scenario, stream) for m in methods}


def run_realization(
    cfg: ExperimentConfig, index: int, methods: Sequence[str] = METHODS, noiseless: bool = False
) -> dict[str, ErrorTrace]:
    return simulate_realization(cfg, index, methods, noiseless)[2]


def aggregate(traces: Sequence[ErrorTrace]) -> tuple[float, float, int, int]:
    """Mean over steps, then over non-diverged realizations: ``(dp, dth, n_ok, n_diverged)``."""
    ok = [tr for tr in traces if not tr.diverged]
    if not ok:
        raise RuntimeError(f"all {len(traces)} realizations diverged")
    return (
        float(np.mean([tr.mean_dp for tr in ok])),
        float(np.mean([tr.mean_dth for tr in ok])),
        len(ok),
        len(traces) - len(ok),
    )


def _realization_task(args) -> dict[str, ErrorTrace]:
    cfg, index = args
    return run_realization(cfg, index)


def run_cell(cfg: ExperimentConfig, jobs: int = 1) -> list[ResultRow]:
    return full_grid([cfg], jobs=jobs)


def full_grid(configs: Sequence[ExperimentConfig], jobs: int = 1) -> list[ResultRow]:
    """Run every cell and return rows ordered by (cell, method); independent of ``jobs``."""
    tasks = [(cfg, i) for cfg in configs for i in range(cfg.realizations)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_realization_task, tasks))
    else:
        results = [_realization_task(t) for t in tasks]

    rows = []
    pos = 0
    for cfg in configs:
        cell = results[pos : pos + cfg.realizations]
        pos += cfg.realizations
        for method in METHODS:
            dp, dth, n_ok, n_div = aggregate([r[method] for r in cell])
            rows.append(ResultRow(cfg.trajectory, cfg.density, cfg.freq_hz, cfg.qz, method, dp, dth, n_ok, n_div))
    return rows


def paper_grid(
    realizations: int = 20,
    base_seed: int = 0,
    trajectories: Iterable[str] = TRAJECTORIES,
    densities: Iterable[str] = DENSITIES,
    frequencies: Iterable[float] = FREQUENCIES,
    qz_levels: Iterable[float] = QZ_LEVELS,
    **overrides,
) -> list[ExperimentConfig]:
    return [
        ExperimentConfig(trajectory=t, density=d, freq_hz=f, qz=q, realizations=realizations, base_seed=base_seed, **overrides)
        for t, d, f, q in itertools.product(trajectories, densities, frequencies, qz_levels)
    ]
