import pickle

import numpy as np
import pytest

from reduced_ekf.experiment import (
    METHODS,
    ErrorTrace,
    ExperimentConfig,
    aggregate,
    feature_density,
    full_grid,
    mean_visible,
    build_trajectory,
    paper_grid,
    realization_rng,
    run_filter,
    run_realization,
    simulate_realization,
)
from reduced_ekf.scenario import scatter_features
from reduced_ekf.sensors import CameraRig

SMALL_LINE = dict(trajectory="line", line_length=4.0, realizations=2)
SMALL_CIRCLE = dict(trajectory="circle", circle_radius=2.0, circle_speed=1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(trajectory="spiral")
    with pytest.raises(ValueError):
        ExperimentConfig(density="medium")
    with pytest.raises(ValueError):
        ExperimentConfig(realizations=0)
    with pytest.raises(ValueError):
        ExperimentConfig(qz=0.0)


def test_cell_key_and_seed_streams():
    cfg = ExperimentConfig(trajectory="circle", density="high", freq_hz=20, qz=2e-4)
    assert cfg.cell_key == "circle/high/20/0.0002"
    a = realization_rng(cfg, 0).standard_normal(5)
    b = realization_rng(cfg, 1).standard_normal(5)
    c = realization_rng(ExperimentConfig(trajectory="circle", density="high", freq_hz=20, qz=4e-4), 0).standard_normal(5)
    assert not np.allclose(a, b) and not np.allclose(a, c)
    np.testing.assert_array_equal(a, realization_rng(cfg, 0).standard_normal(5))


def test_density_calibration_hits_visible_target():
    cfg = ExperimentConfig(**SMALL_CIRCLE)
    traj = build_trajectory(cfg)
    dens = feature_density(cfg)
    counts = [
        mean_visible(traj, scatter_features(traj, dens, cfg.corridor_halfwidth, np.random.default_rng(100 + s)), CameraRig())
        for s in range(5)
    ]
    assert np.mean(counts) == pytest.approx(20, rel=0.15)
    high = ExperimentConfig(**SMALL_CIRCLE, density="high")
    assert feature_density(high) == pytest.approx(2 * dens)


def test_noiseless_run_tracks_truth():
    cfg = ExperimentConfig(**SMALL_CIRCLE)
    traces = run_realization(cfg, 0, noiseless=True)
    for method, tr in traces.items():
        assert not tr.diverged
        assert np.max(tr.dp) < 1e-3, method
        assert np.max(tr.dth) < 1e-3, method


def test_realization_is_deterministic():
    cfg = ExperimentConfig(**SMALL_LINE)
    a = run_realization(cfg, 1)
    b = run_realization(cfg, 1)
    for m in METHODS:
        np.testing.assert_array_equal(a[m].dp, b[m].dp)
        np.testing.assert_array_equal(a[m].dth, b[m].dth)


def test_stream_is_shared_and_left_untouched():
    cfg = ExperimentConfig(**SMALL_LINE)
    scenario, stream, traces = simulate_realization(cfg, 0)
    frozen = pickle.dumps(stream)
    again = {m: run_filter(m, scenario, stream) for m in METHODS}
    assert pickle.dumps(stream) == frozen
    _, stream2, _ = simulate_realization(cfg, 0)
    assert pickle.dumps(stream2) == frozen
    for m in METHODS:
        np.testing.assert_array_equal(again[m].dp, traces[m].dp)


def test_error_metrics_are_bounded():
    cfg = ExperimentConfig(**SMALL_LINE)
    for tr in run_realization(cfg, 0).values():
        assert np.all(tr.dp >= 0)
        assert np.all((tr.dth >= 0) & (tr.dth <= np.pi))
        assert tr.t[0] == pytest.approx(0.1)


def _trace(dp, dth, diverged=False):
    return ErrorTrace(np.arange(1, len(dp) + 1) * 0.1, np.array(dp, float), np.array(dth, float), diverged)


def test_aggregate_by_hand():
    traces = [_trace([1.0, 3.0], [0.1, 0.3]), _trace([2.0, 2.0], [0.0, 0.2])]
    # per-trace means: (2, 0.2) and (2, 0.1)
    assert aggregate(traces) == (pytest.approx(2.0), pytest.approx(0.15), 2, 0)


def test_aggregate_single_and_replicated():
    tr = _trace([0.5, 1.5, 1.0], [0.01, 0.02, 0.03])
    one = aggregate([tr])
    assert one[:2] == (pytest.approx(1.0), pytest.approx(0.02))
    assert aggregate([tr, tr, tr])[:2] == one[:2]


def test_aggregate_skips_diverged():
    traces = [_trace([1.0], [0.1]), _trace([np.nan], [np.nan], diverged=True)]
    assert aggregate(traces) == (pytest.approx(1.0), pytest.approx(0.1), 1, 1)
    with pytest.raises(RuntimeError):
        aggregate([_trace([np.nan], [np.nan], diverged=True)])


def test_paper_grid_shape():
    grid = paper_grid()
    assert len(grid) == 36
    assert len({c.cell_key for c in grid}) == 36
    assert all(c.realizations == 20 for c in grid)


def test_empty_grid():
    assert full_grid([]) == []


def test_grid_rows_stable_and_parallel_independent():
    cells = [ExperimentConfig(**SMALL_LINE, qz=q) for q in (1e-4, 4e-4)]
    serial = full_grid(cells, jobs=1)
    parallel = full_grid(cells, jobs=2)
    assert serial == parallel
    assert [(r.qz, r.method) for r in serial] == [(q, m) for q in (1e-4, 4e-4) for m in METHODS]
    assert all(r.n_ok == 2 and r.n_diverged == 0 for r in serial)
