import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpslio.evaluation import (Matches, MetricError, TrajectoryPair, associate, end_to_end_error, evaluate,
                               multi_run_dispersion, rmse, truth_in_session_frame, umeyama_alignment)
from gpslio.frames import make_datum
from gpslio.geodesy import UtmCoord
from gpslio.pipeline import PipelineConfig, run
from gpslio.rotations import euler_to_matrix
from gpslio.simulator import Scenario, generate_ground_truth, simulate, simulate_lio


def _pair(et, ep, rt, rp, tol=0.02):
    return TrajectoryPair(np.asarray(et, float), np.asarray(ep, float), np.asarray(rt, float),
                          np.asarray(rp, float), tol)


def test_identical_grids_match_one_to_one():
    t = np.arange(10) * 0.1
    p = np.random.default_rng(0).standard_normal((10, 3))
    m = associate(_pair(t, p, t, p))
    assert len(m) == 10 and m.unmatched == 0
    assert rmse(m) == 0.0


def test_association_against_brute_force():
    rt = np.arange(0, 10, 0.1)
    et = np.arange(0, 10, 1 / 9)
    tol = 0.01
    m = associate(_pair(et, np.zeros((len(et), 3)), rt, np.zeros((len(rt), 3)), tol))
    brute = sum(1 for a in et if np.min(np.abs(rt - a)) <= tol)
    assert len(m) == brute and m.unmatched == len(et) - brute
    assert 0 < brute < len(et)


def test_empty_and_unmatched_are_errors():
    with pytest.raises(MetricError):
        associate(_pair([], np.zeros((0, 3)), [0.0], [[0, 0, 0]]))
    with pytest.raises(MetricError):
        associate(_pair([5.0], [[0, 0, 0]], [0.0], [[0, 0, 0]]))
    with pytest.raises(MetricError):
        associate(_pair([0.0], [[0, 0, 0]], [0.0], [[0, 0, 0]], tol=0.0))


def test_rmse_closed_forms():
    t = np.arange(5.0)
    p = np.zeros((5, 3))
    assert rmse(associate(_pair(t, p + [1, 0, 0], t, p))) == pytest.approx(1.0)
    m = Matches(np.array([[0.0, 0, 0], [2.0, 0, 0]]), np.zeros((2, 3)), np.arange(2.0), 0)
    assert rmse(m) == pytest.approx(math.sqrt(2))
    m3 = Matches(np.array([[0.0, 0, 5.0]]), np.zeros((1, 3)), np.zeros(1), 0)
    assert rmse(m3, planar=True) == 0.0 and rmse(m3) == 5.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rmse_rigid_invariance_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    t = np.arange(20) * 0.04
    a, b = rng.standard_normal((20, 3)), rng.standard_normal((20, 3))
    R = euler_to_matrix(*rng.uniform(-1, 1, 3))
    s = rng.standard_normal(3) * 100
    r0 = rmse(associate(_pair(t, a, t, b)))
    assert rmse(associate(_pair(t, a @ R.T + s, t, b @ R.T + s))) == pytest.approx(r0, rel=1e-9)
    assert rmse(associate(_pair(t, b, t, a))) == pytest.approx(r0, rel=1e-12)


def test_end_to_end():
    p = np.array([[0.0, 0, 0], [3, 4, 0], [0, 0, 0]])
    assert end_to_end_error(p, p[0]) == 0.0
    assert end_to_end_error(p[:2], p[0]) == 5.0


def test_dispersion_periodic_and_offset():
    t = np.arange(0, 30.0001, 0.1)
    circle = np.stack([np.cos(2 * np.pi * t / 10), np.sin(2 * np.pi * t / 10), 0 * t], axis=1)
    assert multi_run_dispersion(t, circle, 10.0) == pytest.approx(0.0, abs=1e-9)
    shifted = circle.copy()
    shifted[(t >= 10) & (t < 20)] += [0.5, 0, 0]
    assert multi_run_dispersion(t[t <= 20], shifted[t <= 20], 10.0) == pytest.approx(0.5)
    with pytest.raises(MetricError):
        multi_run_dispersion(t[t < 15], circle[t < 15], 10.0)


def test_out_and_back_lio_end_to_end_closed_form():
    s = Scenario(trajectory_kind="straight_out_and_back", loop_length=1000.0, duration=400.0, speed=5.0,
                 dropout_windows=[], lio_bias_walk_sigma=0.0, lio_drift_rate=0.01)
    tr = generate_ground_truth(s)
    lio = simulate_lio(tr, s)
    # 1 km out and 1 km back, 1% of every metre travelled: about 20 m
    err = end_to_end_error([l.position for l in lio], tr.position[0])
    assert err == pytest.approx(20.0, rel=0.01)


def test_out_and_back_fused_end_to_end_small():
    s = Scenario(trajectory_kind="straight_out_and_back", loop_length=1000.0, duration=400.0,
                 dropout_windows=[])
    r = simulate(s)
    traj = run(r.records(include_truth=False))
    assert end_to_end_error(traj.positions, traj.positions[0]) < 5 * s.gps_noise_sigma


def test_umeyama_recovers_transform():
    rng = np.random.default_rng(4)
    src = rng.standard_normal((50, 3))
    R = euler_to_matrix(0.3, -0.2, 1.1)
    R2, t2 = umeyama_alignment(src, src @ R.T + [1, 2, 3])
    np.testing.assert_allclose(R2, R, atol=1e-12)
    np.testing.assert_allclose(t2, [1, 2, 3], atol=1e-12)


def test_session_frame_identity_when_datum_is_truth():
    utm = UtmCoord(500000.0, 4e6, 10.0, 31, "north")
    rpy = (0.01, 0.02, 0.7)
    p = np.random.default_rng(2).standard_normal((10, 3))
    out = truth_in_session_frame(p, utm.vector, rpy, make_datum(utm, rpy))
    np.testing.assert_allclose(out, p, atol=1e-8)


def test_evaluate_reports_all_fields():
    t = np.arange(0, 20.0001, 0.04)
    p = np.stack([np.cos(t), np.sin(t), 0 * t], axis=1)
    m = evaluate(_pair(t, p, t, p), loop_period=2 * np.pi)
    d = m.to_dict()
    assert set(d) == {"rmse", "rmse_x", "rmse_y", "rmse_z", "end_to_end", "multi_run_dispersion",
                      "matches", "unmatched"}
    assert d["rmse"] == 0.0 and d["matches"] == len(t)
