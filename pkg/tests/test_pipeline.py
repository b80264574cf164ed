import math

import numpy as np
import pytest

from gpslio.gate import FUSION, LIO, GatedPose, GateThresholds, UncertaintyDiag
from gpslio.pipeline import (FusedTrajectory, PipelineConfig, UnsortedInputError, assemble_map,
                             map_dispersion, read_point_cloud, read_trajectory_csv, register_scans, run,
                             voxel_downsample, write_point_cloud, write_trajectory_csv)
from gpslio.records import SensorRecord, merge_streams
from gpslio.rotations import euler_to_quat
from gpslio.simulator import Scan, Scenario, simulate

NOISELESS = dict(gps_noise_sigma=0.0, imu_orientation_sigma=0.0, imu_gyro_sigma=0.0, imu_accel_sigma=0.0,
                 lio_drift_rate=0.0, lio_bias_walk_sigma=0.0, lio_yaw_drift_rate=0.0)


@pytest.fixture(scope="module")
def dropout_sim():
    return simulate(Scenario(duration=40.0, dropout_windows=[(10.0, 15.0), (25.0, 28.0)]))


@pytest.fixture(scope="module")
def dropout_run(dropout_sim):
    return run(dropout_sim.records(include_truth=False))


def _rmse(traj, truth):
    e = traj.positions - truth.position[truth.indices_for(traj.timestamps)]
    return float(np.sqrt(np.mean(np.sum(e * e, axis=1))))


def test_noiseless_log_matches_truth():
    r = simulate(Scenario(duration=40.0, dropout_windows=[], **NOISELESS))
    traj = run(r.records(include_truth=False))
    assert _rmse(traj, r.truth) < 1e-3


def test_no_gps_is_pure_lio(dropout_sim):
    recs = [x for x in dropout_sim.records() if x.kind != "gps"]
    traj = run(recs)
    lio = np.array([l.position for l in dropout_sim.lio])
    np.testing.assert_array_equal(traj.positions, lio)
    assert all(p.pre_datum for p in traj.poses)
    assert traj.warnings and traj.datum is None


def test_cadence_and_timestamps(dropout_sim, dropout_run):
    lio_t = [l.timestamp for l in dropout_sim.lio]
    assert len(dropout_run) == len(lio_t)
    assert list(dropout_run.timestamps) == lio_t
    assert np.all(np.diff(dropout_run.timestamps) > 0)


def test_unsorted_input_rejected(dropout_sim):
    recs = dropout_sim.records(include_truth=False)[:50]
    recs[10], recs[30] = recs[30], recs[10]
    with pytest.raises(UnsortedInputError):
        run(recs)


def test_dropouts_detected_and_gate_follows(dropout_sim, dropout_run):
    gps_period = 1.0 / dropout_sim.scenario.sample_rates["gps"]
    lio_period = 1.0 / dropout_sim.scenario.sample_rates["lio"]
    ivs = dropout_run.dropout_intervals
    assert len(ivs) == 2
    for iv, (a, b) in zip(ivs, dropout_sim.scenario.dropout_windows):
        assert abs(iv.start - a) <= gps_period + 1e-9 and abs(iv.end - b) <= gps_period + 1e-9
    for pose in dropout_run.poses:
        inside = any(iv.start - lio_period <= pose.timestamp <= iv.end + lio_period for iv in ivs)
        strictly_inside = any(iv.start <= pose.timestamp <= iv.end for iv in ivs)
        if strictly_inside:
            assert pose.sources == (LIO, LIO, LIO)
        elif not inside:
            assert pose.sources == (FUSION, FUSION, FUSION)


def test_reanchoring_keeps_switch_jumps_small(dropout_run):
    assert dropout_run.switches
    assert max(s.jump for s in dropout_run.switches) < 1.0


def test_gated_beats_lio_only(dropout_sim, dropout_run):
    lio = run(dropout_sim.records(include_truth=False), PipelineConfig(mode="lio"))
    assert _rmse(dropout_run, dropout_sim.truth) < _rmse(lio, dropout_sim.truth)


def test_modes(dropout_sim):
    recs = dropout_sim.records(include_truth=False)[:3000]
    lio = run(recs, PipelineConfig(mode="lio"))
    np.testing.assert_array_equal(lio.positions, [l.position for l in dropout_sim.lio[:len(lio)]])
    fus = run(recs, PipelineConfig(mode="fusion"))
    assert all(p.sources == (FUSION,) * 3 for p in fus.poses)


def test_replay_and_causality(dropout_sim, dropout_run, tmp_path):
    recs = dropout_sim.records(include_truth=False)
    again = run(recs)
    write_trajectory_csv(tmp_path / "a.csv", dropout_run)
    write_trajectory_csv(tmp_path / "b.csv", again)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    prefix = run(recs[: len(recs) // 3])
    n = len(prefix)
    np.testing.assert_array_equal(prefix.positions, dropout_run.positions[:n])


def test_stream_order_independence(dropout_sim, dropout_run):
    r = dropout_sim
    merged = merge_streams([SensorRecord(x.timestamp, x) for x in r.lio],
                           [SensorRecord(x.timestamp, x) for x in r.gps],
                           [SensorRecord(x.timestamp, x) for x in r.imu])
    np.testing.assert_array_equal(run(merged).positions, dropout_run.positions)


def test_gps_message_uncertainty_source(dropout_sim):
    traj = run(dropout_sim.records(include_truth=False), PipelineConfig(uncertainty_source="gps_message"))
    assert len(traj.dropout_intervals) == 2


def test_noisy_first_fix_does_not_anchor_datum():
    s = Scenario(duration=20.0, dropout_windows=[(0.0, 3.0)])
    traj = run(simulate(s).records(include_truth=False))
    assert traj.counters["gps_rejected_before_datum"] > 0
    assert traj.poses[0].pre_datum and not traj.poses[-1].pre_datum


def test_retro_anchor_shifts_pre_datum_poses():
    s = Scenario(duration=20.0, dropout_windows=[(0.0, 3.0)])
    recs = simulate(s).records(include_truth=False)
    fwd = run(recs)
    retro = run(recs, PipelineConfig(retro_anchor=True))
    assert not any(p.pre_datum for p in retro.poses)
    k = sum(p.pre_datum for p in fwd.poses)
    shift = retro.positions[:k] - fwd.positions[:k]
    np.testing.assert_allclose(shift, np.broadcast_to(shift[0], shift.shape), atol=1e-9)


def test_threshold_controls_gate(dropout_sim):
    recs = dropout_sim.records(include_truth=False)[:2000]
    huge = run(recs, PipelineConfig(thresholds=GateThresholds(1e9, 1e9, 1e9)))
    assert all(p.sources == (FUSION,) * 3 for p in huge.poses)


# -- map assembly ---------------------------------------------------------------

def _traj(samples):
    t = FusedTrajectory()
    for ts, pos, rpy in samples:
        t.poses.append(GatedPose(ts, tuple(pos), euler_to_quat(rpy), FUSION, FUSION, FUSION))
        t.uncertainties.append(UncertaintyDiag(0.0, 0.0, 0.0))
    return t


def test_identity_registration():
    pts = np.array([[1.0, 2.0, 3.0], [-4.0, 0.5, 0.0]])
    cloud = assemble_map(_traj([(0.0, (0, 0, 0), (0, 0, 0)), (1.0, (0, 0, 0), (0, 0, 0))]),
                         [Scan(0.5, pts, np.arange(2))])
    np.testing.assert_array_equal(cloud, pts)


def test_rigid_consistency_two_poses():
    wall = np.array([[10.0, y, z] for y in (-1.0, 0.0, 1.0) for z in (0.0, 2.0)])
    traj = _traj([(0.0, (0, 0, 0), (0, 0, 0.3)), (1.0, (5, 0, 0), (0, 0, 0.3))])
    R = np.array(traj.poses[0].orientation)
    from scipy.spatial.transform import Rotation
    Rm = Rotation.from_quat(R).as_matrix()
    body0 = wall @ Rm               # Rm^T (wall - p0) row-wise
    body1 = (wall - [5.0, 0, 0]) @ Rm
    reg = register_scans(traj, [Scan(0.0, body0, np.arange(6)), Scan(1.0, body1, np.arange(6))])
    np.testing.assert_allclose(reg[0][1], reg[1][1], atol=1e-9)
    assert map_dispersion(traj, [Scan(0.0, body0, np.arange(6)), Scan(1.0, body1, np.arange(6))]) < 1e-9


def test_interpolated_pose_between_samples():
    traj = _traj([(0.0, (0, 0, 0), (0, 0, 0)), (2.0, (2, 0, 0), (0, 0, np.pi / 2))])
    cloud = assemble_map(traj, [Scan(1.0, np.array([[1.0, 0, 0]]), np.zeros(1, int))])
    c = math.cos(math.pi / 4)
    np.testing.assert_allclose(cloud, [[1.0 + c, c, 0.0]], atol=1e-12)


def test_scan_outside_range_skipped():
    traj = _traj([(1.0, (0, 0, 0), (0, 0, 0)), (2.0, (0, 0, 0), (0, 0, 0))])
    assert len(register_scans(traj, [Scan(0.5, np.zeros((1, 3)), np.zeros(1, int))])) == 0


def test_voxel_downsample_deterministic():
    pts = np.array([[0.01, 0, 0], [0.02, 0, 0], [1.5, 0, 0]])
    np.testing.assert_array_equal(voxel_downsample(pts, 1.0), pts[[0, 2]])
    np.testing.assert_array_equal(voxel_downsample(pts, 0.0), pts)


def test_file_round_trips(dropout_run, tmp_path):
    write_trajectory_csv(tmp_path / "t.csv", dropout_run)
    tf = read_trajectory_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(tf.positions, dropout_run.positions)
    np.testing.assert_array_equal(tf.variances, dropout_run.variances)
    assert tf.datum == dropout_run.datum
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header.split()[1:] == ("timestamp x y z qx qy qz qw source_x source_y source_z "
                                  "var_x var_y var_z").split()
    pts = np.random.default_rng(0).standard_normal((20, 3))
    write_point_cloud(tmp_path / "m.xyz", pts)
    np.testing.assert_array_equal(read_point_cloud(tmp_path / "m.xyz"), pts)
    assert (tmp_path / "m.xyz").read_text().splitlines()[0] == "20"
