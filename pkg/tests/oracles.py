"""Independent reference implementations used only by the tests.

The Kalman references do not touch the filter under test; the NEES driver
runs it against a truth process generated here.
"""

import numpy as np

from gpslio.ekf import ACC, N_STATES, POS, VEL, Ekf15, make_gps_measurement, motion_model, process_noise


def kalman_cv_1d(z, dt, q_pos, q_vel, r, x0, P0):
    """Textbook 2-state constant-velocity Kalman filter (simple form update)."""
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = np.diag([q_pos, q_vel]) * dt
    H = np.array([[1.0, 0.0]])
    x = np.array(x0, dtype=float)
    P = np.array(P0, dtype=float)
    xs, Ps = [], []
    for zk in z:
        x = F @ x
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + r
        K = P @ H.T / S
        x = x + (K * (zk - H @ x)).ravel()
        P = (np.eye(2) - K @ H) @ P
        xs.append(x.copy())
        Ps.append(P.copy())
    return np.array(xs), np.array(Ps)


def random_psd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T / n + 1e-3 * np.eye(n))


# -- NEES driver -------------------------------------------------------------

LIN = np.r_[0:3, 6:9, 12:15]  # position, velocity, acceleration: the linear sub-system


def nees_monte_carlo(runs=100, steps=150, dt=0.1, seed=2024):
    """NEES of the 9 linear states at each step, averaged over runs.

    With zero attitude and zero body rates the motion model reduces to a
    linear constant-acceleration system; truth is propagated with the same
    model plus noise drawn from Q dt, and GPS position is the measurement.
    """
    q = np.zeros(N_STATES)
    q[POS], q[VEL], q[ACC] = 0.01, 0.04, 0.09
    Q = process_noise(q, floor=0.0)
    P0 = np.zeros((N_STATES, N_STATES))
    P0[LIN, LIN] = np.repeat([0.5, 0.2, 0.1], 3)
    R = np.diag([0.2, 0.3, 0.25])
    rng = np.random.default_rng(seed)
    nees = np.zeros((runs, steps))
    qd = np.sqrt(np.diag(Q)[LIN] * dt)
    for k in range(runs):
        truth = np.zeros(N_STATES)
        truth[LIN] = rng.normal(0.0, np.sqrt(np.diag(P0)[LIN]))
        f = Ekf15(np.zeros(N_STATES), P0, Q, 0.0)
        for i in range(steps):
            truth = motion_model(truth, dt)
            truth[LIN] += qd * rng.standard_normal(9)
            z = truth[POS] + rng.multivariate_normal(np.zeros(3), R)
            f.update(make_gps_measurement(z, R, (i + 1) * dt))
            e = (truth - f.x)[LIN]
            nees[k, i] = e @ np.linalg.solve(f.P[np.ix_(LIN, LIN)], e)
    return nees
