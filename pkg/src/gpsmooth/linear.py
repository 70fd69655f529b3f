"""Textbook Kalman filter and RTS smoother, used as reference results.

Written directly in matrix form, independent of the generic filter and
backward-pass code, so that those can be checked against it.
"""

import numpy as np


def kalman_filter(A, C, Q, R, mean0, cov0, measurements):
    """Return predicted and filtered means/covariances for ``t = 1..T``.

    Index 0 of the filtered arrays is the prior.
    """
    A, C, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, C, Q, R))
    zs = np.asarray(measurements, dtype=float).reshape(len(measurements), -1)
    T, D = zs.shape[0], A.shape[0]
    xf = np.zeros((T + 1, D))
    Pf = np.zeros((T + 1, D, D))
    xp = np.zeros((T + 1, D))
    Pp = np.zeros((T + 1, D, D))
    xf[0] = mean0
    Pf[0] = cov0
    for t in range(1, T + 1):
        xp[t] = A @ xf[t - 1]
        Pp[t] = A @ Pf[t - 1] @ A.T + Q
        S = C @ Pp[t] @ C.T + R
        K = Pp[t] @ C.T @ np.linalg.inv(S)
        xf[t] = xp[t] + K @ (zs[t - 1] - C @ xp[t])
        Pf[t] = Pp[t] - K @ S @ K.T
    return xp, Pp, xf, Pf


def rts_smoother(A, Q, xf, Pf):
    """Classical RTS recursion on Kalman filter output (index 0 = prior)."""
    A, Q = np.atleast_2d(A), np.atleast_2d(Q)
    xs, Ps = xf.copy(), Pf.copy()
    for k in range(len(xf) - 2, -1, -1):
        P_pred = A @ Pf[k] @ A.T + Q
        K = Pf[k] @ A.T @ np.linalg.inv(P_pred)
        xs[k] = xf[k] + K @ (xs[k + 1] - A @ xf[k])
        Ps[k] = Pf[k] + K @ (Ps[k + 1] - P_pred) @ K.T
    return xs, Ps
