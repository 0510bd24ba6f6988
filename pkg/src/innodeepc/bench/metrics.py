"""Prediction and control performance indices."""

import numpy as np

from ..errors import InputError


def r_squared(y, y_hat) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot`` over all entries.

    Returns NaN when ``y`` has zero variance (the index is undefined).
    """
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.size != y_hat.size or y.size < 2:
        raise InputError("y and y_hat need equal lengths of at least 2")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def control_costs(log, Q, R):
    """``(J_u, J_y, J_total)`` summed over every step of a closed-loop log."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    err = np.asarray(log.y) - np.asarray(log.r)
    u = np.asarray(log.u)
    J_y = float(np.einsum("ki,ij,kj->", err, Q, err))
    J_u = float(np.einsum("ki,ij,kj->", u, R, u))
    return J_u, J_y, J_u + J_y


def log_slope(x) -> float:
    """Least-squares slope of ``log|x|`` against the sample index."""
    a = np.abs(np.asarray(x, dtype=float).ravel())
    a = np.maximum(a, np.finfo(float).tiny)
    t = np.arange(a.size)
    return float(np.polyfit(t, np.log(a), 1)[0])


def band(mean: float, sd: float, n: int = 100, rel: float = 0.15):
    """Acceptance interval: the looser of ``3 sd / sqrt(n)`` and ``rel * mean``."""
    half = max(3.0 * sd / np.sqrt(n), rel * abs(mean))
    return mean - half, mean + half
