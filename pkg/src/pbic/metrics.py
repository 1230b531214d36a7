"""Scalar summaries of simulated trajectories."""

from __future__ import annotations

import numpy as np

from .plant import Array


def fit_decay_rate(times: Array, norms: Array, floor: float = 1e-8, tail: float = 0.6) -> float:
    """Exponential decay rate from a least-squares fit of ``log |xbar|``.

    The fit uses the last ``tail`` fraction of the samples recorded before
    the norm first drops below ``floor``.  Returns ``nan`` when fewer than
    two samples qualify.
    """
    norms = np.asarray(norms, dtype=float)
    if not np.all(np.isfinite(norms)):
        return float("nan")
    below = np.flatnonzero(norms < floor)
    end = below[0] if below.size else norms.size
    start = int(round((1 - tail) * end))
    if end - start < 2:
        return float("nan")
    slope = np.polyfit(times[start:end], np.log(norms[start:end]), 1)[0]
    return float(-slope)


def steady_state_error(traj, q_star: Array) -> float:
    return float(np.linalg.norm(traj.q[-1] - q_star))


def position_overshoot(traj, q_star: Array) -> Array:
    """Per-joint excursion past ``q*`` on the far side from ``q(0)``."""
    err = traj.q - q_star
    side = np.sign(err[0])
    side[side == 0] = 1.0
    return np.maximum(0.0, np.max(-side * err, axis=0))


def peak_output(traj, gains) -> Array:
    """Per-joint peak of ``|y_bar| = |Md^-1 p_bar|``."""
    n = traj.dof
    return np.max(np.abs(traj.xbar[:, n:2 * n] @ gains.Md_inv.T), axis=0)


def ultimate_bound(norms: Array, tail: float = 0.2) -> float:
    """Largest norm over the final ``tail`` fraction of samples."""
    k = max(1, int(round(tail * len(norms))))
    return float(np.max(norms[-k:]))
