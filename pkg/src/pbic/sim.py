"""Fixed-step RK4 simulation of plants in closed loop.

Two routes integrate the same closed loop:

* ``simulate_plant`` integrates the physical plant ``(q, p)`` together with
  the controller's integrator ``z``, using ``dH/dq`` directly.
* ``simulate_closed_loop_direct`` integrates the augmented closed loop in
  ``(q_bar, p_bar, z_bar)`` written as interconnection/damping structure
  times the gradient of ``H_bar``.

The plant route feeds controllers the measured velocity ``M^-1 p + d_u``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .control import (
    PBIC,
    AugmentedState,
    ControllerGains,
    augment_arrays,
    closed_loop_hamiltonian,
    lyapunov_S,
    pbic_control,
)
from .plant import Array, GeneralizedState, PlantModel, hamiltonian, mechanics

DIVERGENCE_NORM = 1e9


class SimulationDivergence(RuntimeError):
    def __init__(self, time: float, state: Array, reason: str = "non-finite state"):
        super().__init__(f"simulation diverged at t={time:.6g}: {reason}")
        self.time = time
        self.state = state


@dataclass(frozen=True, eq=False)
class DisturbanceSpec:
    """Constant matched/unmatched disturbances switched on at ``onset_time``."""

    d_m: Array
    d_u: Array
    onset_time: float = 0.0

    def __post_init__(self):
        d_m = np.asarray(self.d_m, dtype=float).reshape(-1)
        d_u = np.asarray(self.d_u, dtype=float).reshape(-1)
        if d_m.shape != d_u.shape:
            raise ValueError("d_m and d_u must have the same size")
        if not (np.all(np.isfinite(d_m)) and np.all(np.isfinite(d_u))):
            raise ValueError("disturbances must be finite")
        if not self.onset_time >= 0:
            raise ValueError("onset_time must be >= 0")
        object.__setattr__(self, "d_m", d_m)
        object.__setattr__(self, "d_u", d_u)

    @classmethod
    def none(cls, n: int) -> "DisturbanceSpec":
        return cls(np.zeros(n), np.zeros(n))

    def at(self, t: float):
        if t >= self.onset_time:
            return self.d_m, self.d_u
        return np.zeros_like(self.d_m), np.zeros_like(self.d_u)

    def to_dict(self) -> dict:
        return dict(d_m=self.d_m.tolist(), d_u=self.d_u.tolist(), onset_time=self.onset_time)


@dataclass(eq=False)
class Trajectory:
    times: Array
    q: Array
    p: Array
    z: Array
    u: Array
    H: Array
    Hbar: Array
    S: Array
    norm_xbar: Array
    norm_ybar: Array
    xbar: Optional[Array] = None
    meta: dict = field(default_factory=dict)

    @property
    def dof(self) -> int:
        return self.q.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def __len__(self) -> int:
        return self.times.size

    def columns(self) -> list[str]:
        n = self.dof
        names = ["t"]
        for sym in "qpzu":
            names += [f"{sym}{i + 1}" for i in range(n)]
        return names + ["H", "Hbar", "S", "norm_xbar", "norm_ybar"]

    def table(self) -> Array:
        scalars = np.column_stack([self.H, self.Hbar, self.S, self.norm_xbar, self.norm_ybar])
        return np.column_stack([self.times, self.q, self.p, self.z, self.u, scalars])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for row in self.table():
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.array([[float(v) for v in row] for row in reader])
        n = (len(header) - 6) // 4
        cols = np.split(data[:, 1:1 + 4 * n], 4, axis=1)
        return cls(data[:, 0], *cols, *data[:, 1 + 4 * n:].T)


def rk4_step(vector_field: Callable[[float, Array], Array], state: Array, dt: float, t: float = 0.0) -> Array:
    """One classical Runge-Kutta step of ``x' = f(t, x)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = vector_field(t, state)
    k2 = vector_field(t + dt / 2, state + dt / 2 * k1)
    k3 = vector_field(t + dt / 2, state + dt / 2 * k2)
    k4 = vector_field(t + dt, state + dt * k3)
    out = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not math.isfinite(out.sum()):
        raise SimulationDivergence(t, state, "non-finite vector field")
    return out


def _integrate(vector_field, y0: Array, T: float, dt: float):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not T >= dt:
        raise ValueError("T must be at least one step")
    steps = int(round(T / dt))
    times = dt * np.arange(steps + 1)
    ys = np.empty((steps + 1, y0.size))
    ys[0] = y0
    y = y0
    for i in range(steps):
        y = rk4_step(vector_field, y, dt, times[i])
        if np.dot(y, y) > DIVERGENCE_NORM**2:
            raise SimulationDivergence(times[i + 1], y, "state norm exceeded 1e9")
        ys[i + 1] = y
    return times, ys


def _clip(u: Array, limit) -> Array:
    if limit is None:
        return u
    return np.clip(u, -np.asarray(limit), np.asarray(limit))


def _finish(model, times, q, p, z, u, gains, disturbance, epsilon, xbar=None, meta=None) -> Trajectory:
    N = times.size
    H = np.array([hamiltonian(model, GeneralizedState(q[i], p[i])) for i in range(N)])
    if gains is None:
        nan = np.full(N, np.nan)
        return Trajectory(times, q, p, z, u, H, nan, nan.copy(), nan.copy(), nan.copy(), None, meta or {})
    if xbar is None:
        d_m = np.array([disturbance.at(t)[0] for t in times])
        xbar = augment_arrays(q, p, z, gains, d_m)
    p_bar = xbar[:, model.dof:2 * model.dof]
    return Trajectory(
        times, q, p, z, u, H,
        closed_loop_hamiltonian(xbar, gains),
        lyapunov_S(xbar, gains, epsilon),
        np.linalg.norm(xbar, axis=1),
        np.linalg.norm(p_bar @ gains.Md_inv.T, axis=1),
        xbar,
        meta or {},
    )


def simulate_plant(
    model: PlantModel,
    controller,
    disturbance: DisturbanceSpec,
    x0: GeneralizedState,
    z0: Optional[Array] = None,
    T: float = 20.0,
    dt: float = 1e-3,
    epsilon: float = 0.0,
    torque_limit=None,
) -> Trajectory:
    """Integrate plant, controller integrator and disturbances together.

    ``controller`` is ``None`` (zero torque) or an object with ``torque`` and
    ``integrator_rate`` methods (see ``control.PBIC``/``control.ESDI``).
    ``epsilon`` only affects the recorded ``S`` column.  ``torque_limit``
    clamps the torque elementwise; it is off by default and, when set,
    ``meta["saturated_samples"]`` counts recorded samples that hit it.
    """
    n = model.dof
    z0 = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float)

    def torque_and_rates(t, q, p, z):
        d_m, d_u = disturbance.at(t)
        mech = mechanics(model, q, p)
        if controller is None:
            return mech, np.zeros(n), np.zeros(n), d_m, d_u
        x = GeneralizedState(q, p)
        u = _clip(controller.torque(model, x, z, qdot=mech.v + d_u, mech=mech), torque_limit)
        return mech, u, controller.integrator_rate(x), d_m, d_u

    def field(t, y):
        q, p, z = y[:n], y[n:2 * n], y[2 * n:]
        mech, u, zdot, d_m, d_u = torque_and_rates(t, q, p, z)
        dHdq = -0.5 * (mech.dM @ mech.v) @ mech.v + model.potential_grad(q)
        Gu = u if model.input_matrix is None else model.G(q) @ u
        pdot = -dHdq - mech.D @ mech.v + Gu + d_m
        return np.concatenate([mech.v + d_u, pdot, zdot])

    y0 = np.concatenate([x0.q, x0.p, z0])
    times, ys = _integrate(field, y0, T, dt)
    q, p, z = ys[:, :n], ys[:, n:2 * n], ys[:, 2 * n:]
    u = np.array([torque_and_rates(t, q[i], p[i], z[i])[1] for i, t in enumerate(times)])
    meta = {"form": "plant", "controller": getattr(controller, "kind", "none")}
    if torque_limit is not None:
        meta["saturated_samples"] = int(np.sum(np.any(np.abs(u) >= np.asarray(torque_limit), axis=1)))
    gains = controller.gains if isinstance(controller, PBIC) else None
    return _finish(model, times, q, p, z, u, gains, disturbance, epsilon, meta=meta)


def simulate_closed_loop_direct(
    model: PlantModel,
    gains: ControllerGains,
    disturbance: DisturbanceSpec,
    aug0: AugmentedState,
    T: float = 20.0,
    dt: float = 1e-3,
    epsilon: float = 0.0,
) -> Trajectory:
    """Integrate the augmented closed loop in ``(q_bar, p_bar, z_bar)``.

    ``z_bar = z + d_m`` absorbs the matched disturbance, which therefore
    must act from ``t = 0``; the unmatched disturbance enters the ``q_bar``
    row only.
    """
    if disturbance.onset_time > 0 and np.any(disturbance.d_m):
        raise ValueError("the direct form needs the matched disturbance active from t=0")
    n = model.dof
    Kp, Ki, Kd, Md = gains.Kp, gains.Ki, gains.Kd, gains.Md
    Z = np.zeros((n, n))
    # grad H_bar = blockdiag(Kp, Md^-1, Ki^-1) xbar
    hess = np.zeros((3 * n, 3 * n))
    hess[:n, :n] = Kp
    hess[n:2 * n, n:2 * n] = gains.Md_inv
    hess[2 * n:, 2 * n:] = gains.Ki_inv

    def field(t, xb):
        qb, pb = xb[:n], xb[n:2 * n]
        mech = mechanics(model, qb + gains.q_star, pb - Kp @ qb)
        Mi = mech.Minv
        J_R = np.block([
            [-Mi, Mi @ Md, Z],
            [-Md @ Mi, -mech.Gamma @ Md - Kd, Ki],
            [Z, -Ki, Z],
        ])
        dx = J_R @ (hess @ xb)
        dx[:n] += disturbance.at(t)[1]
        return dx

    times, xbar = _integrate(field, aug0.vector(), T, dt)
    d_m = disturbance.d_m
    q = xbar[:, :n] + gains.q_star
    p = xbar[:, n:2 * n] - xbar[:, :n] @ Kp.T
    z = xbar[:, 2 * n:] - d_m
    u = np.array([
        pbic_control(model, gains, GeneralizedState(q[i], p[i]), z[i],
                     qdot=np.linalg.solve(model.M(q[i]), p[i]) + disturbance.at(t)[1])
        for i, t in enumerate(times)
    ])
    return _finish(model, times, q, p, z, u, gains, disturbance, epsilon, xbar=xbar, meta={"form": "direct", "controller": "pbic"})


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
