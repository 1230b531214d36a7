"""Passivity-based integral control (PBIC) and the ES-DI baseline.

The PBIC law works in shifted coordinates

    q_bar = q - q*,   p_bar = p + Kp q_bar,   y_bar = Md^-1 p_bar,

with an integrator ``z' = -Ki y_bar``.  Under a constant matched disturbance
``d_m`` the closed loop is port-Hamiltonian in ``(q_bar, p_bar, z + d_m)``.
Controllers are stateless; the integrator state belongs to the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .plant import Array, GeneralizedState, Mechanics, PlantModel, mechanics


class InvertibilityError(ValueError):
    def __init__(self, cond: float):
        super().__init__(f"input matrix G(q) is ill-conditioned (cond={cond:.3e})")
        self.cond = cond


def _spd(name: str, A, n: Optional[int] = None, margin: float = 1e-12) -> Array:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1] or (n is not None and A.shape[0] != n):
        raise ValueError(f"{name} must be {n}x{n}, got {A.shape}")
    if np.max(np.abs(A - A.T)) > 1e-12 * max(1.0, np.max(np.abs(A))):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(A)[0] <= margin:
        raise ValueError(f"{name} must be positive definite")
    return A


@dataclass(frozen=True, eq=False)
class ControllerGains:
    Kp: Array
    Ki: Array
    Kd: Array
    Md: Array
    q_star: Array

    def __post_init__(self):
        q_star = np.asarray(self.q_star, dtype=float).reshape(-1)
        n = q_star.size
        object.__setattr__(self, "q_star", q_star)
        for name in ("Kp", "Ki", "Kd", "Md"):
            object.__setattr__(self, name, _spd(name, getattr(self, name), n))
        object.__setattr__(self, "Md_inv", np.linalg.inv(self.Md))
        object.__setattr__(self, "Ki_inv", np.linalg.inv(self.Ki))

    @property
    def dof(self) -> int:
        return self.q_star.size

    def scaled(self, **factors: float) -> "ControllerGains":
        """Copy with selected gain matrices multiplied by scalars."""
        fields = dict(Kp=self.Kp, Ki=self.Ki, Kd=self.Kd, Md=self.Md)
        for k, c in factors.items():
            fields[k] = c * fields[k]
        return ControllerGains(q_star=self.q_star, **fields)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("Kp", "Ki", "Kd", "Md", "q_star")}


@dataclass(frozen=True, eq=False)
class BaselineGains:
    Kes: Array
    Kdi: Array
    q_star: Array

    def __post_init__(self):
        q_star = np.asarray(self.q_star, dtype=float).reshape(-1)
        object.__setattr__(self, "q_star", q_star)
        object.__setattr__(self, "Kes", _spd("Kes", self.Kes, q_star.size))
        object.__setattr__(self, "Kdi", _spd("Kdi", self.Kdi, q_star.size))

    @property
    def dof(self) -> int:
        return self.q_star.size

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("Kes", "Kdi", "q_star")}


@dataclass(frozen=True, eq=False)
class AugmentedState:
    q_bar: Array
    p_bar: Array
    z_bar: Array

    def __post_init__(self):
        parts = [np.asarray(getattr(self, k), dtype=float).reshape(-1) for k in ("q_bar", "p_bar", "z_bar")]
        if len({a.size for a in parts}) != 1:
            raise ValueError("augmented components differ in size")
        if not all(np.all(np.isfinite(a)) for a in parts):
            raise ValueError("augmented state has non-finite entries")
        for k, a in zip(("q_bar", "p_bar", "z_bar"), parts):
            object.__setattr__(self, k, a)

    def vector(self) -> Array:
        return np.concatenate([self.q_bar, self.p_bar, self.z_bar])

    @classmethod
    def from_vector(cls, xbar: Array) -> "AugmentedState":
        q_bar, p_bar, z_bar = np.split(np.asarray(xbar, dtype=float), 3)
        return cls(q_bar, p_bar, z_bar)


# Gains of the three comparison cases.  Case 1 is the ES-DI baseline;
# cases 2 and 3 are PBIC and differ only in Md.
GAIN_PRESETS = {
    "case1": dict(kind="esdi", Kes=[75.0, 50.0, 50.0], Kdi=[7.0, 5.0, 5.0]),
    "case2": dict(kind="pbic", Kp=[10.0, 7.5, 7.5], Ki=[15.0, 10.0, 10.0], Kd=[7.0, 5.0, 5.0], Md=[0.2, 0.2, 0.2]),
    "case3": dict(kind="pbic", Kp=[10.0, 7.5, 7.5], Ki=[15.0, 10.0, 10.0], Kd=[7.0, 5.0, 5.0], Md=[0.06, 0.06, 0.06]),
}


def preset_gains(name: str, q_star) -> "ControllerGains | BaselineGains":
    try:
        entry = GAIN_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown gain preset {name!r}; choose from {sorted(GAIN_PRESETS)}") from None
    mats = {k: np.diag(v) for k, v in entry.items() if k != "kind"}
    if entry["kind"] == "esdi":
        return BaselineGains(q_star=q_star, **mats)
    return ControllerGains(q_star=q_star, **mats)


def _solve_input(model: PlantModel, q: Array, rhs: Array) -> Array:
    if model.input_matrix is None:
        return rhs
    G = model.G(q)
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > model.cond_cap:
        raise InvertibilityError(cond)
    return np.linalg.solve(G, rhs)


def new_output(gains: ControllerGains, x: GeneralizedState) -> Array:
    """``y_bar = Md^-1 (p + Kp (q - q*))``."""
    p_bar = x.p + gains.Kp @ (x.q - gains.q_star)
    return gains.Md_inv @ p_bar


def integrator_rate(gains: ControllerGains, x: GeneralizedState) -> Array:
    return -gains.Ki @ new_output(gains, x)


def pbic_control(
    model: PlantModel,
    gains: ControllerGains,
    x: GeneralizedState,
    z: Array,
    qdot: Optional[Array] = None,
    mech: Optional[Mechanics] = None,
) -> Array:
    """PBIC torque.

    ``qdot`` defaults to ``M^-1 p``; a simulator may pass a measured velocity
    instead.  ``mech`` lets callers reuse model matrices already computed
    at ``x``.
    """
    q, p = x.q, x.p
    if mech is None:
        mech = mechanics(model, q, p)
    if qdot is None:
        qdot = mech.v
    Kp_q_bar = gains.Kp @ (q - gains.q_star)
    p_bar = p + Kp_q_bar
    bracket = (
        model.potential_grad(q)
        - gains.Md @ (mech.Minv @ Kp_q_bar)
        - mech.Gamma @ Kp_q_bar
        - gains.Kp @ qdot
        - gains.Kd @ (gains.Md_inv @ p_bar)
        + z
    )
    return _solve_input(model, q, bracket)


def esdi_control(
    gains: BaselineGains,
    x: GeneralizedState,
    model: PlantModel,
    qdot: Optional[Array] = None,
) -> Array:
    """Energy shaping plus damping injection, ``-Kes (q - q*) - Kdi q'``.

    There is no gravity compensation, so the closed loop settles where
    ``Kes (q_e - q*) = -grad V(q_e) + d_m``.
    """
    if qdot is None:
        qdot = np.linalg.solve(model.M(x.q), x.p)
    return -gains.Kes @ (x.q - gains.q_star) - gains.Kdi @ qdot


def to_augmented(x: GeneralizedState, z: Array, gains: ControllerGains, d_m: Array) -> AugmentedState:
    q_bar = x.q - gains.q_star
    return AugmentedState(q_bar, x.p + gains.Kp @ q_bar, np.asarray(z, dtype=float) + d_m)


def from_augmented(aug: AugmentedState, gains: ControllerGains, d_m: Array):
    q = aug.q_bar + gains.q_star
    x = GeneralizedState(q, aug.p_bar - gains.Kp @ aug.q_bar)
    return x, aug.z_bar - np.asarray(d_m, dtype=float)


def augment_arrays(q: Array, p: Array, z: Array, gains: ControllerGains, d_m: Array) -> Array:
    """Row-wise ``to_augmented`` for stacked samples; returns ``(N, 3n)``."""
    q_bar = q - gains.q_star
    return np.hstack([q_bar, p + q_bar @ gains.Kp.T, z + d_m])


class PBIC:
    """PBIC wrapper with the interface the simulator expects."""

    kind = "pbic"

    def __init__(self, gains: ControllerGains):
        self.gains = gains

    def torque(self, model, x, z, qdot=None, mech=None):
        return pbic_control(model, self.gains, x, z, qdot=qdot, mech=mech)

    def integrator_rate(self, x):
        return integrator_rate(self.gains, x)


class ESDI:
    kind = "esdi"

    def __init__(self, gains: BaselineGains):
        self.gains = gains

    def torque(self, model, x, z, qdot=None, mech=None):
        if qdot is None and mech is not None:
            qdot = mech.v
        return esdi_control(self.gains, x, model, qdot=qdot)

    def integrator_rate(self, x):
        return np.zeros(self.gains.dof)


def make_controller(gains):
    if isinstance(gains, ControllerGains):
        return PBIC(gains)
    if isinstance(gains, BaselineGains):
        return ESDI(gains)
    raise TypeError(f"no controller for {type(gains).__name__}")


def closed_loop_hamiltonian(xbar: Array, gains: ControllerGains) -> Array:
    """``H_bar = 1/2 p_bar' Md^-1 p_bar + 1/2 q_bar' Kp q_bar + 1/2 z_bar' Ki^-1 z_bar``.

    ``xbar`` may be a single ``3n`` vector or stacked rows ``(N, 3n)``.
    """
    xbar = np.asarray(xbar, dtype=float)
    qb, pb, zb = np.split(xbar, 3, axis=-1)
    quad = lambda A, v: 0.5 * np.einsum("...i,ij,...j->...", v, A, v)
    return quad(gains.Md_inv, pb) + quad(gains.Kp, qb) + quad(gains.Ki_inv, zb)


def closed_loop_gradient(xbar: Array, gains: ControllerGains) -> Array:
    qb, pb, zb = np.split(np.asarray(xbar, dtype=float), 3, axis=-1)
    return np.concatenate([qb @ gains.Kp.T, pb @ gains.Md_inv.T, zb @ gains.Ki_inv.T], axis=-1)


def lyapunov_S(xbar: Array, gains: ControllerGains, epsilon: float) -> Array:
    """Strict Lyapunov function ``S = H_bar - eps dH/dp_bar' Md dH/dz_bar``."""
    grad = closed_loop_gradient(xbar, gains)
    _, gp, gz = np.split(grad, 3, axis=-1)
    cross = np.einsum("...i,ij,...j->...", gp, gains.Md, gz)
    return closed_loop_hamiltonian(xbar, gains) - epsilon * cross


def esdi_equilibrium(model: PlantModel, gains: BaselineGains, d_m: Array, q_guess: Optional[Array] = None) -> Array:
    """Rest configuration of the ES-DI loop: ``Kes (q - q*) + grad V(q) = d_m``."""
    from scipy.optimize import root

    d_m = np.asarray(d_m, dtype=float)
    q_guess = gains.q_star if q_guess is None else q_guess
    sol = root(lambda q: gains.Kes @ (q - gains.q_star) + model.potential_grad(q) - d_m, q_guess, tol=1e-14)
    if not sol.success:
        raise RuntimeError(f"force balance did not converge: {sol.message}")
    return sol.x
