"""Mechanical plants in port-Hamiltonian form and their model-derived matrices.

A plant is described by its mass matrix ``M(q)``, potential ``V(q)``, damping
``D(q, p)`` and input matrix ``G(q)``.  The dynamics are

    q' = dH/dp + d_u
    p' = -dH/dq - D dH/dp + G u + d_m,      H = 1/2 p^T M^-1 p + V(q)

Mass-matrix partials are stacked as an ``(n, n, n)`` array ``dM`` with
``dM[k] = dM/dq_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

FD_STEP = np.cbrt(np.finfo(float).eps)


class ModelValidityError(ValueError):
    """Raised when a plant violates one of its structural invariants."""


@dataclass(frozen=True, eq=False)
class GeneralizedState:
    """Configuration ``q`` and momentum ``p = M(q) q'``."""

    q: Array
    p: Array

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if q.shape != p.shape:
            raise ValueError(f"q and p differ in size: {q.shape} vs {p.shape}")
        if not math.isfinite(q.sum() + p.sum()):
            raise ValueError("state has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def dof(self) -> int:
        return self.q.size


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Immutable description of a fully actuated mechanical system.

    ``mass_partials`` may be omitted, in which case partials are synthesized
    by central differences and ``partials_source`` reports ``"numeric"``.
    ``damping`` and ``input_matrix`` default to zero and identity.
    """

    dof: int
    mass_matrix: Callable[[Array], Array]
    potential: Callable[[Array], float]
    potential_grad: Callable[[Array], Array]
    mass_partials: Optional[Callable[[Array], Array]] = None
    damping: Optional[Callable[[Array, Array], Array]] = None
    input_matrix: Optional[Callable[[Array], Array]] = None
    name: str = "plant"
    params: dict = field(default_factory=dict)
    cond_cap: float = 1e8

    def __post_init__(self):
        if int(self.dof) < 1:
            raise ValueError("dof must be a positive integer")

    @property
    def partials_source(self) -> str:
        return "numeric" if self.mass_partials is None else "analytic"

    def M(self, q: Array) -> Array:
        return np.asarray(self.mass_matrix(q), dtype=float)

    def dM(self, q: Array) -> Array:
        if self.mass_partials is not None:
            return np.asarray(self.mass_partials(q), dtype=float)
        return numeric_mass_partials(self.mass_matrix, q)

    def D(self, q: Array, p: Array) -> Array:
        if self.damping is None:
            return np.zeros((self.dof, self.dof))
        return np.asarray(self.damping(q, p), dtype=float)

    def G(self, q: Array) -> Array:
        if self.input_matrix is None:
            return np.eye(self.dof)
        return np.asarray(self.input_matrix(q), dtype=float)

    def with_damping(self, damping: Callable[[Array, Array], Array]) -> "PlantModel":
        return replace(self, damping=damping)

    def validate(self, q: Array, sym_tol: float = 1e-12) -> None:
        """Check the plant invariants at configuration ``q``."""
        q = np.asarray(q, dtype=float)
        M = self.M(q)
        if M.shape != (self.dof, self.dof):
            raise ModelValidityError(f"mass matrix has shape {M.shape}")
        if np.max(np.abs(M - M.T)) > sym_tol * max(1.0, np.max(np.abs(M))):
            raise ModelValidityError("mass matrix is not symmetric")
        if np.linalg.eigvalsh(M)[0] <= 0.0:
            raise ModelValidityError("mass matrix is not positive definite")
        cond = np.linalg.cond(self.G(q))
        if not np.isfinite(cond) or cond > self.cond_cap:
            raise ModelValidityError(f"input matrix is ill-conditioned (cond={cond:.3e})")


def numeric_mass_partials(mass_matrix: Callable[[Array], Array], q: Array) -> Array:
    """Central-difference partials ``dM[k] = dM/dq_k``."""
    q = np.asarray(q, dtype=float)
    n = q.size
    out = np.empty((n, n, n))
    for k in range(n):
        h = FD_STEP * max(1.0, abs(q[k]))
        qp = q.copy()
        qm = q.copy()
        qp[k] += h
        qm[k] -= h
        out[k] = (np.asarray(mass_matrix(qp)) - np.asarray(mass_matrix(qm))) / (qp[k] - qm[k])
    return out


def _inverse_mass(M: Array) -> Array:
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError as err:
        raise ModelValidityError("mass matrix is singular") from err


def _gyro_from(dM: Array, v: Array) -> Array:
    # S_kj = 1/2 sum_i (dM_ki/dq_j - dM_ij/dq_k) v_i.  With A[j] = dM_j v and
    # each dM_j symmetric, the first sum is A[j, k] and the second A[k, j].
    A = dM @ v
    return 0.5 * (A.T - A)


def _mdot_from(dM: Array, v: Array) -> Array:
    n = v.size
    return (v @ dM.reshape(n, n * n)).reshape(n, n)


@dataclass(frozen=True, eq=False)
class Mechanics:
    """Model matrices at one state, computed once and shared."""

    M: Array
    Minv: Array
    v: Array      # q' = M^-1 p
    dM: Array
    S: Array
    Mdot: Array
    E: Array
    D: Array
    Gamma: Array


def mechanics(model: PlantModel, q: Array, p: Array) -> Mechanics:
    M = model.M(q)
    Minv = _inverse_mass(M)
    v = Minv @ p
    dM = model.dM(q)
    S = _gyro_from(dM, v)
    Mdot = _mdot_from(dM, v)
    E = S - 0.5 * Mdot
    D = model.D(q, p)
    return Mechanics(M, Minv, v, dM, S, Mdot, E, D, (E + D) @ Minv)


def hamiltonian(model: PlantModel, x: GeneralizedState) -> float:
    M = model.M(x.q)
    try:
        kinetic = 0.5 * x.p @ np.linalg.solve(M, x.p)
    except np.linalg.LinAlgError as err:
        raise ModelValidityError("mass matrix is singular") from err
    return float(kinetic + model.potential(x.q))


def kinetic_gradient(model: PlantModel, q: Array, p: Array) -> Array:
    """Analytic ``d/dq (1/2 p^T M^-1 p) = -1/2 v^T dM_k v``."""
    v = np.linalg.solve(model.M(q), p)
    return -0.5 * (model.dM(q) @ v) @ v


def gyro_matrix(model: PlantModel, x: GeneralizedState) -> Array:
    """Skew-symmetric gyroscopic matrix ``S_H(x)``."""
    v = np.linalg.solve(model.M(x.q), x.p)
    return _gyro_from(model.dM(x.q), v)


def mdot_matrix(model: PlantModel, x: GeneralizedState) -> Array:
    """Time derivative of ``M`` along the motion, ``sum_k dM_k q'_k``."""
    v = np.linalg.solve(model.M(x.q), x.p)
    return _mdot_from(model.dM(x.q), v)


def e_matrix(model: PlantModel, x: GeneralizedState) -> Array:
    return mechanics(model, x.q, x.p).E


def gamma(model: PlantModel, x: GeneralizedState) -> Array:
    """``Gamma = (E + D) M^-1``."""
    return mechanics(model, x.q, x.p).Gamma


def check_gyro_identity(model: PlantModel, x: GeneralizedState) -> float:
    """Relative residual of ``d/dq (1/2 p^T M^-1 p) = E M^-1 p``.

    The left side is a central finite difference of the kinetic energy in
    ``q``, so it is independent of the mass partials the model supplies.
    The caller compares the residual against its own tolerance (1e-6 is
    typical for a correct plant).
    """
    q, p = x.q, x.p

    def kinetic(qq):
        return 0.5 * p @ np.linalg.solve(model.M(qq), p)

    fd = np.empty(q.size)
    for k in range(q.size):
        h = FD_STEP * max(1.0, abs(q[k]))
        qp = q.copy()
        qm = q.copy()
        qp[k] += h
        qm[k] -= h
        fd[k] = (kinetic(qp) - kinetic(qm)) / (qp[k] - qm[k])
    mech = mechanics(model, q, p)
    rhs = mech.E @ mech.v
    return float(np.linalg.norm(fd - rhs) / max(1.0, np.linalg.norm(rhs)))
