"""Concrete plants: point mass, planar two-link arm, surrogate 3-DoF arm.

The surrogate arm stands in for a three-joint reduction of a humanoid arm
(shoulder roll, elbow pitch, elbow roll).  Its parameters are fixed
constants listed in ``SURROGATE_DEFAULTS``; joint reflected rotor inertias
dominate the diagonal as in a geared arm, so the configuration-dependent
part of ``M`` is a modest perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .plant import PlantModel

TWO_LINK_DEFAULTS = dict(m1=1.0, m2=1.0, l1=1.0, l2=1.0, g=9.81, damping=(0.0, 0.0))

SURROGATE_DEFAULTS = dict(
    rotor=(0.3, 0.3, 0.05),       # reflected rotor inertia per joint, kg m^2
    I1z=0.02,                     # upper arm about its long axis
    I2=(0.01, 0.01, 0.002),       # forearm principal inertias (x, y, z), elbow frame
    I3=(0.004, 0.012, 0.006),     # wrist/hand, asymmetric about the roll axis
    m2=1.2, lc2=0.15, l2=0.3,     # forearm mass, COM offset, length
    m3=0.6, lc3=0.05,             # hand mass, COM offset past the forearm tip
    g=9.81,
)


def _diagonal_damping(coeffs: Sequence[float]):
    coeffs = np.asarray(coeffs, dtype=float)
    if np.any(coeffs < 0):
        raise ValueError("damping coefficients must be nonnegative")
    if not np.any(coeffs):
        return None
    D = np.diag(coeffs)
    return lambda q, p: D


def build_point_mass(n: int = 2, mass: float = 1.0, damping: float = 0.0) -> PlantModel:
    """Free point mass in ``n`` dimensions: ``M = mass I``, ``V = 0``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if mass <= 0:
        raise ValueError("mass must be positive")
    M = mass * np.eye(n)
    zeros = np.zeros((n, n, n))
    return PlantModel(
        dof=n,
        mass_matrix=lambda q: M,
        mass_partials=lambda q: zeros,
        potential=lambda q: 0.0,
        potential_grad=lambda q: np.zeros(n),
        damping=_diagonal_damping([damping] * n),
        name="point_mass",
        params=dict(n=n, mass=mass, damping=damping),
    )


def build_two_link(
    m1: float = 1.0,
    m2: float = 1.0,
    l1: float = 1.0,
    l2: float = 1.0,
    g: float = 9.81,
    damping: Sequence[float] = (0.0, 0.0),
) -> PlantModel:
    """Planar elbow manipulator in a vertical plane with uniform rod links.

    Angles are measured from the downward vertical (``q2`` relative to link
    1), so ``V`` is zero, and minimal, at ``q = 0``.
    """
    if min(m1, m2, l1, l2) <= 0:
        raise ValueError("masses and lengths must be positive")
    if g < 0:
        raise ValueError("gravity must be nonnegative")
    lc1, lc2 = l1 / 2, l2 / 2
    I1, I2 = m1 * l1**2 / 12, m2 * l2**2 / 12
    a11 = m1 * lc1**2 + I1 + m2 * (l1**2 + lc2**2) + I2
    a12 = m2 * lc2**2 + I2
    c = m2 * l1 * lc2

    def mass_matrix(q):
        c2 = np.cos(q[1])
        return np.array([[a11 + 2 * c * c2, a12 + c * c2], [a12 + c * c2, a12]])

    def mass_partials(q):
        s2 = np.sin(q[1])
        out = np.zeros((2, 2, 2))
        out[1] = [[-2 * c * s2, -c * s2], [-c * s2, 0.0]]
        return out

    w1 = g * (m1 * lc1 + m2 * l1)
    w2 = g * m2 * lc2

    def potential(q):
        return float(w1 * (1 - np.cos(q[0])) + w2 * (1 - np.cos(q[0] + q[1])))

    def potential_grad(q):
        s12 = np.sin(q[0] + q[1])
        return np.array([w1 * np.sin(q[0]) + w2 * s12, w2 * s12])

    return PlantModel(
        dof=2,
        mass_matrix=mass_matrix,
        mass_partials=mass_partials,
        potential=potential,
        potential_grad=potential_grad,
        damping=_diagonal_damping(damping),
        name="two_link",
        params=dict(m1=m1, m2=m2, l1=l1, l2=l2, g=g, damping=list(damping)),
    )


def build_surrogate_arm(**overrides) -> PlantModel:
    """Three-joint arm: shoulder roll, elbow pitch, elbow roll.

    Joint 1 rotates the hanging upper arm about the vertical, joint 2
    pitches the forearm about a horizontal axis carried by joint 1, and
    joint 3 rolls the hand about the forearm axis.  Gravity acts only
    through the pitch joint; ``q2 = 0`` is forearm vertical-down.  The
    plant is undamped with ``G = I``.  Closed-form ``M`` comes from
    ``scripts/derive_surrogate_inertia.py``.
    """
    prm = {**SURROGATE_DEFAULTS, **overrides}
    unknown = set(prm) - set(SURROGATE_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown surrogate parameters: {sorted(unknown)}")
    J = np.asarray(prm["rotor"], dtype=float)
    I2x, I2y, I2z = prm["I2"]
    I3x, I3y, I3z = prm["I3"]
    m2, lc2, l2, m3, lc3, g = (prm[k] for k in ("m2", "lc2", "l2", "m3", "lc3", "g"))
    if min(m2, m3, lc2, l2) <= 0 or lc3 < 0 or np.any(J < 0):
        raise ValueError("surrogate parameters must be positive")

    a = m2 * lc2**2 + m3 * (l2 + lc3) ** 2
    b = a + I2x - I2z + I3x - I3z
    c = I3y - I3x
    m11 = J[0] + prm["I1z"] + I2z + I3z
    m22 = J[1] + I2y + I3y + a
    m33 = J[2] + I3z
    w = g * (m2 * lc2 + m3 * (l2 + lc3))

    def mass_matrix(q):
        s2, c2 = np.sin(q[1]), np.cos(q[1])
        s3, c3 = np.sin(q[2]), np.cos(q[2])
        m12 = c * s2 * s3 * c3
        return np.array([
            [m11 + s2**2 * (b + c * s3**2), m12, I3z * c2],
            [m12, m22 - c * s3**2, 0.0],
            [I3z * c2, 0.0, m33],
        ])

    def mass_partials(q):
        s2, c2 = np.sin(q[1]), np.cos(q[1])
        s3, c3 = np.sin(q[2]), np.cos(q[2])
        out = np.zeros((3, 3, 3))
        d12 = c * c2 * s3 * c3
        out[1] = [[2 * s2 * c2 * (b + c * s3**2), d12, -I3z * s2], [d12, 0.0, 0.0], [-I3z * s2, 0.0, 0.0]]
        e12 = c * s2 * (c3**2 - s3**2)
        out[2] = [[2 * c * s2**2 * s3 * c3, e12, 0.0], [e12, -2 * c * s3 * c3, 0.0], [0.0, 0.0, 0.0]]
        return out

    return PlantModel(
        dof=3,
        mass_matrix=mass_matrix,
        mass_partials=mass_partials,
        potential=lambda q: float(w * (1 - np.cos(q[1]))),
        potential_grad=lambda q: np.array([0.0, w * np.sin(q[1]), 0.0]),
        name="surrogate_arm",
        params={k: (list(v) if isinstance(v, tuple) else v) for k, v in prm.items()},
    )


@dataclass(frozen=True)
class ModelCatalogEntry:
    name: str
    builder: Callable[..., PlantModel]
    defaults: dict


CATALOG = {
    "point_mass": ModelCatalogEntry("point_mass", build_point_mass, dict(n=2, mass=1.0, damping=0.0)),
    "two_link": ModelCatalogEntry("two_link", build_two_link, TWO_LINK_DEFAULTS),
    "surrogate_arm": ModelCatalogEntry("surrogate_arm", build_surrogate_arm, SURROGATE_DEFAULTS),
}


def build_model(name: str, **params) -> PlantModel:
    try:
        entry = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(CATALOG)}") from None
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    return entry.builder(**params)
