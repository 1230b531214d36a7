"""Symbolic mass matrix and potential of the surrogate 3-DoF arm.

Joint 1 rotates about the world z axis, joint 2 pitches about the carried
y axis, joint 3 rolls about the forearm axis.  The forearm and hand hang
along -z of the frame after joint 2.  Kinetic energy is assembled from COM
velocities and body-frame angular velocities, then ``M`` is its Hessian in
the joint rates.  Rotor inertias add to the diagonal and are left out here.

    python scripts/derive_surrogate_inertia.py [--check]

``--check`` compares the result against ``pbic.models.build_surrogate_arm``
at random configurations.
"""

import argparse

import sympy as sp


def rot_z(a):
    return sp.Matrix([[sp.cos(a), -sp.sin(a), 0], [sp.sin(a), sp.cos(a), 0], [0, 0, 1]])


def rot_y(a):
    return sp.Matrix([[sp.cos(a), 0, sp.sin(a)], [0, 1, 0], [-sp.sin(a), 0, sp.cos(a)]])


def derive():
    q = sp.Matrix(sp.symbols("q1 q2 q3"))
    qd = sp.Matrix(sp.symbols("qd1 qd2 qd3"))
    m2, m3, lc2, l2, lc3, g = sp.symbols("m2 m3 lc2 l2 lc3 g", positive=True)
    I1z, I2x, I2y, I2z, I3x, I3y, I3z = sp.symbols("I1z I2x I2y I2z I3x I3y I3z", positive=True)

    R1 = rot_z(q[0])
    R2 = R1 * rot_y(q[1])
    R3 = R2 * rot_z(q[2])
    ez, ey = sp.Matrix([0, 0, 1]), sp.Matrix([0, 1, 0])
    w1 = qd[0] * ez
    w2 = w1 + qd[1] * (R1 * ey)
    w3 = w2 + qd[2] * (R2 * ez)
    c2 = R2 * sp.Matrix([0, 0, -lc2])
    c3 = R2 * sp.Matrix([0, 0, -(l2 + lc3)])
    v2 = c2.jacobian(q) * qd
    v3 = c3.jacobian(q) * qd

    def rot_energy(R, w, inertia):
        wb = R.T * w
        return (wb.T * sp.diag(*inertia) * wb)[0] / 2

    T = I1z * qd[0] ** 2 / 2
    T += m2 * (v2.T * v2)[0] / 2 + rot_energy(R2, w2, (I2x, I2y, I2z))
    T += m3 * (v3.T * v3)[0] / 2 + rot_energy(R3, w3, (I3x, I3y, I3z))
    M = sp.hessian(T, qd).applyfunc(lambda e: sp.simplify(sp.trigsimp(sp.expand(e))))
    V = sp.simplify(g * (m2 * c2[2] + m3 * c3[2]))
    V = sp.simplify(V - V.subs(q[1], 0))
    return q, M, V


def check(q, M, n_points=20):
    import numpy as np

    from pbic.models import SURROGATE_DEFAULTS, build_surrogate_arm

    prm = SURROGATE_DEFAULTS
    subs = dict(
        m2=prm["m2"], m3=prm["m3"], lc2=prm["lc2"], l2=prm["l2"], lc3=prm["lc3"], I1z=prm["I1z"],
        I2x=prm["I2"][0], I2y=prm["I2"][1], I2z=prm["I2"][2],
        I3x=prm["I3"][0], I3y=prm["I3"][1], I3z=prm["I3"][2],
    )
    subs = {sp.Symbol(k, positive=True): v for k, v in subs.items()}
    f = sp.lambdify(list(q), M.subs(subs), "numpy")
    model = build_surrogate_arm()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(n_points):
        qq = rng.uniform(-np.pi, np.pi, 3)
        numeric = model.M(qq) - np.diag(prm["rotor"])
        worst = max(worst, float(np.max(np.abs(np.asarray(f(*qq), dtype=float) - numeric))))
    print(f"max |M_symbolic - M_model| over {n_points} configurations: {worst:.3e}")
    return worst


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--check", action="store_true", help="compare with the package model")
    args = parser.parse_args()
    q, M, V = derive()
    for i in range(3):
        for j in range(i, 3):
            print(f"M[{i + 1}{j + 1}] = {M[i, j]}")
    print(f"V = {V}")
    if args.check:
        check(q, M)


if __name__ == "__main__":
    main()
