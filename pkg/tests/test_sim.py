import numpy as np
import pytest
from hypothesis import given, strategies as st

from pbic.control import AugmentedState, make_controller, preset_gains
from pbic.models import build_point_mass, build_surrogate_arm
from pbic.plant import GeneralizedState
from pbic.sim import (
    DisturbanceSpec,
    SimulationDivergence,
    Trajectory,
    rk4_step,
    simulate_closed_loop_direct,
    simulate_plant,
)

Q_STAR = np.array([0.2, 0.6, -0.2])
ARM = build_surrogate_arm()


def _decay_error(dt, T=1.0):
    x = np.array([1.0])
    for i in range(int(round(T / dt))):
        x = rk4_step(lambda t, y: -y, x, dt, i * dt)
    return abs(x[0] - np.exp(-T))


def test_rk4_is_fourth_order():
    ratio = _decay_error(0.1) / _decay_error(0.05)
    assert 14 < ratio < 18


def test_rk4_time_dependent_field():
    # x' = t, x(0) = 0: RK4 is exact on polynomials of this degree
    x = np.zeros(1)
    for i in range(10):
        x = rk4_step(lambda t, y: np.array([t]), x, 0.1, 0.1 * i)
    assert x[0] == pytest.approx(0.5, abs=1e-14)


def test_rk4_rejects_bad_step_and_nan():
    with pytest.raises(ValueError):
        rk4_step(lambda t, y: y, np.ones(1), 0.0)
    with pytest.raises(SimulationDivergence):
        rk4_step(lambda t, y: np.full(1, np.nan), np.ones(1), 0.1)


@given(st.floats(0, 5), st.floats(0, 10))
def test_disturbance_switches_on_at_onset(onset, t):
    d = DisturbanceSpec([1.0, 2.0], [0.5, 0.0], onset)
    d_m, d_u = d.at(t)
    assert np.array_equal(d_m, [1.0, 2.0] if t >= onset else [0.0, 0.0])


def test_disturbance_validation():
    with pytest.raises(ValueError):
        DisturbanceSpec([1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        DisturbanceSpec([np.inf], [0.0])
    with pytest.raises(ValueError):
        DisturbanceSpec([1.0], [0.0], onset_time=-1)


def test_csv_roundtrip_is_exact(tmp_path):
    gains = preset_gains("case2", Q_STAR)
    traj = simulate_plant(ARM, make_controller(gains), DisturbanceSpec(np.ones(3), np.zeros(3)),
                          GeneralizedState(Q_STAR + 0.5, np.zeros(3)), T=0.05, dt=1e-3, epsilon=1e-3)
    path = tmp_path / "t.csv"
    traj.to_csv(path)
    back = Trajectory.from_csv(path)
    assert back.columns() == traj.columns()
    assert np.array_equal(back.table(), traj.table())
    assert path.read_text().splitlines()[0].startswith("t,q1,q2,q3,p1,p2,p3,z1,z2,z3,u1,u2,u3,H,Hbar,S")


def test_zero_disturbance_equilibrium_start_stays_put():
    gains = preset_gains("case2", Q_STAR)
    traj = simulate_plant(ARM, make_controller(gains), DisturbanceSpec.none(3),
                          GeneralizedState(Q_STAR, np.zeros(3)), T=0.5, dt=1e-3)
    assert np.all(traj.norm_xbar == 0) and np.all(traj.norm_ybar == 0)
    assert np.all(traj.q == Q_STAR)


class _Destabilizer:
    kind = "bad"

    def torque(self, model, x, z, qdot=None, mech=None):
        return 1e4 * x.q

    def integrator_rate(self, x):
        return np.zeros(x.dof)


def test_divergence_is_reported():
    model = build_point_mass(n=2)
    with pytest.raises(SimulationDivergence) as err:
        simulate_plant(model, _Destabilizer(), DisturbanceSpec.none(2), GeneralizedState([1.0, 0.0], [0.0, 0.0]), T=5.0, dt=1e-3)
    assert err.value.time < 5.0


def test_direct_form_requires_matched_disturbance_from_start():
    gains = preset_gains("case2", Q_STAR)
    with pytest.raises(ValueError):
        simulate_closed_loop_direct(ARM, gains, DisturbanceSpec(np.ones(3), np.zeros(3), onset_time=1.0),
                                    AugmentedState(np.zeros(3), np.zeros(3), np.zeros(3)), T=0.1)


def test_torque_limit_clamps_and_counts():
    gains = preset_gains("case2", Q_STAR)
    traj = simulate_plant(ARM, make_controller(gains), DisturbanceSpec(np.ones(3), np.zeros(3)),
                          GeneralizedState(Q_STAR + 0.5, np.zeros(3)), T=0.2, dt=1e-3, torque_limit=2.0)
    assert np.max(np.abs(traj.u)) <= 2.0
    assert traj.meta["saturated_samples"] > 0


def test_baseline_run_has_no_closed_loop_columns():
    gains = preset_gains("case1", Q_STAR)
    traj = simulate_plant(ARM, make_controller(gains), DisturbanceSpec(np.ones(3), np.zeros(3)),
                          GeneralizedState(Q_STAR + 0.5, np.zeros(3)), T=0.05, dt=1e-3)
    assert np.all(np.isnan(traj.Hbar)) and np.all(np.isfinite(traj.H))
    assert traj.meta["controller"] == "esdi"


def test_onset_disturbance_moves_the_plant_only_after_onset():
    gains = preset_gains("case2", Q_STAR)
    traj = simulate_plant(ARM, make_controller(gains), DisturbanceSpec(np.ones(3), np.zeros(3), onset_time=0.1),
                          GeneralizedState(Q_STAR, np.zeros(3)), T=0.3, dt=1e-3)
    before = traj.times <= 0.1
    assert np.all(traj.q[before] == Q_STAR)
    assert np.linalg.norm(traj.q[-1] - Q_STAR) > 0
