import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from pbic.cert import (
    Certificate,
    InfeasibleCertificate,
    OperatingRegion,
    beta_bounds,
    certify,
    check_damping_condition,
    epsilon_cap,
    gain_margin,
    iss_ball,
    kappas,
    mu_estimate,
    overshoot_bound,
    rate_bounds,
    region_blocks,
    sandwich_violations,
    schur_test,
    search_epsilon,
    sublevel_box,
    upsilon,
    verify_envelope,
)
from pbic.config import load_config
from pbic.control import ControllerGains, preset_gains
from pbic.models import build_point_mass, build_surrogate_arm
from pbic.plant import GeneralizedState

from oracles import plant_field_augmented

Q_STAR = np.array([0.2, 0.6, -0.2])
ARM = build_surrogate_arm()
CASE2 = preset_gains("case2", Q_STAR)
diag3 = arrays(float, 3, elements=st.floats(0.05, 20))


def _S(xbar, g, eps):
    # Written out from the definition, independent of control.lyapunov_S.
    qb, pb, zb = np.split(xbar, 3)
    H = 0.5 * pb @ np.linalg.solve(g.Md, pb) + 0.5 * qb @ g.Kp @ qb + 0.5 * zb @ np.linalg.solve(g.Ki, zb)
    return H - eps * np.linalg.solve(g.Md, pb) @ g.Md @ np.linalg.solve(g.Ki, zb)


def _grad_Hbar(xbar, g):
    qb, pb, zb = np.split(xbar, 3)
    return np.concatenate([g.Kp @ qb, np.linalg.solve(g.Md, pb), np.linalg.solve(g.Ki, zb)])


@given(arrays(float, 9, elements=st.floats(-2, 2)), st.floats(1e-4, 3e-3))
def test_upsilon_reproduces_lyapunov_derivative(xbar, eps):
    assume(np.linalg.norm(xbar) > 1e-2)
    f = plant_field_augmented(ARM, CASE2, xbar, np.ones(3), np.zeros(3))
    h = 1e-6
    Sdot = (_S(xbar + h * f, CASE2, eps) - _S(xbar - h * f, CASE2, eps)) / (2 * h)
    g = _grad_Hbar(xbar, CASE2)
    pred = -g @ upsilon(ARM, CASE2, eps, xbar) @ g
    assert abs(Sdot - pred) <= 1e-5 * max(1.0, abs(pred))


def test_md_inverse_velocity_shift_does_not_reproduce_derivative():
    xbar = np.array([0.3, -0.2, 0.1, 1.0, -2.0, 0.5, 3.0, 1.0, -2.0])
    eps = 3e-3
    f = plant_field_augmented(ARM, CASE2, xbar, np.ones(3), np.zeros(3))
    h = 1e-6
    Sdot = (_S(xbar + h * f, CASE2, eps) - _S(xbar - h * f, CASE2, eps)) / (2 * h)
    g = _grad_Hbar(xbar, CASE2)
    good = -g @ upsilon(ARM, CASE2, eps, xbar) @ g
    alt = -g @ upsilon(ARM, CASE2, eps, xbar, velocity_shift="Md_inv") @ g
    assert abs(Sdot - good) < 1e-6 * abs(Sdot)
    assert abs(Sdot - alt) > 1e-4 * abs(Sdot)


def test_beta_bounds_presets():
    assert beta_bounds(CASE2) == (pytest.approx(1 / 15), pytest.approx(10.0))
    assert beta_bounds(preset_gains("case3", Q_STAR))[1] == pytest.approx(50 / 3)


def test_beta_bounds_nondiagonal():
    R = np.array([[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]])
    Kp = R @ np.diag([2.0, 7.0]) @ R.T
    g = ControllerGains(Kp=Kp, Ki=np.diag([0.5, 4.0]), Kd=np.eye(2), Md=np.diag([0.1, 0.4]), q_star=[0, 0])
    # eigenvalues: Md^-1 {10, 2.5}, Kp {2, 7}, Ki^-1 {2, 0.25}
    assert beta_bounds(g) == (pytest.approx(0.25), pytest.approx(10.0))


@given(diag3, diag3, diag3, st.floats(0.01, 0.99), arrays(float, 9, elements=st.floats(-10, 10)))
def test_sandwich_holds_for_any_admissible_epsilon(kp, ki, md, frac, xbar):
    g = ControllerGains(Kp=np.diag(kp), Ki=np.diag(ki), Kd=np.eye(3), Md=np.diag(md), q_star=np.zeros(3))
    eps = frac * epsilon_cap(g)
    k1, k2 = kappas(g, eps)
    assert 0 < k1 <= k2
    r2 = xbar @ xbar
    S = _S(xbar, g, eps)
    assert k1 * r2 - 1e-9 * (1 + r2) <= S <= k2 * r2 + 1e-9 * (1 + r2)
    assert sandwich_violations(g, eps, xbar) == 0


def test_kappa1_vanishes_at_the_cap():
    k1, _ = kappas(CASE2, epsilon_cap(CASE2))
    assert abs(k1) < 1e-15


@given(arrays(float, (6, 6), elements=st.floats(-3, 3)), st.floats(-2, 2))
def test_schur_test_agrees_with_eigenvalues(A, shift):
    U = A @ A.T + shift * np.eye(6)
    lam = np.linalg.eigvalsh(U)[0]
    assume(abs(lam) > 1e-6)
    assert schur_test(U, 2) == (lam > 0)


def test_epsilon_search_matches_grid_oracle():
    # Scalar point mass, Kp = Ki = Md = 1, Kd = 0.2: Upsilon is constant.
    # Largest feasible eps from a 1e-8 grid scan of lambda_min(Upsilon).
    model = build_point_mass(n=1)
    g = ControllerGains(Kp=[[1.0]], Ki=[[1.0]], Kd=[[0.2]], Md=[[1.0]], q_star=[0.0])
    blocks = region_blocks(model, g, np.random.default_rng(0).normal(size=(10, 3)))
    found = search_epsilon(blocks, g)
    assert found.cap == pytest.approx(1.0)
    assert found.epsilon == pytest.approx(0.1979177925, rel=2e-6)
    assert found.epsilon <= 0.1979177925 + 1e-8


def test_selected_epsilon_is_feasible_and_nearly_maximal():
    samples = sublevel_box(CASE2, np.r_[0.5 * np.ones(3), 5 * np.ones(3), np.ones(3)]).sample(500, 1)
    blocks = region_blocks(ARM, CASE2, samples)
    found = search_epsilon(blocks, CASE2)
    mu, _ = mu_estimate(ARM, CASE2, found.epsilon, blocks)
    assert mu > 0 and kappas(CASE2, found.epsilon)[0] > 0
    hi = found.epsilon * (1 + 2e-6)
    mu_hi, _ = mu_estimate(ARM, CASE2, hi, blocks)
    assert kappas(CASE2, hi)[0] <= 0 or mu_hi <= 1e-10


def test_rate_and_margin_formulas():
    Md = 0.2 * np.eye(3)
    matched, unmatched = rate_bounds(2.0, 10.0, 0.01, Md, theta=0.5)
    assert matched == pytest.approx(20 / 1.5)
    assert unmatched == pytest.approx(10 / 1.02)
    assert gain_margin(2.0, 10.0, 0.5, np.diag([10, 7.5, 7.5])) == pytest.approx(10.0)
    assert iss_ball(4.0, np.array([3.0, 4.0])) == pytest.approx(1.25)
    assert overshoot_bound(1.0, 4.0, Md, np.array([3.0, 4.0])) == pytest.approx(5 * 2 * 5)
    with pytest.raises(ValueError):
        rate_bounds(1.0, 1.0, 0.0, Md, theta=1.0)


def test_damping_margin_grows_with_kd():
    rng = np.random.default_rng(8)
    for _ in range(50):
        q, p = rng.uniform(-np.pi, np.pi, 3), rng.normal(0, 3, 3)
        x = GeneralizedState(q, p)
        lams = [check_damping_condition(ARM, CASE2.scaled(Kd=k), x)[1] for k in (0.5, 1.0, 2.0, 4.0)]
        assert np.all(np.diff(lams) > 0)


def test_kd_lattice_feasibility():
    cfg = load_config("case2")
    samples = cfg.operating_region(CASE2).sample(2000, 0)
    with pytest.raises(InfeasibleCertificate):
        search_epsilon(region_blocks(ARM, CASE2.scaled(Kd=0.5), samples), CASE2.scaled(Kd=0.5))
    for k in (0.75, 1.0, 2.0, 4.0):
        g = CASE2.scaled(Kd=k)
        blocks = region_blocks(ARM, g, samples)
        assert mu_estimate(ARM, g, search_epsilon(blocks, g).epsilon, blocks)[0] > 0


def test_tiny_kd_is_infeasible_with_witness():
    cfg = load_config("case2")
    g = CASE2.scaled(Kd=1e-4)
    with pytest.raises(InfeasibleCertificate) as err:
        certify(ARM, g, cfg.xbar0(g), n_samples=2000)
    w = err.value.witness
    n = 3
    x = GeneralizedState(w[:n] + Q_STAR, w[n:2 * n] - g.Kp @ w[:n])
    holds, lam = check_damping_condition(ARM, g, x)
    assert not holds and lam == pytest.approx(err.value.value)


def test_region_sampling():
    region = OperatingRegion(-np.ones(9), 2 * np.ones(9))
    a, b = region.sample(200, seed=3), region.sample(200, seed=3)
    assert np.array_equal(a, b)
    assert region.contains(a).all()
    assert not region.contains(3 * np.ones(9))[0]
    assert region.scaled(2.0).contains(np.full(9, 3.0)).all()
    with pytest.raises(ValueError):
        OperatingRegion(np.ones(9), np.zeros(9))


def test_sublevel_box_contains_the_sublevel_set():
    xbar0 = np.r_[0.5 * np.ones(3), 5 * np.ones(3), np.ones(3)]
    box = sublevel_box(CASE2, xbar0, inflate=0.0)
    assert box.contains(xbar0)[0]
    # points on the level set stay inside the box
    rng = np.random.default_rng(0)
    P = np.diag(np.r_[np.diag(CASE2.Kp), 1 / np.diag(CASE2.Md), 1 / np.diag(CASE2.Ki)])
    c = 0.5 * xbar0 @ P @ xbar0
    for _ in range(200):
        d = rng.normal(size=9)
        x = d * np.sqrt(2 * c / (d @ P @ d))
        assert box.contains(x)[0]


def test_certificate_json_roundtrip(case2_run):
    cert = case2_run.cert
    back = Certificate.from_json(cert.to_json())
    assert back == cert
    assert back.is_valid
    assert back.beta_max == 10.0


def test_envelope_flags_region_exit(case2_run):
    r = case2_run
    shrunk = Certificate(**{**vars(r.cert), "region": OperatingRegion(**r.cert.region).scaled(0.01).to_dict()})
    assert verify_envelope(r.traj, shrunk, r.xbar0).status == "region_exit"


def test_case3_matched_rate_bound_exceeds_case2(case2_run, case3_run):
    assert case3_run.cert.is_valid
    assert case3_run.cert.beta_max == pytest.approx(16.67, abs=0.01)
    assert case3_run.cert.rate_bound_matched > case2_run.cert.rate_bound_matched
