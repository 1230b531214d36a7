import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pbic.cert import certify
from pbic.config import load_config
from pbic.control import AugmentedState, make_controller, lyapunov_S
from pbic.sim import DisturbanceSpec, simulate_closed_loop_direct, simulate_plant

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def report():
    """Record and print one pass/fail line for an acceptance criterion."""

    def _report(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return _report


def _plant_run(cfg, d_u=None, certify_run=True):
    model, gains = cfg.build_model(), cfg.build_gains()
    dist = DisturbanceSpec(cfg.d_m, cfg.d_u if d_u is None else d_u)
    traj = simulate_plant(model, make_controller(gains), dist, cfg.initial_state(), np.asarray(cfg.z0), cfg.T, cfg.dt)
    out = SimpleNamespace(cfg=cfg, model=model, gains=gains, traj=traj, cert=None, dist=dist)
    if cfg.kind == "pbic":
        out.xbar0 = cfg.xbar0(gains)
        if certify_run:
            out.cert = certify(model, gains, out.xbar0, region=cfg.operating_region(gains), theta=cfg.theta,
                               d_u=dist.d_u, seed=cfg.seed, extra_states=traj.xbar[::10])
            traj.S = lyapunov_S(traj.xbar, gains, out.cert.epsilon)
    return out


@pytest.fixture(scope="session")
def case1_run():
    return _plant_run(load_config("case1"))


@pytest.fixture(scope="session")
def case2_run():
    return _plant_run(load_config("case2"))


@pytest.fixture(scope="session")
def case3_run():
    return _plant_run(load_config("case3"))


@pytest.fixture(scope="session")
def case2_direct(case2_run):
    r = case2_run
    traj = simulate_closed_loop_direct(r.model, r.gains, r.dist, AugmentedState.from_vector(r.xbar0),
                                       r.cfg.T, r.cfg.dt, r.cert.epsilon)
    return SimpleNamespace(**{**vars(r), "traj": traj})


@pytest.fixture(scope="session")
def iss_runs():
    cfg = load_config("case2")
    d_u = 0.05 * np.ones(3)
    return _plant_run(cfg, d_u), _plant_run(cfg, 0.5 * d_u, certify_run=False)
