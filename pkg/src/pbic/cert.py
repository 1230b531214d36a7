"""Exponential-stability and ISS certificates for the PBIC closed loop.

Certificates are sampling based and scoped to an operating region in
augmented coordinates ``xbar = (q_bar, p_bar, z_bar)``: conditions that
depend on the state are checked at region samples (Latin hypercube plus
any trajectory states supplied) rather than over the continuum.

Throughout, eigenvalue tests use symmetric parts and treat ``>= -1e-10``
as positive semidefinite.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .control import (
    ControllerGains,
    closed_loop_gradient,
    closed_loop_hamiltonian,
    lyapunov_S,
)
from .plant import Array, GeneralizedState, PlantModel, mechanics

PSD_TOL = -1e-10
PD_TOL = 1e-10


class InfeasibleCertificate(RuntimeError):
    """No certificate exists on the given samples; carries a witness state."""

    def __init__(self, condition: str, witness: Array, value: float, detail: str = ""):
        msg = f"{condition} fails at xbar={np.array2string(np.asarray(witness), precision=4)} (value {value:.3e})"
        super().__init__(msg + (f"; {detail}" if detail else ""))
        self.condition = condition
        self.witness = np.asarray(witness)
        self.value = value


def _sym(A: Array) -> Array:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _lmin(A: Array):
    return np.linalg.eigvalsh(_sym(A))[..., 0]


def _lmax(A: Array) -> float:
    return float(np.linalg.eigvalsh(_sym(A))[-1])


# ---------------------------------------------------------------------------
# Operating region


@dataclass(frozen=True, eq=False)
class OperatingRegion:
    """Axis-aligned box in augmented coordinates."""

    lower: Array
    upper: Array
    description: str = "box"

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size % 3 or np.any(hi < lo):
            raise ValueError("region bounds must be 3n-vectors with lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def sample(self, n_samples: int, seed: int = 0) -> Array:
        lhs = qmc.LatinHypercube(d=self.lower.size, seed=seed).random(n_samples)
        # affine map by hand: qmc.scale refuses zero-width axes
        return self.lower + lhs * (self.upper - self.lower)

    def contains(self, xbar: Array, rel_slack: float = 1e-9) -> Array:
        slack = rel_slack * np.maximum(1.0, self.upper - self.lower)
        xbar = np.atleast_2d(xbar)
        return np.all((xbar >= self.lower - slack) & (xbar <= self.upper + slack), axis=1)

    def scaled(self, factor: float) -> "OperatingRegion":
        mid = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower) * factor
        return OperatingRegion(mid - half, mid + half, f"{self.description} x{factor:g}")

    def to_dict(self) -> dict:
        return dict(lower=self.lower.tolist(), upper=self.upper.tolist(), description=self.description)


def sublevel_box(gains: ControllerGains, xbar0: Array, inflate: float = 0.2) -> OperatingRegion:
    """Bounding box of ``{H_bar <= H_bar(xbar0)}``, widened by ``inflate``.

    For ``H_bar = 1/2 x' P x`` the box half-width along axis ``i`` is
    ``sqrt(2 c (P^-1)_ii)`` with ``P^-1 = blockdiag(Kp^-1, Md, Ki)``.
    """
    c = float(closed_loop_hamiltonian(xbar0, gains))
    Pinv_diag = np.concatenate([np.diag(np.linalg.inv(gains.Kp)), np.diag(gains.Md), np.diag(gains.Ki)])
    half = (1.0 + inflate) * np.sqrt(2.0 * c * Pinv_diag)
    return OperatingRegion(-half, half, f"H_bar sublevel box (level {c:.6g}, inflate {inflate:g})")


# ---------------------------------------------------------------------------
# Pointwise conditions


def check_damping_condition(model: PlantModel, gains: ControllerGains, x: GeneralizedState):
    """Damping condition ``1/2 (Gamma Md + Md Gamma') + Kd >= 0`` at ``x``.

    Returns ``(holds, min_eigenvalue)``.
    """
    G = mechanics(model, x.q, x.p).Gamma
    lam = float(_lmin(0.5 * (G @ gains.Md + gains.Md @ G.T) + gains.Kd))
    return lam >= PSD_TOL, lam


def beta_bounds(gains: ControllerGains):
    """Quadratic bounds ``beta_min/2 |x|^2 <= H_bar <= beta_max/2 |x|^2``.

    Uses the eigenvalues of ``Md^-1``, ``Kp`` and ``Ki^-1``, the matrices
    that actually weight ``H_bar``.
    """
    mats = (gains.Md_inv, gains.Kp, gains.Ki_inv)
    beta_min = min(float(_lmin(A)) for A in mats)
    beta_max = max(_lmax(A) for A in mats)
    return beta_min, beta_max


def kappas(gains: ControllerGains, epsilon: float):
    """``(kappa1, kappa2)`` with ``kappa1 |x|^2 <= S <= kappa2 |x|^2``."""
    beta_min, beta_max = beta_bounds(gains)
    cross = epsilon * beta_max**2 * _lmax(gains.Md)
    return 0.5 * (beta_min - cross), 0.5 * (beta_max + cross)


def epsilon_cap(gains: ControllerGains) -> float:
    """The root of ``kappa1(eps) = 0``."""
    beta_min, beta_max = beta_bounds(gains)
    return beta_min / (beta_max**2 * _lmax(gains.Md))


def sandwich_violations(gains: ControllerGains, epsilon: float, xbar: Array) -> int:
    """Count samples violating ``kappa1 |x|^2 <= S(x) <= kappa2 |x|^2``."""
    k1, k2 = kappas(gains, epsilon)
    xbar = np.atleast_2d(xbar)
    r2 = np.sum(xbar**2, axis=1)
    S = lyapunov_S(xbar, gains, epsilon)
    slack = 1e-12 * np.maximum(1.0, r2)
    return int(np.sum((S < k1 * r2 - slack) | (S > k2 * r2 + slack)))


@dataclass(frozen=True, eq=False)
class RegionBlocks:
    """State-dependent pieces of the dissipation matrix at stacked samples."""

    xbar: Array
    Minv: Array      # (N, n, n)
    GammaMd: Array   # (N, n, n)


def region_blocks(model: PlantModel, gains: ControllerGains, xbar: Array) -> RegionBlocks:
    xbar = np.atleast_2d(np.asarray(xbar, dtype=float))
    n = gains.dof
    Minv = np.empty((len(xbar), n, n))
    GMd = np.empty_like(Minv)
    for i, xb in enumerate(xbar):
        q_bar, p_bar = xb[:n], xb[n:2 * n]
        mech = mechanics(model, q_bar + gains.q_star, p_bar - gains.Kp @ q_bar)
        Minv[i] = mech.Minv
        GMd[i] = mech.Gamma @ gains.Md
    return RegionBlocks(xbar, Minv, GMd)


def _assemble_upsilon(Minv, GMd, gains: ControllerGains, epsilon: float, velocity_shift: str = "Md") -> Array:
    n = gains.dof
    shift = {"Md": gains.Md, "Md_inv": gains.Md_inv}[velocity_shift]
    N = Minv.shape[0]
    U = np.zeros((N, 3 * n, 3 * n))
    a, b, c = slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n)
    U[:, a, a] = Minv
    U[:, b, b] = gains.Kd + _sym(GMd) - epsilon * shift
    U[:, c, c] = epsilon * gains.Ki
    U[:, a, c] = -0.5 * epsilon * Minv @ gains.Md
    U[:, b, c] = -0.5 * epsilon * np.swapaxes(GMd + gains.Kd, -1, -2)
    U[:, c, a] = np.swapaxes(U[:, a, c], -1, -2)
    U[:, c, b] = np.swapaxes(U[:, b, c], -1, -2)
    return U


def upsilon(model: PlantModel, gains: ControllerGains, epsilon: float, aug, velocity_shift: str = "Md") -> Array:
    """Dissipation matrix with ``dS/dt = -grad(H_bar)' Upsilon grad(H_bar)``.

    The velocity block is ``Kd + sym(Gamma_bar Md) - eps Md``; expanding
    ``dS/dt`` along the closed loop gives ``Md`` in the shift term.
    ``velocity_shift="Md_inv"`` selects the variant with ``Md^-1`` in its
    place, kept for comparison.
    """
    xb = aug.vector() if hasattr(aug, "vector") else np.asarray(aug, dtype=float)
    blocks = region_blocks(model, gains, xb)
    return _assemble_upsilon(blocks.Minv, blocks.GammaMd, gains, epsilon, velocity_shift)[0]


def schur_test(U: Array, n: int) -> bool:
    """Block test: ``U11 > 0`` and ``U33 - U12' U11^-1 U12 > 0``."""
    U11, U12, U33 = U[: 2 * n, : 2 * n], U[: 2 * n, 2 * n:], U[2 * n:, 2 * n:]
    if _lmin(U11) <= PD_TOL:
        return False
    return bool(_lmin(U33 - U12.T @ np.linalg.solve(U11, U12)) > PD_TOL)


# ---------------------------------------------------------------------------
# Epsilon selection and derived bounds


@dataclass
class EpsilonSearch:
    epsilon: float
    cap: float
    min_eig: float
    iterations: int
    history: list = field(default_factory=list)


def _damping_check_blocks(blocks: RegionBlocks, gains: ControllerGains) -> None:
    lam = _lmin(_sym(blocks.GammaMd) + gains.Kd)
    i = int(np.argmin(lam))
    if lam[i] < PSD_TOL:
        raise InfeasibleCertificate("damping condition", blocks.xbar[i], float(lam[i]))


def search_epsilon(
    blocks: RegionBlocks,
    gains: ControllerGains,
    rel_tol: float = 1e-6,
    velocity_shift: str = "Md",
) -> EpsilonSearch:
    """Largest ``eps`` in ``(0, cap)`` with ``kappa1 > 0`` and ``Upsilon > 0``.

    Halves down from ``cap`` until a feasible point is found, then bisects
    between the feasible and infeasible brackets to ``rel_tol``.
    """
    _damping_check_blocks(blocks, gains)
    cap = epsilon_cap(gains)
    history = []

    def feasible(eps):
        lam = _lmin(_assemble_upsilon(blocks.Minv, blocks.GammaMd, gains, eps, velocity_shift))
        i = int(np.argmin(lam))
        ok = kappas(gains, eps)[0] > 0 and lam[i] > PD_TOL
        history.append((eps, float(lam[i]), ok))
        return ok, float(lam[i]), i

    hi, lo = cap, 0.5 * cap
    ok, lam, i = feasible(lo)
    for _ in range(60):
        if ok:
            break
        hi, lo = lo, 0.5 * lo
        ok, lam, i = feasible(lo)
    else:
        raise InfeasibleCertificate("Upsilon > 0", blocks.xbar[i], lam, f"no feasible eps down to {lo:.3e}")
    best_lam = lam
    while hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        ok, lam, _ = feasible(mid)
        if ok:
            lo, best_lam = mid, lam
        else:
            hi = mid
    return EpsilonSearch(lo, cap, best_lam, len(history), history)


def select_epsilon(model: PlantModel, gains: ControllerGains, samples: Array, **kw) -> float:
    return search_epsilon(region_blocks(model, gains, samples), gains, **kw).epsilon


def mu_estimate(model: PlantModel, gains: ControllerGains, epsilon: float, samples, velocity_shift: str = "Md"):
    """Sampled minimum eigenvalue of ``Upsilon``; returns ``(mu, argmin xbar)``."""
    blocks = samples if isinstance(samples, RegionBlocks) else region_blocks(model, gains, samples)
    lam = _lmin(_assemble_upsilon(blocks.Minv, blocks.GammaMd, gains, epsilon, velocity_shift))
    i = int(np.argmin(lam))
    return float(lam[i]), blocks.xbar[i]


def rate_bounds(mu: float, beta_max: float, epsilon: float, Md: Array, theta: float = 0.5):
    """Decay-rate bounds ``(matched, unmatched)``.

    matched:   mu beta_max / (1 + eps beta_max lmax(Md^-1))
    unmatched: mu beta_max (1 - theta) / (1 + eps beta_max lmax(Md))
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    Md = np.atleast_2d(Md)
    matched = mu * beta_max / (1 + epsilon * beta_max * _lmax(np.linalg.inv(Md)))
    unmatched = mu * beta_max * (1 - theta) / (1 + epsilon * beta_max * _lmax(Md))
    return matched, unmatched


def overshoot_bound(kappa1: float, kappa2: float, Md: Array, xbar0: Array) -> float:
    if kappa1 <= 0:
        raise ValueError("kappa1 must be positive")
    return _lmax(np.linalg.inv(np.atleast_2d(Md))) * np.sqrt(kappa2 / kappa1) * float(np.linalg.norm(xbar0))


def gain_margin(mu: float, beta_max: float, theta: float, Kp: Array) -> float:
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    return mu * beta_max**2 * theta / _lmax(np.atleast_2d(Kp))


def iss_ball(g_m: float, d_u: Array) -> float:
    """Radius ``|d_u| / g_m`` of the set the unmatched loop converges to."""
    return float(np.linalg.norm(d_u)) / g_m


# ---------------------------------------------------------------------------
# Certificate


@dataclass
class Certificate:
    epsilon: float
    beta_min: float
    beta_max: float
    kappa1: float
    kappa2: float
    mu: float
    rate_bound_matched: float
    rate_bound_unmatched: float
    overshoot_xi: float
    gain_margin: float
    theta: float
    iss_radius: float
    ultimate_radius: float
    xbar0: list
    region: dict
    valid: dict
    witnesses: dict
    n_samples: int
    seed: int
    epsilon_cap: float
    velocity_shift: str = "Md"

    @property
    def is_valid(self) -> bool:
        return all(self.valid.values())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Certificate":
        return cls(**json.loads(text))


def certify(
    model: PlantModel,
    gains: ControllerGains,
    xbar0: Array,
    region: Optional[OperatingRegion] = None,
    theta: float = 0.5,
    d_u: Optional[Array] = None,
    n_samples: int = 10_000,
    seed: int = 0,
    extra_states: Optional[Array] = None,
    velocity_shift: str = "Md",
) -> Certificate:
    """Run every certificate step on region samples plus ``extra_states``.

    Raises ``InfeasibleCertificate`` when the damping condition or
    ``Upsilon > 0`` cannot be met on the samples.
    """
    xbar0 = np.asarray(xbar0, dtype=float)
    n = gains.dof
    region = region or sublevel_box(gains, xbar0)
    samples = region.sample(n_samples, seed)
    if extra_states is not None and len(extra_states):
        samples = np.vstack([samples, np.atleast_2d(extra_states)])
    blocks = region_blocks(model, gains, samples)
    damping_lam = _lmin(_sym(blocks.GammaMd) + gains.Kd)
    search = search_epsilon(blocks, gains, velocity_shift=velocity_shift)
    eps = search.epsilon
    beta_min, beta_max = beta_bounds(gains)
    k1, k2 = kappas(gains, eps)
    U = _assemble_upsilon(blocks.Minv, blocks.GammaMd, gains, eps, velocity_shift)
    lam = _lmin(U)
    i_mu = int(np.argmin(lam))
    mu, mu_arg = float(lam[i_mu]), samples[i_mu]
    matched, unmatched = rate_bounds(mu, beta_max, eps, gains.Md, theta)
    g_m = gain_margin(mu, beta_max, theta, gains.Kp)
    d_u = np.zeros(n) if d_u is None else np.asarray(d_u, dtype=float)
    valid = dict(
        damping_condition=bool(damping_lam.min() >= PSD_TOL),
        kappa1_positive=bool(k1 > 0),
        kappa_order=bool(k1 <= k2),
        upsilon_positive=bool(mu > PD_TOL),
        schur_at_mu_witness=schur_test(U[i_mu], n),
        sandwich=sandwich_violations(gains, eps, samples) == 0,
        theta_in_range=bool(0 < theta < 1),
    )
    return Certificate(
        epsilon=eps,
        beta_min=beta_min,
        beta_max=beta_max,
        kappa1=k1,
        kappa2=k2,
        mu=mu,
        rate_bound_matched=matched,
        rate_bound_unmatched=unmatched,
        overshoot_xi=overshoot_bound(k1, k2, gains.Md, xbar0),
        gain_margin=g_m,
        theta=theta,
        iss_radius=iss_ball(g_m, d_u),
        ultimate_radius=float(np.sqrt(k2 / k1)) * iss_ball(g_m, d_u),
        xbar0=xbar0.tolist(),
        region=region.to_dict(),
        valid=valid,
        witnesses=dict(
            mu_argmin=mu_arg.tolist(),
            damping_argmin=blocks.xbar[int(np.argmin(damping_lam))].tolist(),
            damping_min_eig=float(damping_lam.min()),
        ),
        n_samples=len(samples),
        seed=seed,
        epsilon_cap=search.cap,
        velocity_shift=velocity_shift,
    )


# ---------------------------------------------------------------------------
# Trajectory checks


@dataclass
class EnvelopeReport:
    status: str                  # "pass", "violation" or "region_exit"
    rate: float
    worst_margin: float          # max over samples of |xbar| / envelope
    first_violation_time: Optional[float]
    overshoot_ok: bool
    peak_output: float
    region_exit_time: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.status == "pass" and self.overshoot_ok


def verify_envelope(traj, cert: Certificate, xbar0: Array, rate: Optional[float] = None, slack: float = 1e-6) -> EnvelopeReport:
    """Pointwise check of ``|xbar(t)| <= sqrt(k2/k1) |xbar0| exp(-rate t)``.

    Also checks ``|y_bar(t)| <= xi``.  A trajectory that leaves the
    certificate region is reported as ``region_exit`` since the bound does
    not apply there.
    """
    rate = cert.rate_bound_matched if rate is None else rate
    region = OperatingRegion(**cert.region)
    inside = region.contains(traj.xbar)
    exit_time = None if inside.all() else float(traj.times[np.argmin(inside)])
    env = np.sqrt(cert.kappa2 / cert.kappa1) * np.linalg.norm(xbar0) * np.exp(-rate * traj.times)
    ratio = traj.norm_xbar / np.maximum(env, np.finfo(float).tiny)
    bad = traj.norm_xbar > env * (1 + slack)
    first = float(traj.times[np.argmax(bad)]) if bad.any() else None
    peak = float(np.max(traj.norm_ybar))
    status = "region_exit" if exit_time is not None else ("violation" if first is not None else "pass")
    return EnvelopeReport(status, rate, float(np.max(ratio)), first, bool(peak <= cert.overshoot_xi * (1 + slack)), peak, exit_time)


def dissipation_audit(model: PlantModel, gains: ControllerGains, epsilon: float, traj, velocity_shift: str = "Md"):
    """Compare finite-difference ``dS/dt`` with ``-grad' Upsilon grad``.

    Uses a fourth-order central stencil on the recorded ``S`` samples;
    returns ``(relative_errors, predicted, finite_difference)`` on the
    interior samples.
    """
    S = lyapunov_S(traj.xbar, gains, epsilon)
    dt = traj.dt
    fd = (-S[4:] + 8 * S[3:-1] - 8 * S[1:-3] + S[:-4]) / (12 * dt)
    xb = traj.xbar[2:-2]
    blocks = region_blocks(model, gains, xb)
    U = _assemble_upsilon(blocks.Minv, blocks.GammaMd, gains, epsilon, velocity_shift)
    grad = closed_loop_gradient(xb, gains)
    pred = -np.einsum("ni,nij,nj->n", grad, U, grad)
    rel = np.abs(fd - pred) / np.maximum(np.abs(pred), np.finfo(float).tiny)
    return rel, pred, fd
