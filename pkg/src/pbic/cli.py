"""Command-line experiment runner.

    pbic simulate --config case2 --out runs/case2
    pbic certify  --config my.toml
    pbic compare  --config case1 --config case2 --config case3 --out runs/cmp
    pbic list-presets

``--config`` takes a preset name, a TOML/JSON config or a run manifest.
Exit codes: 0 ok, 2 config error, 3 simulation divergence, 4 certificate
infeasible.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .cert import Certificate, InfeasibleCertificate, certify, select_epsilon, verify_envelope
from .config import ConfigError, ExperimentConfig, load_config, parse_document, preset_names, preset_text
from .control import AugmentedState, make_controller
from .metrics import fit_decay_rate, peak_output, position_overshoot, steady_state_error
from .sim import SimulationDivergence, Trajectory, simulate_closed_loop_direct, simulate_plant, write_manifest

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INFEASIBLE = 0, 2, 3, 4

TRAJ_STRIDE = 10     # trajectory states added to certificate samples


# -- shared building blocks -----------------------------------------------


def resolve_epsilon(cfg: ExperimentConfig) -> float:
    """Epsilon for the recorded ``S`` column: configured, or selected on the region."""
    if cfg.kind != "pbic":
        return 0.0
    if cfg.epsilon is not None:
        return cfg.epsilon
    gains = cfg.build_gains()
    samples = cfg.operating_region(gains).sample(cfg.n_samples, cfg.seed)
    return select_epsilon(cfg.build_model(), gains, samples)


def run_trajectory(cfg: ExperimentConfig, epsilon: float = 0.0) -> Trajectory:
    model, gains = cfg.build_model(), cfg.build_gains()
    if cfg.form == "direct":
        aug0 = AugmentedState.from_vector(cfg.xbar0(gains))
        return simulate_closed_loop_direct(model, gains, cfg.disturbance(), aug0, cfg.T, cfg.dt, epsilon)
    return simulate_plant(
        model, make_controller(gains), cfg.disturbance(), cfg.initial_state(),
        np.asarray(cfg.z0), cfg.T, cfg.dt, epsilon,
    )


def summarize(cfg: ExperimentConfig, traj: Trajectory) -> dict:
    q_star = np.asarray(cfg.q_star)
    out = dict(
        steady_state_error=steady_state_error(traj, q_star),
        fitted_decay_rate=fit_decay_rate(traj.times, traj.norm_xbar),
        peak_ybar=float(np.max(traj.norm_ybar)) if cfg.kind == "pbic" else float("nan"),
    )
    n = traj.dof
    peaks = peak_output(traj, cfg.build_gains()) if cfg.kind == "pbic" else np.full(n, np.nan)
    for j, v in enumerate(peaks):
        out[f"peak_ybar_{j + 1}"] = float(v)
    for j, v in enumerate(position_overshoot(traj, q_star)):
        out[f"overshoot_q{j + 1}"] = float(v)
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _out_dir(cfg: ExperimentConfig, override: Optional[str]) -> Path:
    out = Path(override or cfg.out_dir or f"runs/{cfg.name}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def simulate_to(cfg: ExperimentConfig, out: Path) -> tuple[Trajectory, dict]:
    """Run ``cfg``, write ``trajectory.csv`` and ``manifest.json`` into ``out``."""
    eps = resolve_epsilon(cfg)
    traj = run_trajectory(cfg, eps)
    csv_path = out / "trajectory.csv"
    traj.to_csv(csv_path)
    pinned = cfg.with_overrides(epsilon=eps) if cfg.kind == "pbic" else cfg
    metrics = summarize(cfg, traj)
    write_manifest(out / "manifest.json", {
        "manifest": {
            "version": __version__,
            "trajectory": csv_path.name,
            "trajectory_sha256": _sha256(csv_path),
            "samples": len(traj),
            "metrics": metrics,
        },
        "config": pinned.to_dict(),
    })
    return traj, metrics


def certify_config(cfg: ExperimentConfig, traj: Optional[Trajectory] = None) -> Certificate:
    model, gains = cfg.build_model(), cfg.build_gains()
    extra = None if traj is None else traj.xbar[::TRAJ_STRIDE]
    return certify(
        model, gains, cfg.xbar0(gains), region=cfg.operating_region(gains), theta=cfg.theta,
        d_u=np.asarray(cfg.d_u), n_samples=cfg.n_samples, seed=cfg.seed, extra_states=extra,
    )


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


# -- subcommands -----------------------------------------------------------


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(dt=args.dt, T=args.duration, seed=args.seed)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args.out)
    _, metrics = simulate_to(cfg, out)
    print(f"wrote {out / 'trajectory.csv'} and {out / 'manifest.json'}")
    for key in ("steady_state_error", "peak_ybar", "fitted_decay_rate"):
        print(f"{key}: {_fmt(metrics[key])}")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = _load(args)
    if cfg.kind != "pbic":
        raise ConfigError("certify needs a pbic controller")
    out = _out_dir(cfg, args.out)
    traj = None
    try:
        traj = run_trajectory(cfg)
    except SimulationDivergence as err:
        print(f"warning: {err}; certifying on region samples only", file=sys.stderr)
    try:
        cert = certify_config(cfg, traj)
    except InfeasibleCertificate as err:
        report = dict(condition=err.condition, witness=err.witness.tolist(), value=err.value, message=str(err))
        (out / "infeasible.json").write_text(json.dumps(report, indent=2))
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    (out / "certificate.json").write_text(cert.to_json())
    print(f"wrote {out / 'certificate.json'}")
    for key in ("epsilon", "beta_max", "kappa1", "kappa2", "mu", "rate_bound_matched",
                "rate_bound_unmatched", "overshoot_xi", "gain_margin", "ultimate_radius"):
        print(f"{key}: {_fmt(getattr(cert, key))}")
    failed = [k for k, ok in cert.valid.items() if not ok]
    if failed:
        print(f"infeasible: conditions {failed} fail; witness {cert.witnesses['mu_argmin']}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if traj is None:
        return EXIT_DIVERGED
    if not np.any(cfg.d_u):
        env = verify_envelope(traj, cert, np.asarray(cert.xbar0))
        (out / "envelope.json").write_text(json.dumps(asdict(env), indent=2))
        print(f"envelope: {env.status}, overshoot within bound: {env.overshoot_ok}")
    return EXIT_OK


COMPARE_FIELDS = (
    "epsilon", "beta_max", "rate_bound_matched", "rate_bound_unmatched",
    "overshoot_xi", "gain_margin", "ultimate_radius",
)


def compare_member(index: int, cfg_dict: dict, out: str) -> dict:
    """Simulate (and certify, for pbic) one compared config; returns its row."""
    cfg = ExperimentConfig.from_dict(cfg_dict)
    member_dir = Path(out) / f"{index:02d}_{cfg.name}"
    member_dir.mkdir(parents=True, exist_ok=True)
    traj, metrics = simulate_to(cfg, member_dir)
    row = {"name": cfg.name, "kind": cfg.kind, **metrics}
    cert = None
    if cfg.kind == "pbic":
        try:
            cert = certify_config(cfg, traj)
            (member_dir / "certificate.json").write_text(cert.to_json())
        except InfeasibleCertificate:
            cert = None
    for key in COMPARE_FIELDS:
        row[key] = float("nan") if cert is None else float(getattr(cert, key))
    row["certificate_valid"] = bool(cert is not None and cert.is_valid)
    return row


def check_scenarios(configs: list[ExperimentConfig]) -> None:
    ref = configs[0].scenario()
    for cfg in configs[1:]:
        other = cfg.scenario()
        diff = sorted(k for k in ref if ref[k] != other[k])
        if diff:
            raise ConfigError(f"{cfg.name} differs from {configs[0].name} in scenario fields {diff}")


def write_table(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def cmd_compare(args) -> int:
    if len(args.config) < 2:
        raise ConfigError("compare needs at least two --config entries")
    configs = [load_config(c).with_overrides(dt=args.dt, T=args.duration, seed=args.seed) for c in args.config]
    check_scenarios(configs)
    out = Path(args.out or "runs/compare")
    out.mkdir(parents=True, exist_ok=True)
    jobs = max(1, min(args.jobs or os.cpu_count() or 1, len(configs)))
    work = [(i, cfg.to_dict(), str(out)) for i, cfg in enumerate(configs)]
    if jobs == 1:
        rows = [compare_member(*w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(compare_member, *zip(*work)))
    write_table(out / "compare.csv", rows)
    cols = ("name", "kind", "steady_state_error", "fitted_decay_rate", "peak_ybar", "rate_bound_matched")
    print("  ".join(f"{c:>20}" for c in cols))
    for row in rows:
        print("  ".join(f"{_fmt(row[c]):>20}" for c in cols))
    print(f"wrote {out / 'compare.csv'}")
    return EXIT_OK


def cmd_list_presets(args) -> int:
    for name in preset_names():
        raw = parse_document(preset_text(name), "toml")
        print(f"{name:8s} {raw['controller']['kind']:5s} {raw.get('description', '')}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbic", description="PBIC simulation and certification runner")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, many=False):
        if many:
            p.add_argument("--config", action="append", required=True, help="preset name or config path (repeat)")
        else:
            p.add_argument("--config", required=True, help="preset name, TOML/JSON config or manifest")
        p.add_argument("--out", help="output directory")
        p.add_argument("--dt", type=float, help="override integration step")
        p.add_argument("--duration", type=float, help="override simulated time T")
        p.add_argument("--seed", type=int, help="override region sampling seed")

    p = sub.add_parser("simulate", help="run one experiment, write CSV and manifest")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("certify", help="build a stability certificate for a pbic config")
    common(p)
    p.set_defaults(func=cmd_certify)
    p = sub.add_parser("compare", help="run several configs on one scenario, write a summary table")
    common(p, many=True)
    p.add_argument("--jobs", type=int, help="parallel member runs (default: one per config)")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("list-presets", help="list shipped preset configs")
    p.set_defaults(func=cmd_list_presets)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationDivergence as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except InfeasibleCertificate as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
