"""Experiment configuration: schema, loading, presets.

Configs are TOML (``.toml``) or JSON (``.json``) documents with the layout
below; ``docs/config.md`` describes every key.  A run manifest written by
the CLI is itself a valid JSON config (under its ``config`` key), so
feeding it back reproduces the run.

    name, description
    [model]        name, params
    [controller]   kind, preset, q_star, gains.{Kp,Ki,Kd,Md | Kes,Kdi}
    [disturbance]  d_m, d_u, onset_time
    [initial]      q0, p0, z0
    [run]          T, dt, form, theta, seed, n_samples, epsilon
    [region]       inflate | lower, upper
    [output]       dir

Gain entries are either a list (the diagonal) or a list of rows.
"""

from __future__ import annotations

import copy
import json
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cert import OperatingRegion, sublevel_box
from .control import GAIN_PRESETS, BaselineGains, ControllerGains, to_augmented
from .models import CATALOG, build_model
from .plant import GeneralizedState
from .sim import DisturbanceSpec


class ConfigError(ValueError):
    pass


_vec = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_gain = {"oneOf": [_vec, {"type": "array", "items": _vec, "minItems": 1}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "controller", "initial"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {"name": {"enum": sorted(CATALOG)}, "params": {"type": "object"}},
        },
        "controller": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "q_star"],
            "properties": {
                "kind": {"enum": ["pbic", "esdi"]},
                "preset": {"enum": sorted(GAIN_PRESETS)},
                "q_star": _vec,
                "gains": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: _gain for k in ("Kp", "Ki", "Kd", "Md", "Kes", "Kdi")},
                },
            },
        },
        "disturbance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"d_m": _vec, "d_u": _vec, "onset_time": {"type": "number", "minimum": 0}},
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["q0"],
            "properties": {"q0": _vec, "p0": _vec, "z0": _vec},
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "T": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "form": {"enum": ["plant", "direct"]},
                "theta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "n_samples": {"type": "integer", "minimum": 1},
                "epsilon": {"type": "number", "minimum": 0},
            },
        },
        "region": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"inflate": {"type": "number", "minimum": 0}, "lower": _vec, "upper": _vec},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}

PBIC_KEYS = ("Kp", "Ki", "Kd", "Md")
ESDI_KEYS = ("Kes", "Kdi")


def _as_matrix(name: str, value, n: int) -> np.ndarray:
    A = np.asarray(value, dtype=float)
    if A.ndim == 1:
        A = np.diag(A)
    if A.shape != (n, n):
        raise ConfigError(f"gain {name} must be {n} entries or {n}x{n}, got shape {A.shape}")
    return A


def _floats(values) -> list:
    return [float(v) for v in values]


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description.  Vectors are plain lists."""

    name: str
    model: str
    model_params: dict
    kind: str
    gains: dict
    q_star: list
    d_m: list
    d_u: list
    q0: list
    p0: list
    z0: list
    T: float = 20.0
    dt: float = 1e-3
    onset_time: float = 0.0
    form: str = "plant"
    theta: float = 0.5
    seed: int = 0
    n_samples: int = 10_000
    epsilon: Optional[float] = None
    region: dict = field(default_factory=lambda: {"inflate": 0.2})
    out_dir: Optional[str] = None
    preset: Optional[str] = None
    description: str = ""

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(raw, SCHEMA)
        except jsonschema.ValidationError as err:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {err.message}") from None
        ctl = raw["controller"]
        kind = ctl["kind"]
        q_star = _floats(ctl["q_star"])
        n = len(q_star)
        keys = PBIC_KEYS if kind == "pbic" else ESDI_KEYS
        gains = {}
        preset = ctl.get("preset")
        if preset is not None:
            entry = GAIN_PRESETS[preset]
            if entry["kind"] != kind:
                raise ConfigError(f"preset {preset} is a {entry['kind']} preset, controller kind is {kind}")
            gains.update({k: entry[k] for k in keys})
        gains.update(ctl.get("gains", {}))
        stray = set(gains) - set(keys)
        if stray:
            raise ConfigError(f"gains {sorted(stray)} do not apply to a {kind} controller")
        missing = set(keys) - set(gains)
        if missing:
            raise ConfigError(f"missing gains {sorted(missing)} (give them or name a preset)")
        gains = {k: _as_matrix(k, gains[k], n).tolist() for k in keys}

        dist = raw.get("disturbance", {})
        init = raw["initial"]
        run = raw.get("run", {})
        vecs = dict(
            q_star=q_star,
            d_m=_floats(dist.get("d_m", [0.0] * n)),
            d_u=_floats(dist.get("d_u", [0.0] * n)),
            q0=_floats(init["q0"]),
            p0=_floats(init.get("p0", [0.0] * n)),
            z0=_floats(init.get("z0", [0.0] * n)),
        )
        for k, v in vecs.items():
            if len(v) != n:
                raise ConfigError(f"{k} has {len(v)} entries, expected {n}")
        region = copy.deepcopy(raw.get("region", {"inflate": 0.2}))
        if ("lower" in region) != ("upper" in region):
            raise ConfigError("region needs both lower and upper, or neither")
        cfg = cls(
            name=raw.get("name", preset or "experiment"),
            description=raw.get("description", ""),
            model=raw["model"]["name"],
            model_params=copy.deepcopy(raw["model"].get("params", {})),
            kind=kind,
            gains=gains,
            preset=preset,
            onset_time=float(dist.get("onset_time", 0.0)),
            T=float(run.get("T", 20.0)),
            dt=float(run.get("dt", 1e-3)),
            form=run.get("form", "plant"),
            theta=float(run.get("theta", 0.5)),
            seed=int(run.get("seed", 0)),
            n_samples=int(run.get("n_samples", 10_000)),
            epsilon=None if run.get("epsilon") is None else float(run["epsilon"]),
            region=region,
            out_dir=raw.get("output", {}).get("dir"),
            **vecs,
        )
        cfg.check()
        return cfg

    def check(self) -> None:
        """Semantic checks the schema cannot express; raises ``ConfigError``."""
        try:
            model = self.build_model()
        except (TypeError, ValueError) as err:
            raise ConfigError(f"model {self.model}: {err}") from None
        if model.dof != len(self.q_star):
            raise ConfigError(f"model {self.model} has {model.dof} DoF, q_star has {len(self.q_star)}")
        try:
            self.build_gains()
        except ValueError as err:
            raise ConfigError(f"gains: {err}") from None
        if self.form == "direct" and self.kind != "pbic":
            raise ConfigError("the direct closed-loop form exists only for pbic")
        if self.form == "direct" and self.onset_time > 0 and any(self.d_m):
            raise ConfigError("the direct form needs the matched disturbance active from t=0")
        if self.T < self.dt:
            raise ConfigError("run.T must be at least one step")
        if "lower" in self.region:
            size = 3 * model.dof
            if len(self.region["lower"]) != size or len(self.region["upper"]) != size:
                raise ConfigError(f"region bounds must have {size} entries")
            if not np.all(np.asarray(self.region["lower"]) < np.asarray(self.region["upper"])):
                raise ConfigError("region lower bounds must be below upper bounds")

    def to_dict(self) -> dict:
        """Nested document that ``from_dict`` maps back to an equal config."""
        ctl = {"kind": self.kind, "q_star": list(self.q_star), "gains": copy.deepcopy(self.gains)}
        if self.preset is not None:
            ctl["preset"] = self.preset
        run = dict(T=self.T, dt=self.dt, form=self.form, theta=self.theta, seed=self.seed, n_samples=self.n_samples)
        if self.epsilon is not None:
            run["epsilon"] = self.epsilon
        out = {
            "name": self.name,
            "description": self.description,
            "model": {"name": self.model, "params": copy.deepcopy(self.model_params)},
            "controller": ctl,
            "disturbance": {"d_m": list(self.d_m), "d_u": list(self.d_u), "onset_time": self.onset_time},
            "initial": {"q0": list(self.q0), "p0": list(self.p0), "z0": list(self.z0)},
            "run": run,
            "region": copy.deepcopy(self.region),
        }
        if self.out_dir is not None:
            out["output"] = {"dir": self.out_dir}
        return out

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Copy with CLI-style overrides; ``None`` values are ignored."""
        changes = {k: v for k, v in changes.items() if v is not None}
        cfg = replace(self, **changes)
        cfg.check()
        return cfg

    # -- builders ----------------------------------------------------------

    def build_model(self):
        return build_model(self.model, **self.model_params)

    def build_gains(self):
        mats = {k: np.asarray(v, dtype=float) for k, v in self.gains.items()}
        if self.kind == "pbic":
            return ControllerGains(q_star=self.q_star, **mats)
        return BaselineGains(q_star=self.q_star, **mats)

    def disturbance(self) -> DisturbanceSpec:
        return DisturbanceSpec(self.d_m, self.d_u, self.onset_time)

    def initial_state(self) -> GeneralizedState:
        return GeneralizedState(self.q0, self.p0)

    def xbar0(self, gains: Optional[ControllerGains] = None) -> np.ndarray:
        """Initial augmented state, with the matched disturbance active at t=0."""
        gains = gains or self.build_gains()
        d_m = self.disturbance().at(0.0)[0]
        return to_augmented(self.initial_state(), np.asarray(self.z0), gains, d_m).vector()

    def operating_region(self, gains: Optional[ControllerGains] = None) -> OperatingRegion:
        gains = gains or self.build_gains()
        if "lower" in self.region:
            return OperatingRegion(np.asarray(self.region["lower"]), np.asarray(self.region["upper"]), "configured box")
        return sublevel_box(gains, self.xbar0(gains), inflate=self.region.get("inflate", 0.2))

    def scenario(self) -> dict:
        """Everything except the controller; compared runs must agree on it."""
        return dict(
            model=self.model, model_params=self.model_params, q_star=self.q_star,
            d_m=self.d_m, d_u=self.d_u, onset_time=self.onset_time,
            q0=self.q0, p0=self.p0, T=self.T, dt=self.dt,
        )


# -- loading ---------------------------------------------------------------


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("pbic.presets").iterdir() if p.name.endswith(".toml"))


def preset_text(name: str) -> str:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; choose from {preset_names()}")
    return resources.files("pbic.presets").joinpath(f"{name}.toml").read_text()


def parse_document(text: str, fmt: str) -> dict:
    try:
        if fmt == "toml":
            return tomllib.loads(text)
        raw = json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot parse {fmt} config: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table/object at top level")
    # A run manifest carries the config under "config".
    return raw["config"] if "config" in raw and "manifest" in raw else raw


def load_config(source: str) -> ExperimentConfig:
    """Load a config from a preset name, a ``.toml`` file or a ``.json`` file."""
    path = Path(source)
    if not path.exists() and source in preset_names():
        return ExperimentConfig.from_dict(parse_document(preset_text(source), "toml"))
    if not path.is_file():
        raise ConfigError(f"no config file or preset named {source!r}")
    fmt = "json" if path.suffix.lower() == ".json" else "toml"
    return ExperimentConfig.from_dict(parse_document(path.read_text(), fmt))
