"""Run configuration: one YAML tree with a ``schema_version`` key.

Sections: ``platoon``, ``controller``, ``collection``, ``scenario``, ``fuel``
and ``output``. Missing keys fall back to the bundled defaults; unknown keys
are rejected so typos do not pass silently.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import yaml

from .controller import ControllerParams
from .data import min_data_length
from .scenarios import FuelModel, VelocityProfile, brake_profile, eudc_like_profile
from .vehicle import OvmParams, PlatoonConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def default_tree() -> dict:
    text = resources.files("deeplcc").joinpath("default_config.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"'{where}' must be a mapping")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    tree: dict
    platoon: PlatoonConfig
    controller: ControllerParams
    cav_spacing: float
    v_star: float
    collection: dict
    scenario: dict
    fuel: FuelModel
    output: str

    def profile(self, name: str | None = None) -> VelocityProfile:
        name = name or self.scenario["profile"]
        if name == "eudc":
            return eudc_like_profile(**self.scenario["eudc"])
        if name == "brake":
            return brake_profile(**self.scenario["brake"])
        raise ConfigError(f"unknown profile '{name}' (expected eudc or brake)")

    def dump(self) -> str:
        return yaml.safe_dump(self.tree, sort_keys=False)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read, merge with defaults and validate. Raises ConfigError on any problem."""
    tree = default_tree()
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a mapping")
        tree = _merge(tree, user)
    if overrides:
        tree = _merge(tree, overrides)
    return build(tree)


def build(tree: dict) -> RunConfig:
    if tree.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {tree.get('schema_version')!r}")
    pl, col, sc = tree["platoon"], tree["collection"], tree["scenario"]
    try:
        nominal = OvmParams(**pl["ovm"])
        bounds = pl["hdv_accel_bounds"]
        platoon = PlatoonConfig.heterogeneous(
            int(pl["n"]), tuple(pl["cav_set"]), seed=pl["param_seed"], spread=float(pl["spread"]),
            nominal=nominal, dt_control=float(pl["dt_control"]), dt_sim=float(pl["dt_sim"]),
            noise_amplitude=float(pl["noise_amplitude"]),
            hdv_accel_bounds=None if bounds is None else tuple(bounds),
        )
        ctrl = ControllerParams.from_dict(tree["controller"])
        fuel = FuelModel(**tree["fuel"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if platoon.m == 0:
        raise ConfigError("platoon.cav_set must contain at least one CAV")
    v_star = float(col["v_star"])
    if not 0 < v_star < nominal.v_max:
        raise ConfigError(f"collection.v_star must lie in (0, {nominal.v_max})")
    T = int(col["T"])
    need = min_data_length(platoon.m, ctrl.Tini, ctrl.N, platoon.n)
    if T < need:
        raise ConfigError(f"collection.T={T} is below the persistent-excitation minimum "
                          f"(m+1)(Tini+N+2n)-1 = {need}")
    if float(col["excitation"]) <= 0:
        raise ConfigError("collection.excitation must be positive")
    if sc["profile"] not in ("eudc", "brake"):
        raise ConfigError(f"scenario.profile must be eudc or brake, got {sc['profile']!r}")
    if not sc["seeds"]:
        raise ConfigError("scenario.seeds must list at least one seed")
    cfg = RunConfig(tree, platoon, ctrl, float(pl["cav_spacing"]), v_star, col, sc, fuel,
                    str(tree["output"]["dir"]))
    for name in ("eudc", "brake"):
        try:
            p = cfg.profile(name)
        except TypeError as exc:
            raise ConfigError(f"scenario.{name}: {exc}") from exc
        if p.duration <= ctrl.Tini * platoon.dt_control:
            raise ConfigError(f"scenario.{name} is shorter than the controller warm-up")
    return cfg


def controller_keys() -> list[str]:
    return [f.name for f in fields(ControllerParams)]
