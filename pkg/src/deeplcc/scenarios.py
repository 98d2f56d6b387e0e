"""Head-vehicle velocity profiles, the fuel model and controller comparisons."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .controller import ControllerParams, DeepLccController
from .data import HankelBlocks
from .linear_model import discretize, model_from_config
from .mpc import MpcController, MpcParams
from .vehicle import PlatoonConfig, TrajectoryLog, simulate_closed_loop

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Segment:
    kind: str  # "hold" or "ramp"
    t0: float
    t1: float
    v0: float
    v1: float


@dataclass
class VelocityProfile:
    """Piecewise-linear head velocity built from holds and constant-rate ramps."""

    v_start: float
    segments: list[Segment] = field(default_factory=list)
    phases: list[tuple[str, float, float]] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return self.segments[-1].t1 if self.segments else 0.0

    @property
    def v_end(self) -> float:
        return self.segments[-1].v1 if self.segments else self.v_start

    def hold(self, duration: float) -> "VelocityProfile":
        if duration < 0:
            raise ValueError("hold duration must be non-negative")
        t0, v = self.duration, self.v_end
        self.segments.append(Segment("hold", t0, t0 + duration, v, v))
        return self

    def ramp(self, target: float, rate: float) -> "VelocityProfile":
        """Change velocity to ``target`` at ``|rate|`` m/s^2."""
        if rate == 0:
            raise ValueError("ramp rate must be non-zero")
        t0, v = self.duration, self.v_end
        self.segments.append(Segment("ramp", t0, t0 + abs(target - v) / abs(rate), v, target))
        return self

    def mark(self, name: str, start: float) -> "VelocityProfile":
        """Open a named phase at ``start``; it runs until the next mark or the end."""
        self.phases.append((name, start, np.nan))
        return self

    def phase_windows(self) -> list[tuple[str, float, float]]:
        out = []
        for i, (name, a, _) in enumerate(self.phases):
            b = self.phases[i + 1][1] if i + 1 < len(self.phases) else self.duration
            out.append((name, a, b))
        return out

    def knots(self) -> tuple[np.ndarray, np.ndarray]:
        t = [0.0] + [s.t1 for s in self.segments]
        v = [self.v_start] + [s.v1 for s in self.segments]
        return np.array(t), np.array(v)

    def __call__(self, t):
        tk, vk = self.knots()
        out = np.interp(t, tk, vk)
        return float(out) if np.ndim(out) == 0 else out

    def acceleration(self, t: float) -> float:
        for s in self.segments:
            if s.t0 <= t < s.t1:
                return (s.v1 - s.v0) / (s.t1 - s.t0) if s.t1 > s.t0 else 0.0
        return 0.0


def brake_profile(v0: float = 15.0, v_low: float = 5.0, decel: float = 5.0, accel: float = 2.0,
                  lead_in: float = 4.0, dwell: float = 2.0, tail: float = 12.0) -> VelocityProfile:
    """Emergency brake to ``v_low`` then recovery to ``v0``."""
    p = VelocityProfile(v0).hold(lead_in).ramp(v_low, decel).hold(dwell).ramp(v0, accel).hold(tail)
    return p.mark("brake", 0.0)


def eudc_like_profile(v0: float = 15.0, v_low: float = 8.0, v_high: float = 25.0,
                      decel: float = 1.0, accel: float = 0.5, hold: float = 15.0) -> VelocityProfile:
    """Urban-extra-urban style cycle in four phases.

    1 braking ``v0 -> v_low``, 2 accelerating back to ``v0``, 3 accelerating
    to ``v_high``, 4 braking back to ``v0``. Each phase is its speed change
    followed by a steady hold, and phase 1 starts with a short lead-in.
    """
    p = VelocityProfile(v0)
    p.mark("1", 0.0).hold(5.0).ramp(v_low, decel).hold(hold)
    p.mark("2", p.duration).ramp(v0, accel).hold(hold)
    p.mark("3", p.duration).ramp(v_high, accel).hold(hold)
    p.mark("4", p.duration).ramp(v0, decel).hold(hold)
    return p


PHASE_KIND = {"1": "braking", "2": "accelerating", "3": "accelerating", "4": "braking"}


@dataclass(frozen=True)
class FuelModel:
    """Instantaneous fuel model coefficients (mL/s, SI units)."""

    idle: float = 0.444
    b1: float = 0.090
    b2: float = 0.054
    c0: float = 0.333
    c_drag: float = 0.00108
    mass: float = 1.200


def fuel_rate(v, a, model: FuelModel = FuelModel()):
    """Instantaneous fuel consumption in mL/s; idle rate whenever the tractive demand is non-positive."""
    f = model
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    R = f.c0 + f.c_drag * v ** 2 + f.mass * a
    burn = f.idle + f.b1 * R * v + np.where(a > 0, f.b2 * a ** 2 * v, 0.0)
    out = np.where(R > 0, burn, f.idle)
    return float(out) if out.ndim == 0 else out


def _integrate(times, rates, t0: float, t1: float) -> float:
    # trapezoid over samples inside [t0, t1]; boundaries on the grid keep it additive
    eps = 1e-9
    sel = (times >= t0 - eps) & (times <= t1 + eps)
    return float(np.trapezoid(rates[sel], times[sel], axis=0).sum()) if sel.sum() > 1 else 0.0


def total_fuel(log_: TrajectoryLog, vehicles=range(3, 9), t0: float = 0.0, t1: float | None = None,
               model: FuelModel = FuelModel()) -> float:
    """Fuel (mL) of ``vehicles`` over [t0, t1] from the logged velocities and accelerations."""
    idx = [i for i in vehicles if i < log_.velocities.shape[1]]
    rates = fuel_rate(log_.velocities[:, idx], log_.accelerations[:, idx], model)
    return _integrate(log_.times, rates, t0, log_.times[-1] if t1 is None else t1)


@dataclass
class RunSummary:
    controller: str
    seed: int
    ok: bool
    fuel: dict
    failure: str | None
    solver_failures: int
    min_spacing_err: float
    max_spacing_err: float
    max_velocity: float


@dataclass
class FuelReport:
    phases: list[str]
    runs: list[RunSummary]

    def mean_fuel(self, controller: str) -> dict:
        rs = [r for r in self.runs if r.controller == controller and r.ok]
        if not rs:
            return {}
        return {k: float(np.mean([r.fuel[k] for r in rs])) for k in rs[0].fuel}

    def reductions(self, controller: str, baseline: str = "hdv") -> dict:
        """Percent fuel saved relative to ``baseline`` per phase and in total."""
        a, b = self.mean_fuel(controller), self.mean_fuel(baseline)
        return {k: 100.0 * (b[k] - a[k]) / b[k] for k in a if k in b and b[k] > 0}

    def controllers(self) -> list[str]:
        return list(dict.fromkeys(r.controller for r in self.runs))

    def to_dict(self) -> dict:
        ctrls = self.controllers()
        return {
            "phases": self.phases,
            "mean_fuel_ml": {c: self.mean_fuel(c) for c in ctrls},
            "reduction_pct": {c: self.reductions(c) for c in ctrls if c != "hdv"},
            "runs": [vars(r) for r in self.runs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float)

    def table(self) -> str:
        cols = self.phases + ["total"]
        lines = ["controller".ljust(12) + "".join(c.rjust(12) for c in cols)]
        for c in self.controllers():
            f = self.mean_fuel(c)
            lines.append(c.ljust(12) + "".join(f"{f.get(k, np.nan):12.2f}" for k in cols))
            if c != "hdv":
                red = self.reductions(c)
                lines.append("  saved %".ljust(12) + "".join(f"{red.get(k, np.nan):12.2f}" for k in cols))
        return "\n".join(lines)


def summarize(name: str, seed: int, log_: TrajectoryLog, profile: VelocityProfile, cfg: PlatoonConfig,
              cav_spacing: float, solver_failures: int = 0, fuel_model: FuelModel = FuelModel()) -> RunSummary:
    windows = profile.phase_windows()
    fuel = {ph: total_fuel(log_, t0=a, t1=b, model=fuel_model) for ph, a, b in windows}
    fuel["total"] = total_fuel(log_, model=fuel_model)
    cav = list(cfg.cav_set)
    sp = log_.spacings[:, [i - 1 for i in cav]] - cav_spacing if cav else np.zeros((1, 1))
    failure = None if log_.ok else str(log_.collision or log_.failure)
    return RunSummary(name, seed, log_.ok, fuel, failure, solver_failures,
                      float(sp.min()), float(sp.max()), float(log_.velocities[:, 3:].max()))


def run_comparison(
    cfg: PlatoonConfig,
    blocks: HankelBlocks,
    params: ControllerParams,
    profile: VelocityProfile,
    seeds=(0,),
    controllers=("hdv", "mpc", "deeplcc"),
    cav_spacing: float = 20.0,
    model_v_star: float = 15.0,
    keep_logs: bool = False,
    fuel_model: FuelModel = FuelModel(),
):
    """Run each controller on the same profile and HDV noise seeds.

    The MPC model is linearised at ``model_v_star`` with the true HDV
    parameters. Returns the report and, with ``keep_logs``, a dict
    ``{(controller, seed): log}``.
    """
    runs, logs = [], {}
    dm = None
    if "mpc" in controllers:
        dm = discretize(model_from_config(cfg, model_v_star, cav_spacing), cfg.dt_control)
    for seed in seeds:
        for name in controllers:
            if name == "hdv":
                run_cfg, ctrl = cfg.all_hdv(), None
            elif name == "mpc":
                run_cfg, ctrl = cfg, MpcController(cfg, dm, MpcParams.from_controller(params), cav_spacing)
            elif name == "deeplcc":
                run_cfg, ctrl = cfg, DeepLccController(cfg, blocks, params, cav_spacing)
            else:
                raise ValueError(f"unknown controller {name!r}")
            lg = simulate_closed_loop(run_cfg, ctrl, profile, profile.duration, seed=seed, cav_spacing=cav_spacing)
            summary = summarize(name, seed, lg, profile, cfg, cav_spacing, getattr(ctrl, "failures", 0), fuel_model)
            if not summary.ok:
                log.warning("%s seed %d failed: %s", name, seed, summary.failure)
            runs.append(summary)
            if keep_logs:
                logs[(name, seed)] = lg
    report = FuelReport([ph for ph, _, _ in profile.phase_windows()], runs)
    return (report, logs) if keep_logs else report
