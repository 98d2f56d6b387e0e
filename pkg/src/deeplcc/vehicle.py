"""Nonlinear car-following simulation of a mixed platoon.

Vehicle 0 is the head vehicle and follows a prescribed velocity profile.
Vehicles ``1..n`` are either human-driven (OVM dynamics plus bounded
uniform noise) or automated (double integrators driven by the controller).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np


class CollisionError(RuntimeError):
    """Raised when a spacing drops to zero or below."""

    def __init__(self, time: float, vehicle: int, spacing: float):
        super().__init__(f"collision at t={time:.3f}s: vehicle {vehicle} spacing {spacing:.3f} m")
        self.time = time
        self.vehicle = vehicle
        self.spacing = spacing


@dataclass(frozen=True)
class OvmParams:
    alpha: float = 0.6
    beta: float = 0.9
    s_st: float = 5.0
    s_go: float = 35.0
    v_max: float = 30.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.v_max > 0):
            raise ValueError(f"OVM gains and v_max must be positive: {self}")
        if not (0 < self.s_st < self.s_go):
            raise ValueError(f"need 0 < s_st < s_go: {self}")


def desired_velocity(s, p: OvmParams):
    """Cosine-shaped optimal velocity V(s); vectorised over ``s``."""
    s = np.asarray(s, dtype=float)
    frac = np.clip((s - p.s_st) / (p.s_go - p.s_st), 0.0, 1.0)
    out = p.v_max * (1.0 - np.cos(np.pi * frac)) / 2.0
    return out if out.ndim else float(out)


def desired_velocity_slope(s: float, p: OvmParams) -> float:
    """dV/ds, zero outside the open band (s_st, s_go)."""
    if s <= p.s_st or s >= p.s_go:
        return 0.0
    width = p.s_go - p.s_st
    return p.v_max * math.pi / (2.0 * width) * math.sin(math.pi * (s - p.s_st) / width)


def ovm_acceleration(s, s_dot, v, p: OvmParams):
    return p.alpha * (desired_velocity(s, p) - v) + p.beta * s_dot


def equilibrium_spacing(v_star: float, p: OvmParams) -> float:
    """Spacing s* with V(s*) = v_star (closed-form inverse of the cosine branch).

    ``v_star = 0`` returns ``s_st``: every s <= s_st is an equilibrium there and
    s_st is the continuous limit.
    """
    if v_star < 0:
        raise ValueError(f"equilibrium velocity must be non-negative, got {v_star}")
    if v_star >= p.v_max:
        raise ValueError(f"no finite equilibrium spacing for v*={v_star} >= v_max={p.v_max}")
    return p.s_st + (p.s_go - p.s_st) / math.pi * math.acos(1.0 - 2.0 * v_star / p.v_max)


@dataclass(frozen=True)
class PlatoonConfig:
    n: int
    cav_set: tuple[int, ...]
    hdv_params: Mapping[int, OvmParams]
    dt_control: float = 0.05
    dt_sim: float = 0.01
    noise_amplitude: float = 0.1
    # optional physical saturation of HDV accelerations, (a_min, a_max)
    hdv_accel_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        cav = tuple(int(i) for i in self.cav_set)
        object.__setattr__(self, "cav_set", cav)
        if self.n < 1:
            raise ValueError("platoon needs at least one following vehicle")
        if list(cav) != sorted(set(cav)) or (cav and (cav[0] < 1 or cav[-1] > self.n)):
            raise ValueError(f"cav_set must be sorted, unique and within 1..{self.n}: {cav}")
        missing = [i for i in self.hdv_indices if i not in self.hdv_params]
        if missing:
            raise ValueError(f"missing OVM parameters for HDVs {missing}")
        if self.dt_sim <= 0 or self.dt_control <= 0:
            raise ValueError("time steps must be positive")
        ratio = self.dt_control / self.dt_sim
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"dt_sim={self.dt_sim} does not divide dt_control={self.dt_control}")
        if self.noise_amplitude < 0:
            raise ValueError("noise amplitude must be non-negative")

    @property
    def m(self) -> int:
        return len(self.cav_set)

    @property
    def hdv_indices(self) -> list[int]:
        return [i for i in range(1, self.n + 1) if i not in self.cav_set]

    @property
    def substeps(self) -> int:
        return int(round(self.dt_control / self.dt_sim))

    @property
    def is_cav(self) -> np.ndarray:
        """Boolean mask over vehicles 0..n."""
        mask = np.zeros(self.n + 1, dtype=bool)
        mask[list(self.cav_set)] = True
        return mask

    def with_noise(self, amplitude: float) -> "PlatoonConfig":
        return replace(self, noise_amplitude=amplitude)

    def all_hdv(self) -> "PlatoonConfig":
        """Same platoon with every CAV slot driven by its stored OVM parameters."""
        return replace(self, cav_set=())

    @classmethod
    def heterogeneous(
        cls,
        n: int,
        cav_set: Sequence[int],
        seed: int | None = 0,
        spread: float = 0.2,
        nominal: OvmParams = OvmParams(),
        **kwargs,
    ) -> "PlatoonConfig":
        """Scale alpha and beta of every vehicle by independent U[1-spread, 1+spread] draws.

        Parameters are drawn for the CAV slots too, so that :meth:`all_hdv`
        yields the matching human-driven baseline. ``seed=None`` or
        ``spread=0`` gives a homogeneous platoon.
        """
        rng = np.random.default_rng(seed)
        params = {}
        for i in range(1, n + 1):
            if spread > 0 and seed is not None:
                ka, kb = rng.uniform(1 - spread, 1 + spread, size=2)
            else:
                ka = kb = 1.0
            params[i] = replace(nominal, alpha=nominal.alpha * ka, beta=nominal.beta * kb)
        return cls(n=n, cav_set=tuple(cav_set), hdv_params=params, **kwargs)


@dataclass(frozen=True)
class SimState:
    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0

    @property
    def spacings(self) -> np.ndarray:
        """s_i = p_{i-1} - p_i for i = 1..n."""
        return self.positions[:-1] - self.positions[1:]


def equilibrium_state(cfg: PlatoonConfig, v_star: float, cav_spacing: float = 20.0) -> SimState:
    """All vehicles at v_star; HDVs at their OVM equilibrium spacing, CAVs at ``cav_spacing``."""
    pos = np.zeros(cfg.n + 1)
    for i in range(1, cfg.n + 1):
        s = cav_spacing if i in cfg.cav_set else equilibrium_spacing(v_star, cfg.hdv_params[i])
        pos[i] = pos[i - 1] - s
    return SimState(pos, np.full(cfg.n + 1, float(v_star)), 0.0)


class _HdvTable:
    """Per-HDV parameters as arrays for vectorised acceleration evaluation."""

    def __init__(self, cfg: PlatoonConfig):
        idx = cfg.hdv_indices
        self.idx = np.array(idx, dtype=int)
        ps = [cfg.hdv_params[i] for i in idx]
        self.alpha = np.array([p.alpha for p in ps])
        self.beta = np.array([p.beta for p in ps])
        self.s_st = np.array([p.s_st for p in ps])
        self.s_go = np.array([p.s_go for p in ps])
        self.v_max = np.array([p.v_max for p in ps])

    def accel(self, spacing, rel_vel, vel):
        frac = np.clip((spacing - self.s_st) / (self.s_go - self.s_st), 0.0, 1.0)
        v_des = self.v_max * (1.0 - np.cos(np.pi * frac)) / 2.0
        return self.alpha * (v_des - vel) + self.beta * rel_vel


def _table(cfg: PlatoonConfig) -> _HdvTable:
    tab = cfg.__dict__.get("_hdv_table")
    if tab is None:
        tab = _HdvTable(cfg)
        object.__setattr__(cfg, "_hdv_table", tab)
    return tab


def accelerations(
    state: SimState,
    cav_inputs,
    head_accel: float,
    cfg: PlatoonConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Acceleration of vehicles 0..n at ``state`` (noise drawn from ``rng``)."""
    cav_inputs = np.asarray(cav_inputs, dtype=float).reshape(-1)
    if cav_inputs.size != cfg.m:
        raise ValueError(f"expected {cfg.m} CAV inputs, got {cav_inputs.size}")
    tab = _table(cfg)
    acc = np.empty(cfg.n + 1)
    acc[0] = head_accel
    acc[list(cfg.cav_set)] = cav_inputs
    if tab.idx.size:
        i = tab.idx
        spacing = state.positions[i - 1] - state.positions[i]
        rel_vel = state.velocities[i - 1] - state.velocities[i]
        a = tab.accel(spacing, rel_vel, state.velocities[i])
        if cfg.noise_amplitude > 0:
            if rng is None:
                raise ValueError("noise enabled but no random generator given")
            a = a + rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude, size=a.size)
        if cfg.hdv_accel_bounds is not None:
            a = np.clip(a, *cfg.hdv_accel_bounds)
        acc[i] = a
    return acc


def _advance(state: SimState, acc: np.ndarray, dt: float) -> SimState:
    # semi-implicit Euler: velocity first, then position with the new velocity
    vel = np.maximum(state.velocities + acc * dt, 0.0)
    pos = state.positions + vel * dt
    return SimState(pos, vel, state.time + dt)


def _check_collision(state: SimState) -> None:
    s = state.spacings
    bad = np.flatnonzero(s <= 0)
    if bad.size:
        i = int(bad[0])
        raise CollisionError(state.time, i + 1, float(s[i]))


def step(
    state: SimState,
    cav_inputs,
    head_accel: float,
    cfg: PlatoonConfig,
    rng: np.random.Generator | None = None,
) -> SimState:
    """Advance one ``dt_sim`` substep.

    Raises:
        CollisionError: if any spacing is non-positive after the update.
    """
    acc = accelerations(state, cav_inputs, head_accel, cfg, rng)
    new = _advance(state, acc, cfg.dt_sim)
    _check_collision(new)
    return new


class Controller(Protocol):
    """Control policy called once per control interval.

    Receives the control-step index and the measured state; returns the m
    CAV accelerations to hold over the next interval.
    """

    def __call__(self, k: int, state: SimState) -> np.ndarray: ...


@dataclass
class TrajectoryLog:
    """Per-control-step record of a closed-loop run.

    ``accelerations[k]`` is the acceleration applied during the first substep
    after ``times[k]``; ``inputs[k]`` is the CAV command held over step k.
    """

    cfg: PlatoonConfig
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    inputs: np.ndarray
    collision: CollisionError | None = None
    failure: str | None = None
    step_info: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.collision is None and self.failure is None

    @property
    def spacings(self) -> np.ndarray:
        """(K, n) spacings of vehicles 1..n."""
        return self.positions[:, :-1] - self.positions[:, 1:]

    def __len__(self) -> int:
        return self.times.size

    def to_csv(self) -> str:
        cfg = self.cfg
        is_cav = cfg.is_cav
        cav_col = {v: j for j, v in enumerate(cfg.cav_set)}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "vehicle_id", "position_m", "velocity_mps", "spacing_m",
                    "accel_mps2", "is_cav", "applied_input_mps2"])
        sp = self.spacings
        for k, t in enumerate(self.times):
            for i in range(cfg.n + 1):
                spacing = repr(float(sp[k, i - 1])) if i > 0 else ""
                applied = repr(float(self.inputs[k, cav_col[i]])) if is_cav[i] else ""
                w.writerow([repr(float(t)), i, repr(float(self.positions[k, i])),
                            repr(float(self.velocities[k, i])), spacing,
                            repr(float(self.accelerations[k, i])), int(is_cav[i]), applied])
        return buf.getvalue()


def _zero_controller(k: int, state: SimState) -> np.ndarray:
    return None


def simulate_closed_loop(
    cfg: PlatoonConfig,
    controller: Controller | None,
    head_velocity: Callable[[float], float],
    duration: float,
    seed: int | None = 0,
    initial_state: SimState | None = None,
    cav_spacing: float = 20.0,
) -> TrajectoryLog:
    """Run the platoon for ``duration`` seconds under ``controller``.

    ``controller=None`` gives every CAV zero acceleration; for an all-HDV
    baseline build the config with HDV parameters at the CAV slots instead.
    The head vehicle tracks ``head_velocity`` exactly at the substep grid.
    A collision or controller failure ends the run with a partial log.
    """
    steps = int(round(duration / cfg.dt_control))
    rng = np.random.default_rng(seed)
    state = initial_state or equilibrium_state(cfg, head_velocity(0.0), cav_spacing)
    _check_collision(state)
    n1 = cfg.n + 1
    times = np.empty(steps)
    pos = np.empty((steps, n1))
    vel = np.empty((steps, n1))
    acc = np.empty((steps, n1))
    inputs = np.zeros((steps, cfg.m))
    log = TrajectoryLog(cfg, times, pos, vel, acc, inputs)
    ctrl = controller or _zero_controller
    dt = cfg.dt_sim
    zero = np.zeros(cfg.m)
    k = 0
    try:
        for k in range(steps):
            times[k] = state.time
            pos[k] = state.positions
            vel[k] = state.velocities
            u = ctrl(k, state)
            u = zero if u is None else np.asarray(u, dtype=float).reshape(cfg.m)
            inputs[k] = u
            info = getattr(controller, "last_info", None)
            if info is not None:
                log.step_info.append(dict(info, t=float(state.time)))
            for j in range(cfg.substeps):
                t_next = state.time + dt
                head_acc = (head_velocity(t_next) - state.velocities[0]) / dt
                a = accelerations(state, u, head_acc, cfg, rng)
                if j == 0:
                    acc[k] = a
                state = _advance(state, a, dt)
                _check_collision(state)
    except CollisionError as exc:
        log.collision = exc
        _truncate(log, k + 1)
    except ControllerFailure as exc:
        log.failure = f"t={state.time:.3f}s: {exc}"
        _truncate(log, k)
    return log


class ControllerFailure(RuntimeError):
    """A controller could not produce an input (e.g. infeasible optimisation)."""


def _truncate(log: TrajectoryLog, k: int) -> None:
    log.times = log.times[:k]
    log.positions = log.positions[:k]
    log.velocities = log.velocities[:k]
    log.accelerations = log.accelerations[:k]
    log.inputs = log.inputs[:k]
