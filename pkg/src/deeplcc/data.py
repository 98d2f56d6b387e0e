"""Offline trajectory data, Hankel matrices and past/future partitioning."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .vehicle import PlatoonConfig, simulate_closed_loop


class CollectionError(RuntimeError):
    def __init__(self, message: str, seed: int | None):
        super().__init__(message)
        self.seed = seed


def hankel(sequence, order: int) -> np.ndarray:
    """Block Hankel matrix of a (q, T) signal with ``order`` block rows.

    Entry ``[r*q + i, c]`` equals ``sequence[i, r + c]``. A 1-D input is
    treated as a single channel.
    """
    seq = np.atleast_2d(np.asarray(sequence, dtype=float))
    q, T = seq.shape
    if order < 1 or order > T:
        raise ValueError(f"Hankel order {order} must lie in 1..{T}")
    win = sliding_window_view(seq, order, axis=1)  # (q, cols, order)
    return np.ascontiguousarray(win.transpose(2, 0, 1).reshape(order * q, T - order + 1))


@dataclass(frozen=True)
class ExcitationCheck:
    verdict: bool
    rank: int
    sigma_min: float
    reason: str = ""

    def __bool__(self) -> bool:
        return self.verdict


def is_persistently_exciting(sequence, order: int, rel_tol: float = 1e-10) -> ExcitationCheck:
    """Full-row-rank test of the order-``order`` Hankel matrix."""
    seq = np.atleast_2d(np.asarray(sequence, dtype=float))
    q, T = seq.shape
    rows = q * order
    if order > T or T - order + 1 < rows:
        return ExcitationCheck(False, 0 if order > T else -1, 0.0, "insufficient length")
    sv = np.linalg.svd(hankel(seq, order), compute_uv=False)
    tol = max(rows, T - order + 1) * sv[0] * rel_tol if sv[0] > 0 else 0.0
    rank = int(np.sum(sv > tol)) if sv[0] > 0 else 0
    return ExcitationCheck(rank == rows, rank, float(sv[-1]), "" if rank == rows else "rank deficient")


def min_data_length(m: int, Tini: int, N: int, n: int) -> int:
    """Shortest trajectory for which the combined input can be exciting enough."""
    return (m + 1) * (Tini + N + 2 * n) - 1


@dataclass
class TrajectoryDataset:
    u_d: np.ndarray    # (m, T)
    eps_d: np.ndarray  # (1, T)
    y_d: np.ndarray    # (n+m, T)
    dt: float
    n: int
    cav_set: tuple[int, ...]
    v_star: float
    s_star: float
    seed: int | None = None

    def __post_init__(self):
        self.u_d = np.atleast_2d(np.asarray(self.u_d, dtype=float))
        self.eps_d = np.atleast_2d(np.asarray(self.eps_d, dtype=float))
        self.y_d = np.atleast_2d(np.asarray(self.y_d, dtype=float))
        self.cav_set = tuple(self.cav_set)
        T = self.u_d.shape[1]
        if self.eps_d.shape != (1, T) or self.y_d.shape[1] != T:
            raise ValueError("u_d, eps_d and y_d must share their length")
        if self.u_d.shape[0] != self.m or self.y_d.shape[0] != self.n + self.m:
            raise ValueError("dataset channel counts do not match (n, m)")

    @property
    def m(self) -> int:
        return len(self.cav_set)

    @property
    def T(self) -> int:
        return self.u_d.shape[1]

    @property
    def u_hat(self) -> np.ndarray:
        """Combined input (eps, u) as an (m+1, T) array."""
        return np.vstack([self.eps_d, self.u_d])

    def metadata(self) -> dict:
        return {"n": self.n, "m": self.m, "cav_set": list(self.cav_set), "dt": self.dt,
                "T": self.T, "v_star": self.v_star, "s_star": self.s_star, "seed": self.seed}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k"] + [f"u_{j + 1}" for j in range(self.m)] + ["eps"]
                   + [f"y_{j + 1}" for j in range(self.n + self.m)])
        for k in range(self.T):
            w.writerow([k] + [repr(float(x)) for x in self.u_d[:, k]] + [repr(float(self.eps_d[0, k]))]
                       + [repr(float(x)) for x in self.y_d[:, k]])
        return buf.getvalue()

    @classmethod
    def from_files(cls, csv_path, meta_path) -> "TrajectoryDataset":
        meta = json.loads(Path(meta_path).read_text())
        arr = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        m, n = meta["m"], meta["n"]
        if arr.shape[1] != 2 + m + n + m:
            raise ValueError(f"{csv_path}: expected {2 + 2 * m + n} columns, got {arr.shape[1]}")
        return cls(u_d=arr[:, 1:1 + m].T, eps_d=arr[:, 1 + m][None, :], y_d=arr[:, 2 + m:].T,
                   dt=meta["dt"], n=n, cav_set=tuple(meta["cav_set"]), v_star=meta["v_star"],
                   s_star=meta["s_star"], seed=meta.get("seed"))


def head_random_walk(T: int, amplitude: float, rate: float, dt: float, rng) -> np.ndarray:
    """Clipped random walk for the head velocity error.

    Increments are U[-1, 1] * rate * dt, so head accelerations stay within
    ``rate``; the walk is clipped to [-amplitude, amplitude].
    """
    eps = np.zeros(T)
    if amplitude == 0:
        return eps
    steps = rng.uniform(-1.0, 1.0, T - 1) * rate * dt
    for k in range(1, T):
        eps[k] = min(max(eps[k - 1] + steps[k - 1], -amplitude), amplitude)
    return eps


@dataclass(frozen=True)
class CollectionFeedback:
    """Linear car-following law applied by the CAVs while data are recorded.

    Keeps the double-integrator CAVs near their designed spacing; the random
    excitation is added on top and the recorded input is the total command.
    """

    k_s: float = 0.3 * np.pi
    k_v: float = 1.5
    k_dv: float = 0.9

    def __call__(self, spacing_err, vel_err, pred_vel_err):
        return self.k_s * spacing_err - self.k_v * vel_err + self.k_dv * pred_vel_err


def measure_outputs(velocities, spacings, cav_set, v_star: float, s_star_cav: float):
    """Output vector (velocity errors of vehicles 1..n, then CAV spacing errors)."""
    cav = np.asarray(cav_set, dtype=int)
    return np.concatenate([velocities[1:] - v_star, spacings[cav - 1] - s_star_cav])


def collect_dataset(
    cfg: PlatoonConfig,
    v_star: float,
    T: int,
    excitation: float = 1.0,
    seed: int | None = 0,
    cav_spacing: float = 20.0,
    head_rate: float = 5.0,
    feedback: CollectionFeedback | None = CollectionFeedback(),
    noise: bool = True,
) -> TrajectoryDataset:
    """Record (u^d, eps^d, y^d) from the nonlinear platoon around (s*, v*).

    Sample k is taken at t_k; ``u_d[:, k]`` is the CAV command held over
    [t_k, t_k+1). The same ``seed`` drives the excitation and the HDV noise.

    Raises:
        CollectionError: if the platoon collides; carries the seed.
    """
    rng = np.random.default_rng(seed)
    dt = cfg.dt_control
    dither = rng.uniform(-excitation, excitation, (T, cfg.m))
    eps = head_random_walk(T, excitation, head_rate, dt, rng)
    grid = np.arange(T) * dt
    cav = list(cfg.cav_set)
    applied = np.zeros((T, cfg.m))

    def head(t):
        return v_star + float(np.interp(t, grid, eps))

    def policy(k, state):
        u = dither[k].copy()
        if feedback is not None:
            s = state.spacings
            v = state.velocities
            for j, i in enumerate(cav):
                u[j] += feedback(s[i - 1] - cav_spacing, v[i] - v_star, v[i - 1] - v_star)
        applied[k] = u
        return u

    run_cfg = cfg if noise else cfg.with_noise(0.0)
    log = simulate_closed_loop(run_cfg, policy, head, T * dt, seed=int(rng.integers(2**31)),
                               cav_spacing=cav_spacing)
    if log.collision is not None:
        raise CollectionError(f"data collection with seed {seed} aborted: {log.collision}", seed) \
            from log.collision
    sp = log.spacings
    y = np.array([measure_outputs(log.velocities[k], sp[k], cav, v_star, cav_spacing) for k in range(T)])
    return TrajectoryDataset(
        u_d=applied.T, eps_d=(log.velocities[:, 0] - v_star)[None, :], y_d=y.T, dt=dt,
        n=cfg.n, cav_set=cfg.cav_set, v_star=v_star, s_star=cav_spacing, seed=seed,
    )


@dataclass(frozen=True)
class HankelBlocks:
    Up: np.ndarray
    Uf: np.ndarray
    Ep: np.ndarray
    Ef: np.ndarray
    Yp: np.ndarray
    Yf: np.ndarray
    Tini: int
    N: int
    n: int
    m: int

    @property
    def L(self) -> int:
        return self.Up.shape[1]

    @property
    def p(self) -> int:
        return self.n + self.m


def partition(ds: TrajectoryDataset, Tini: int, N: int) -> HankelBlocks:
    """Split order-(Tini+N) Hankel matrices into past (Tini) and future (N) block rows."""
    if Tini < 1 or N < 1:
        raise ValueError("Tini and N must be positive")
    if ds.T < Tini + N:
        raise ValueError(f"dataset length {ds.T} is shorter than Tini + N = {Tini + N}")
    L = Tini + N
    Hu, He, Hy = hankel(ds.u_d, L), hankel(ds.eps_d, L), hankel(ds.y_d, L)
    m, p = ds.m, ds.n + ds.m
    return HankelBlocks(
        Up=Hu[:m * Tini], Uf=Hu[m * Tini:], Ep=He[:Tini], Ef=He[Tini:],
        Yp=Hy[:p * Tini], Yf=Hy[p * Tini:], Tini=Tini, N=N, n=ds.n, m=m,
    )
