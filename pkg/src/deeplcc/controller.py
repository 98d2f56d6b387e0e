"""DeeP-LCC: data-driven predictive control of the CAVs in a mixed platoon.

The optimisation is condensed onto the Hankel coefficient vector ``g``:
``u = Uf g``, ``y = Yf g`` and the past-output slack ``sigma_y = Yp g - y_ini``
are eliminated, leaving a QP whose Hessian depends only on the data. The
future head velocity error is fixed to zero (``Ef g = 0``).
"""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .data import HankelBlocks, measure_outputs
from .qp import OPTIMAL, QpResult, QpSolver
from .vehicle import PlatoonConfig, SimState, TrajectoryLog, simulate_closed_loop

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControllerParams:
    Tini: int = 20
    N: int = 50
    wv: float = 1.0
    ws: float = 0.5
    wu: float = 0.1
    lambda_g: float = 100.0
    lambda_y: float = 1e4
    s_tilde_min: float = -15.0
    s_tilde_max: float = 20.0
    a_min: float = -5.0
    a_max: float = 2.0
    qp_tol: float = 1e-6
    qp_max_iter: int = 500
    # False enforces Yp g = y_ini exactly instead of penalising a slack
    slack: bool = True

    def __post_init__(self):
        if self.Tini < 1 or self.N < 1:
            raise ValueError("horizons must be positive")
        if self.slack and not self.lambda_y > 0:
            raise ValueError("lambda_y must be positive when the slack is used")
        if self.lambda_g < 0:
            raise ValueError("lambda_g must be non-negative")
        if not self.s_tilde_min < self.s_tilde_max:
            raise ValueError("need s_tilde_min < s_tilde_max")
        if not self.a_min < self.a_max:
            raise ValueError("need a_min < a_max")
        if min(self.wv, self.ws) < 0 or self.wu <= 0:
            raise ValueError("weights must be non-negative and wu positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown controller keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OnlineWindow:
    u_ini: np.ndarray    # (m, Tini)
    eps_ini: np.ndarray  # (1, Tini)
    y_ini: np.ndarray    # (n+m, Tini)

    def __post_init__(self):
        self.u_ini = np.atleast_2d(np.asarray(self.u_ini, dtype=float))
        self.eps_ini = np.atleast_2d(np.asarray(self.eps_ini, dtype=float))
        self.y_ini = np.atleast_2d(np.asarray(self.y_ini, dtype=float))
        T = self.u_ini.shape[1]
        if self.eps_ini.shape[1] != T or self.y_ini.shape[1] != T:
            raise ValueError("window signals must share their length")

    @property
    def Tini(self) -> int:
        return self.u_ini.shape[1]

    @staticmethod
    def zeros(m: int, p: int, Tini: int) -> "OnlineWindow":
        return OnlineWindow(np.zeros((m, Tini)), np.zeros((1, Tini)), np.zeros((p, Tini)))

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Time-major stacking col(w(t-Tini), ..., w(t-1)) of each signal."""
        return self.u_ini.T.reshape(-1), self.eps_ini.T.reshape(-1), self.y_ini.T.reshape(-1)


def estimate_equilibrium_velocity(head_velocity_history, Tini: int | None = None) -> float:
    """Mean head velocity over the past window."""
    hist = np.asarray(head_velocity_history, dtype=float).reshape(-1)
    if Tini is not None:
        if hist.size < Tini:
            raise ValueError(f"need {Tini} head velocity samples, have {hist.size}")
        hist = hist[-Tini:]
    if hist.size == 0:
        raise ValueError("empty head velocity history")
    return float(hist.mean())


@dataclass
class CondensedQp:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    const: float
    meta: dict = field(default_factory=dict)


@dataclass
class QpSolution:
    g: np.ndarray
    u_star: np.ndarray   # (m, N)
    y_star: np.ndarray   # (n+m, N)
    sigma_y: np.ndarray  # ((n+m)*Tini,)
    objective: float
    kkt_residuals: dict
    iterations: int
    status: str

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def metadata(self) -> dict:
        return {"status": self.status, "iterations": self.iterations, "objective": self.objective,
                "norm_g": float(np.linalg.norm(self.g)),
                "norm_sigma_y": float(np.linalg.norm(self.sigma_y))}


def spacing_selector(n: int, m: int, N: int) -> np.ndarray:
    """Rows of the stacked future output that hold CAV spacing errors."""
    p = n + m
    return np.array([k * p + n + j for k in range(N) for j in range(m)], dtype=int)


class DeepLcc:
    """DeeP-LCC optimiser bound to one set of Hankel blocks and parameters.

    The Hessian, the constraint matrices and the solver factorisation are
    built once; each :meth:`solve` only changes the window-dependent terms.
    """

    def __init__(self, blocks: HankelBlocks, params: ControllerParams):
        if blocks.Tini != params.Tini or blocks.N != params.N:
            raise ValueError(f"blocks built for (Tini, N)=({blocks.Tini}, {blocks.N}), "
                             f"params ask for ({params.Tini}, {params.N})")
        if params.Tini < 2 * blocks.n:
            warnings.warn(f"Tini={params.Tini} < 2n={2 * blocks.n}: predicted outputs may not be unique")
        self.blocks = blocks
        self.params = params
        b, pr = blocks, params
        n, m, N = b.n, b.m, b.N
        p = n + m
        qdiag = np.tile(np.concatenate([np.full(n, pr.wv), np.full(m, pr.ws)]), N)
        H = (b.Yf.T * qdiag) @ b.Yf + pr.wu * (b.Uf.T @ b.Uf) + pr.lambda_g * np.eye(b.L)
        if pr.slack:
            H += pr.lambda_y * (b.Yp.T @ b.Yp)
            A = np.vstack([b.Up, b.Ep, b.Ef])
        else:
            A = np.vstack([b.Up, b.Ep, b.Yp, b.Ef])
        sel = spacing_selector(n, m, N)
        Ys = b.Yf[sel]
        G = np.vstack([b.Uf, -b.Uf, Ys, -Ys])
        self._h = np.concatenate([
            np.full(m * N, pr.a_max), np.full(m * N, -pr.a_min),
            np.full(m * N, pr.s_tilde_max), np.full(m * N, -pr.s_tilde_min),
        ])
        self.P = 2.0 * H
        self.A = A
        self.G = G
        self.solver = QpSolver(self.P, A, G, tol=pr.qp_tol, max_iter=pr.qp_max_iter)
        self.meta = {"L": b.L, "n_eq": A.shape[0], "n_ineq": G.shape[0], "p": p}

    def _rhs(self, window: OnlineWindow):
        b, pr = self.blocks, self.params
        u_ini, e_ini, y_ini = window.stacked()
        if u_ini.size != b.Up.shape[0] or e_ini.size != b.Ep.shape[0] or y_ini.size != b.Yp.shape[0]:
            raise ValueError("window dimensions do not match the Hankel blocks")
        zeros_f = np.zeros(b.N)
        if pr.slack:
            q = -2.0 * pr.lambda_y * (b.Yp.T @ y_ini)
            rhs = np.concatenate([u_ini, e_ini, zeros_f])
            const = pr.lambda_y * float(y_ini @ y_ini)
        else:
            q = np.zeros(b.L)
            rhs = np.concatenate([u_ini, e_ini, y_ini, zeros_f])
            const = 0.0
        return q, rhs, const, y_ini

    def condensed(self, window: OnlineWindow) -> CondensedQp:
        q, rhs, const, _ = self._rhs(window)
        return CondensedQp(self.P, q, self.A, rhs, self.G, self._h.copy(), const, dict(self.meta))

    def solve(self, window: OnlineWindow) -> QpSolution:
        q, rhs, const, y_ini = self._rhs(window)
        res = self.solver.solve(q, rhs, self._h)
        return self._solution(res, const, y_ini)

    def _solution(self, res: QpResult, const: float, y_ini: np.ndarray) -> QpSolution:
        b = self.blocks
        g = res.x
        u = (b.Uf @ g).reshape(b.N, b.m).T
        y = (b.Yf @ g).reshape(b.N, b.p).T
        sigma = b.Yp @ g - y_ini
        kkt = {"primal": res.kkt.primal, "dual": res.kkt.dual, "gap": res.kkt.gap}
        return QpSolution(g, u, y, sigma, res.objective + const, kkt, res.iterations, res.status)

    def step(self, window: OnlineWindow) -> tuple[np.ndarray, QpSolution]:
        sol = self.solve(window)
        applied = np.clip(sol.u_star[:, 0], self.params.a_min, self.params.a_max)
        return applied, sol


def build_condensed_qp(blocks: HankelBlocks, params: ControllerParams, window: OnlineWindow) -> CondensedQp:
    return DeepLcc(blocks, params).condensed(window)


def solve_condensed(qp: CondensedQp, params: ControllerParams) -> QpResult:
    """Solve a standalone condensed QP (no factorisation reuse)."""
    solver = QpSolver(qp.P, qp.A, qp.G, tol=params.qp_tol, max_iter=params.qp_max_iter)
    res = solver.solve(qp.q, qp.b, qp.h)
    res.objective += qp.const
    return res


def deep_lcc_step(blocks: HankelBlocks, params: ControllerParams, window: OnlineWindow):
    """One-off DeeP-LCC solve returning (first input clamped to bounds, solution)."""
    return DeepLcc(blocks, params).step(window)


class WindowController:
    """Closed-loop wrapper shared by the predictive controllers.

    Keeps the last ``Tini`` raw measurements and applied inputs, estimates the
    equilibrium velocity from the head vehicle, turns the window into error
    coordinates and delegates planning to :meth:`plan`. The first ``Tini``
    steps apply zero input. A failed solve holds the previous input once and
    then applies zero.
    """

    def __init__(self, cfg: PlatoonConfig, Tini: int, a_min: float, a_max: float,
                 cav_spacing: float = 20.0, v_star: float | None = None):
        if cfg.m < 1:
            raise ValueError("predictive control needs at least one CAV")
        self.cfg = cfg
        self.Tini = Tini
        self.a_min, self.a_max = a_min, a_max
        self.cav_spacing = cav_spacing
        # None: re-estimate from the head vehicle each step; a number pins the equilibrium
        self.fixed_v_star = v_star
        self._vel = deque(maxlen=Tini)
        self._sp = deque(maxlen=Tini)
        self._u = deque(maxlen=Tini)
        self._prev_u = np.zeros(cfg.m)
        self._held = False
        self.failures = 0
        self.last_info: dict | None = None
        self.solutions: list = []
        self.keep_solutions = False

    def window(self, v_star: float) -> OnlineWindow:
        vel = np.array(self._vel)
        sp = np.array(self._sp)
        y = np.array([measure_outputs(v, s, self.cfg.cav_set, v_star, self.cav_spacing)
                      for v, s in zip(vel, sp)])
        return OnlineWindow(np.array(self._u).T, (vel[:, 0] - v_star)[None, :], y.T)

    def plan(self, window: OnlineWindow, v_star: float) -> tuple[np.ndarray, dict, object]:
        raise NotImplementedError

    def __call__(self, k: int, state: SimState) -> np.ndarray:
        if len(self._u) < self.Tini:
            u = np.zeros(self.cfg.m)
            self.last_info = {"status": "warmup"}
        else:
            v_star = self.fixed_v_star
            if v_star is None:
                v_star = estimate_equilibrium_velocity([v[0] for v in self._vel], self.Tini)
            u, info, sol = self.plan(self.window(v_star), v_star)
            info["v_star"] = v_star
            if info["status"] == OPTIMAL:
                u = np.clip(u, self.a_min, self.a_max)
                self._held = False
            else:
                self.failures += 1
                log.warning("solver status %s at step %d; applying fallback input", info["status"], k)
                u = self._prev_u.copy() if not self._held else np.zeros(self.cfg.m)
                self._held = True
                info["fallback"] = True
            self.last_info = info
            if self.keep_solutions:
                self.solutions.append(sol)
        self._vel.append(state.velocities.copy())
        self._sp.append(state.spacings.copy())
        self._u.append(u.copy())
        self._prev_u = u
        return u


class DeepLccController(WindowController):
    def __init__(self, cfg: PlatoonConfig, blocks: HankelBlocks, params: ControllerParams,
                 cav_spacing: float = 20.0, v_star: float | None = None):
        if blocks.n != cfg.n or blocks.m != cfg.m:
            raise ValueError("Hankel blocks were built for a different platoon")
        super().__init__(cfg, params.Tini, params.a_min, params.a_max, cav_spacing, v_star)
        self.opt = DeepLcc(blocks, params)

    def plan(self, window, v_star):
        sol = self.opt.solve(window)
        return sol.u_star[:, 0], sol.metadata(), sol


def run_receding_horizon(
    cfg: PlatoonConfig,
    blocks: HankelBlocks,
    params: ControllerParams,
    head_profile,
    duration: float,
    seed: int | None = 0,
    cav_spacing: float = 20.0,
    fixed_v_star: float | None = None,
) -> tuple[TrajectoryLog, DeepLccController]:
    """Close the loop between DeeP-LCC and the nonlinear platoon.

    Per-step solver metadata ends up in ``log.step_info``.
    """
    ctrl = DeepLccController(cfg, blocks, params, cav_spacing, fixed_v_star)
    log_ = simulate_closed_loop(cfg, ctrl, head_profile, duration, seed=seed, cav_spacing=cav_spacing)
    return log_, ctrl


__all__ = [
    "ControllerParams", "OnlineWindow", "CondensedQp", "QpSolution", "DeepLcc",
    "DeepLccController", "WindowController", "build_condensed_qp", "solve_condensed", "deep_lcc_step",
    "estimate_equilibrium_velocity", "run_receding_horizon", "spacing_selector",
]
