"""Output-feedback MPC on the known discretised linear model.

Serves as the model-based reference for DeeP-LCC: same horizon, weights,
bounds and the same past window, with the state recovered by windowed least
squares instead of being read off the data.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .controller import OnlineWindow, WindowController, spacing_selector
from .linear_model import DiscreteModel
from .qp import QpSolver
from .vehicle import PlatoonConfig, TrajectoryLog, simulate_closed_loop


@dataclass(frozen=True)
class MpcParams:
    Tini: int = 20
    N: int = 50
    wv: float = 1.0
    ws: float = 0.5
    wu: float = 0.1
    s_tilde_min: float = -15.0
    s_tilde_max: float = 20.0
    a_min: float = -5.0
    a_max: float = 2.0
    qp_tol: float = 1e-6
    qp_max_iter: int = 500
    ridge: float = 1e-8

    @classmethod
    def from_controller(cls, params) -> "MpcParams":
        """Copy the shared horizon/weight/bound settings from ControllerParams."""
        names = {f.name for f in fields(cls)} - {"ridge"}
        return cls(**{k: getattr(params, k) for k in names})


def reconstruct_state(model: DiscreteModel, window: OnlineWindow, ridge: float = 1e-8) -> np.ndarray:
    """Estimate x(t) from the past window.

    Fits x(t - Tini) to y(t-Tini+j) = C Ad^j x0 + (input convolution) by least
    squares, then propagates it through the window. The ridge ``ridge * I``
    only enters when the stacked observability matrix is ill-conditioned.

    Raises:
        ValueError: if the observability stack is rank deficient.
    """
    Ad, Bd, Hd, C = model.Ad, model.Bd, model.Hd[:, 0], model.Cd
    nx = Ad.shape[0]
    T = window.Tini
    u, e, y = window.u_ini, window.eps_ini[0], window.y_ini
    O = np.zeros((T * C.shape[0], nx))
    resid = np.zeros(T * C.shape[0])
    Ak = np.eye(nx)
    forced = np.zeros(nx)  # response to the window inputs, zero initial state
    for j in range(T):
        rows = slice(j * C.shape[0], (j + 1) * C.shape[0])
        O[rows] = C @ Ak
        resid[rows] = y[:, j] - C @ forced
        Ak = Ad @ Ak
        forced = Ad @ forced + Bd @ u[:, j] + Hd * e[j]
    sv = np.linalg.svd(O, compute_uv=False)
    if sv[-1] <= max(O.shape) * sv[0] * 1e-12:
        raise ValueError("observability stack is rank deficient; check the HDV coupling condition "
                         "alpha1 - alpha2*alpha3 + alpha3**2 != 0 and that Tini covers the state dimension")
    if sv[0] / sv[-1] > 1e8 and ridge > 0:
        x0 = np.linalg.solve(O.T @ O + ridge * np.eye(nx), O.T @ resid)
    else:
        x0, *_ = np.linalg.lstsq(O, resid, rcond=None)
    # Ak is now Ad^T and ``forced`` the input response at time t
    return Ak @ x0 + forced


class Mpc:
    """Condensed MPC with the Hessian factorised once.

    Decision variables are the N future inputs. Predicted outputs
    ``y(t+k) = C x(t+k)``, k = 0..N-1, align with the DeeP-LCC future block,
    and the future head velocity error is taken as zero.
    """

    def __init__(self, model: DiscreteModel, params: MpcParams, n: int, m: int):
        self.model = model
        self.params = params
        self.n, self.m = n, m
        N, p, nx = params.N, model.p, model.n_state
        Ad, Bd, C = model.Ad, model.Bd, model.Cd
        Phi = np.zeros((N * p, nx))
        Gamma = np.zeros((N * p, N * m))
        Apow = [np.eye(nx)]
        for _ in range(N):
            Apow.append(Ad @ Apow[-1])
        for k in range(N):
            Phi[k * p:(k + 1) * p] = C @ Apow[k]
            for j in range(k):
                Gamma[k * p:(k + 1) * p, j * m:(j + 1) * m] = C @ Apow[k - 1 - j] @ Bd
        qdiag = np.tile(np.concatenate([np.full(n, params.wv), np.full(m, params.ws)]), N)
        self.Phi, self.Gamma, self.qdiag = Phi, Gamma, qdiag
        self.P = 2.0 * ((Gamma.T * qdiag) @ Gamma + params.wu * np.eye(N * m))
        sel = spacing_selector(n, m, N)
        self._sel = sel
        Gs = Gamma[sel]
        eye = np.eye(N * m)
        self.G = np.vstack([eye, -eye, Gs, -Gs])
        self.solver = QpSolver(self.P, None, self.G, tol=params.qp_tol, max_iter=params.qp_max_iter)

    def solve(self, x_hat):
        pr = self.params
        free = self.Phi @ x_hat
        q = 2.0 * self.Gamma.T @ (self.qdiag * free)
        mN = self.m * pr.N
        s_free = free[self._sel]
        h = np.concatenate([np.full(mN, pr.a_max), np.full(mN, -pr.a_min),
                            pr.s_tilde_max - s_free, s_free - pr.s_tilde_min])
        res = self.solver.solve(q, None, h)
        res.objective += float(free @ (self.qdiag * free))
        u = res.x.reshape(pr.N, self.m).T
        y = (free + self.Gamma @ res.x).reshape(pr.N, -1).T
        return u, y, res


def mpc_step(model: DiscreteModel, params: MpcParams, x_hat, n: int, m: int):
    """Solve once from ``x_hat``; returns (first input clamped to bounds, (u_plan, y_plan, result))."""
    u, y, res = Mpc(model, params, n, m).solve(np.asarray(x_hat, dtype=float))
    return np.clip(u[:, 0], params.a_min, params.a_max), (u, y, res)


class MpcController(WindowController):
    def __init__(self, cfg: PlatoonConfig, model: DiscreteModel, params: MpcParams,
                 cav_spacing: float = 20.0, v_star: float | None = None):
        super().__init__(cfg, params.Tini, params.a_min, params.a_max, cav_spacing, v_star)
        self.mpc = Mpc(model, params, cfg.n, cfg.m)
        self.params = params

    def plan(self, window, v_star):
        x_hat = reconstruct_state(self.mpc.model, window, self.params.ridge)
        u, y, res = self.mpc.solve(x_hat)
        info = {"status": res.status, "iterations": res.iterations, "objective": res.objective,
                "norm_x_hat": float(np.linalg.norm(x_hat))}
        return u[:, 0], info, (u, y, res)


def run_mpc(cfg: PlatoonConfig, model: DiscreteModel, params: MpcParams, head_profile, duration: float,
            seed: int | None = 0, cav_spacing: float = 20.0) -> tuple[TrajectoryLog, MpcController]:
    ctrl = MpcController(cfg, model, params, cav_spacing)
    log = simulate_closed_loop(cfg, ctrl, head_profile, duration, seed=seed, cav_spacing=cav_spacing)
    return log, ctrl
