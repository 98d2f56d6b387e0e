"""Dense convex QP solver with a cached Hessian factorisation.

Solves::

    minimize    0.5 x'Px + q'x
    subject to  A x = b,  G x <= h

for a fixed (P, A, G) and many right-hand sides (q, b, h), which is the shape
of every receding-horizon problem in this package: the Hessian and the
constraint matrices never change between control steps.

The method works on the dual. With P positive definite, eliminating x gives a
problem in the multipliers z = (nu, mu) with only mu >= 0 as constraints;
its Hessian D P^-1 D' (D = [A; G]) is small and precomputed. That bound
constrained problem is solved by a warm-started primal active-set method.
A positive semidefinite P is handled by proximal-point outer iterations on
P + rho*I.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError


OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

# relative change of P x between proximal iterates treated as converged
PROX_STEP_TOL = 1e-10


@dataclass
class KktResiduals:
    primal: float
    dual: float
    gap: float

    def max(self) -> float:
        return max(self.primal, self.dual, self.gap)


@dataclass
class QpResult:
    x: np.ndarray
    eq_dual: np.ndarray
    ineq_dual: np.ndarray
    objective: float
    status: str
    iterations: int
    kkt: KktResiduals
    certificate: float = 0.0
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _as_matrix(M, ncols: int) -> np.ndarray:
    if M is None:
        return np.zeros((0, ncols))
    return np.atleast_2d(np.asarray(M, dtype=float))


class QpSolver:
    """Reusable solver for a fixed (P, A, G).

    Args:
        P: symmetric positive semidefinite Hessian.
        A: equality matrix or None.
        G: inequality matrix or None.
        tol: scaled KKT tolerance reported against.
        max_iter: cap on active-set iterations per solve.
        prox: relative proximal weight used when P is singular or
            ill-conditioned; ``None`` picks it automatically.
    """

    def __init__(self, P, A=None, G=None, tol: float = 1e-6, max_iter: int = 500,
                 prox: float | None = None, max_prox_iter: int = 200):
        P = np.asarray(P, dtype=float)
        nx = P.shape[0]
        if P.shape != (nx, nx):
            raise ValueError("P must be square")
        self.P = 0.5 * (P + P.T)
        self.A = _as_matrix(A, nx)
        self.G = _as_matrix(G, nx)
        if self.A.shape[1] != nx or self.G.shape[1] != nx:
            raise ValueError("constraint matrices do not match the Hessian size")
        self.tol = tol
        self.max_iter = max_iter
        self.max_prox_iter = max_prox_iter
        self.n_eq = self.A.shape[0]
        self.n_ineq = self.G.shape[0]
        self.D = np.vstack([self.A, self.G])

        scale = max(float(np.max(np.abs(np.diag(self.P)))), 1e-12)
        self.rho = 0.0
        factor = None
        if prox is None:
            try:
                factor = cho_factor(self.P)
                # a PD factor can still be numerically useless
                if np.min(np.abs(np.diag(factor[0]))) ** 2 < 1e-11 * scale:
                    factor = None
            except LinAlgError:
                factor = None
            if factor is None:
                self.rho = 1e-7 * scale
        else:
            self.rho = prox * scale
        if factor is None:
            factor = cho_factor(self.P + self.rho * np.eye(nx))
        self._factor = factor
        self.PinvDT = cho_solve(factor, self.D.T, check_finite=False) if self.D.size else np.zeros((nx, 0))
        M = self.D @ self.PinvDT
        self.M = 0.5 * (M + M.T)
        self._active: np.ndarray = np.zeros(0, dtype=int)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def reset_warm_start(self) -> None:
        self._active = np.zeros(0, dtype=int)

    # -- dual active-set core ------------------------------------------------

    def _solve_free(self, F: np.ndarray, c: np.ndarray):
        """Minimise the dual over the free set F.

        Returns ``(z_F, None)`` at a minimiser or ``(None, d)`` with a
        zero-curvature descent direction ``d`` when the reduced problem is
        unbounded (linearly dependent constraints in F).
        """
        if F.size == 0:
            return np.zeros(0), None
        M = self.M[np.ix_(F, F)]
        rhs = -c[F]
        try:
            fac = cho_factor(M)
            if np.min(np.abs(np.diag(fac[0]))) ** 2 >= 1e-13 * max(np.max(np.diag(M)), 1e-300):
                return cho_solve(fac, rhs, check_finite=False), None
        except LinAlgError:
            pass
        w, V = np.linalg.eigh(M)
        keep = w > 1e-12 * max(w[-1], 1e-300)
        Vr, V0 = V[:, keep], V[:, ~keep]
        d = V0 @ (V0.T @ rhs)
        if np.linalg.norm(d) <= 1e-7 * (1.0 + np.linalg.norm(rhs)):
            return Vr @ ((Vr.T @ rhs) / w[keep]), None
        return None, d

    def _dual_active_set(self, c: np.ndarray, h_scale: np.ndarray):
        ne, ni = self.n_eq, self.n_ineq
        r = ne + ni
        z = np.zeros(r)
        in_free = np.zeros(r, dtype=bool)
        in_free[:ne] = True
        warm = self._active[self._active < ni] if self._active.size else self._active
        in_free[ne + warm] = True
        feas_tol = 0.1 * self.tol * h_scale
        iters = 0
        while iters < self.max_iter:
            iters += 1
            F = np.flatnonzero(in_free)
            zF, d = self._solve_free(F, c)
            if zF is None:
                # unbounded ray in the free set: follow it until a multiplier hits zero
                dirn = np.zeros(r)
                dirn[F] = d
                blk = F[(F >= ne) & (dirn[F] < 0)]
                if blk.size == 0:
                    return z, INFEASIBLE, iters, float(np.linalg.norm(d))
                ratios = z[blk] / -dirn[blk]
                k = int(np.argmin(ratios))
                z = z + ratios[k] * dirn
                z[blk[k]] = 0.0
                in_free[blk[k]] = False
                z[ne:] = np.maximum(z[ne:], 0.0)
                continue
            cand = np.zeros(r)
            cand[F] = zF
            neg = F[(F >= ne) & (cand[F] < 0)]
            if neg.size:
                # step back to the feasible region and release the blocking multiplier
                ratios = z[neg] / (z[neg] - cand[neg])
                k = int(np.argmin(ratios))
                z = z + ratios[k] * (cand - z)
                z[neg[k]] = 0.0
                in_free[neg[k]] = False
                mu_free = F[F >= ne]
                drop = mu_free[z[mu_free] <= 0.0]
                in_free[drop] = False
                z[ne:] = np.maximum(z[ne:], 0.0)
                continue
            z = cand
            if ni == 0:
                return z, OPTIMAL, iters, 0.0
            w = self.M[ne:] @ z + c[ne:]  # = h - G x(z)
            viol = w / feas_tol
            viol[in_free[ne:]] = np.inf
            j = int(np.argmin(viol))
            if viol[j] >= -1.0:
                return z, OPTIMAL, iters, 0.0
            in_free[ne + j] = True
        return z, MAX_ITER, iters, 0.0

    def _inner(self, q, b, h):
        rhs_d = np.concatenate([b, h])
        Pinv_q = cho_solve(self._factor, q, check_finite=False)
        c = self.D @ Pinv_q + rhs_d if self.D.size else np.zeros(0)
        h_scale = 1.0 + np.abs(h)
        z, status, iters, cert = self._dual_active_set(c, h_scale)
        x = -(Pinv_q + self.PinvDT @ z)
        return x, z, status, iters, cert

    # -- public API ----------------------------------------------------------

    def solve(self, q, b=None, h=None, warm_start: bool = True) -> QpResult:
        q = np.asarray(q, dtype=float).reshape(self.n)
        b = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(self.n_eq)
        h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(self.n_ineq)
        if not warm_start:
            self.reset_warm_start()
        if self.rho == 0.0:
            x, z, status, iters, cert = self._inner(q, b, h)
        else:
            # accelerated proximal point: each subproblem is centred on an extrapolated iterate
            x = x_prev = np.zeros(self.n)
            iters = 0
            for k in range(self.max_prox_iter):
                centre = x + (k / (k + 3.0)) * (x - x_prev)
                x_new, z, status, it, cert = self._inner(q - self.rho * centre, b, h)
                iters += it
                x_prev, x = x, x_new
                if status != OPTIMAL:
                    break
                self._active = np.flatnonzero(z[self.n_eq:] > 0)
                Px = self.P @ x
                kkt = self._kkt(x, z, q, b, h, Px)
                # flat directions of P do not change the objective, so progress is measured through P
                moved = float(np.linalg.norm(Px - self.P @ x_prev)) / (1.0 + float(np.linalg.norm(Px)))
                if kkt.max() <= 0.01 * self.tol and moved <= PROX_STEP_TOL:
                    break
        nu, mu = z[:self.n_eq], z[self.n_eq:]
        self._active = np.flatnonzero(mu > 0)
        Px = self.P @ x
        kkt = self._kkt(x, z, q, b, h, Px)
        if status == OPTIMAL and kkt.primal > self.tol:
            status = INFEASIBLE if cert > 0 else status
        return QpResult(x=x, eq_dual=nu, ineq_dual=mu, objective=self._objective(x, q, Px), status=status,
                        iterations=iters, kkt=kkt, certificate=cert, active=self._active.copy())

    def _objective(self, x, q, Px=None) -> float:
        if Px is None:
            Px = self.P @ x
        return float(0.5 * x @ Px + q @ x)

    def _kkt(self, x, z, q, b, h, Px) -> KktResiduals:
        nu, mu = z[:self.n_eq], z[self.n_eq:]
        ATnu = self.A.T @ nu
        GTmu = self.G.T @ mu
        stat = Px + q + ATnu + GTmu
        dual_scale = 1.0 + max(_inf(Px), _inf(q), _inf(ATnu), _inf(GTmu))
        Ax, Gx = self.A @ x, self.G @ x
        prim = 0.0
        if self.n_eq:
            prim = max(prim, _inf(Ax - b) / (1.0 + max(_inf(Ax), _inf(b))))
        slack = h - Gx
        if self.n_ineq:
            prim = max(prim, _inf(np.minimum(slack, 0.0)) / (1.0 + max(_inf(Gx), _inf(h))))
            gap = _inf(mu * slack) / (1.0 + abs(self._objective(x, q, Px)))
        else:
            gap = 0.0
        return KktResiduals(primal=prim, dual=_inf(stat) / dual_scale, gap=gap)


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def solve_qp(P, q, A=None, b=None, G=None, h=None, tol: float = 1e-6) -> QpResult:
    """One-shot convenience wrapper around :class:`QpSolver`."""
    return QpSolver(P, A, G, tol=tol).solve(q, b, h)
