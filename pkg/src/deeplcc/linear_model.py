"""Linearised mixed-traffic model and its structural analysis.

State ordering is ``x = [s~_1, v~_1, ..., s~_n, v~_n]``; the output stacks the
velocity errors of all vehicles followed by the spacing errors of the CAVs.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Literal, Mapping

import numpy as np
from scipy.linalg import expm

from .vehicle import OvmParams, PlatoonConfig, desired_velocity_slope, equilibrium_spacing


@dataclass(frozen=True)
class LinearizationCoeffs:
    alpha1: float
    alpha2: float
    alpha3: float

    @property
    def plausible(self) -> bool:
        """Stable human driving regime: alpha1 > 0 and alpha2 > alpha3 > 0."""
        return self.alpha1 > 0 and self.alpha2 > self.alpha3 > 0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha1, self.alpha2, self.alpha3)


def linearize_hdv(p: OvmParams, v_star: float) -> LinearizationCoeffs:
    """Closed-form OVM partials at the equilibrium (s*(v_star), v_star)."""
    if not 0 < v_star < p.v_max:
        raise ValueError(f"linearisation needs 0 < v* < v_max, got {v_star}")
    s_star = equilibrium_spacing(v_star, p)
    return LinearizationCoeffs(
        alpha1=p.alpha * desired_velocity_slope(s_star, p),
        alpha2=p.alpha + p.beta,
        alpha3=p.beta,
    )


def coupling_condition_holds(coeffs: LinearizationCoeffs, tol: float = 1e-9) -> bool:
    """True when alpha1 - alpha2*alpha3 + alpha3**2 is bounded away from zero."""
    a1, a2, a3 = coeffs.as_tuple()
    return abs(a1 - a2 * a3 + a3 * a3) > tol


@dataclass(frozen=True)
class LinearTrafficModel:
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    C: np.ndarray
    cav_set: tuple[int, ...]
    coeffs: Mapping[int, LinearizationCoeffs]
    v_star: float | None = None
    s_star: Mapping[int, float] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.A.shape[0] // 2

    @property
    def m(self) -> int:
        return len(self.cav_set)

    @property
    def B_hat(self) -> np.ndarray:
        """Combined input matrix [H, B] for u_hat = (eps, u)."""
        return np.hstack([self.H, self.B])

    @property
    def heterogeneous(self) -> bool:
        vals = {c.as_tuple() for c in self.coeffs.values()}
        return len(vals) > 1


def build_model(
    n: int,
    cav_set,
    coeffs: Mapping[int, LinearizationCoeffs],
    v_star: float | None = None,
    s_star: Mapping[int, float] | None = None,
) -> LinearTrafficModel:
    """Assemble (A, B, H, C) from per-HDV linearisation coefficients.

    When vehicle 1 is a CAV the head velocity error only enters its spacing
    equation, so ``H = e_1`` in that case.
    """
    cav = tuple(sorted(cav_set))
    if not cav:
        raise ValueError("the linear model needs at least one CAV")
    hdvs = [i for i in range(1, n + 1) if i not in cav]
    missing = [i for i in hdvs if i not in coeffs]
    if missing:
        raise ValueError(f"missing linearisation coefficients for HDVs {missing}")
    A = np.zeros((2 * n, 2 * n))
    for i in range(1, n + 1):
        r = 2 * (i - 1)
        if i in cav:
            diag = np.array([[0.0, -1.0], [0.0, 0.0]])
            sub = np.array([[0.0, 1.0], [0.0, 0.0]])
        else:
            a1, a2, a3 = coeffs[i].as_tuple()
            diag = np.array([[0.0, -1.0], [a1, -a2]])
            sub = np.array([[0.0, 1.0], [0.0, a3]])
        A[r:r + 2, r:r + 2] = diag
        if i > 1:
            A[r:r + 2, r - 2:r] = sub
    B = np.zeros((2 * n, len(cav)))
    for k, i in enumerate(cav):
        B[2 * i - 1, k] = 1.0
    H = np.zeros((2 * n, 1))
    H[0, 0] = 1.0
    if 1 not in cav:
        H[1, 0] = coeffs[1].alpha3
    C = np.zeros((n + len(cav), 2 * n))
    for i in range(n):
        C[i, 2 * i + 1] = 1.0
    for k, i in enumerate(cav):
        C[n + k, 2 * i - 2] = 1.0
    used = {i: coeffs[i] for i in hdvs}
    return LinearTrafficModel(A, B, H, C, cav, used, v_star, dict(s_star or {}))


def model_from_config(cfg: PlatoonConfig, v_star: float, cav_spacing: float = 20.0) -> LinearTrafficModel:
    """Linearise every HDV of ``cfg`` at ``v_star`` and assemble the platoon model."""
    coeffs = {i: linearize_hdv(cfg.hdv_params[i], v_star) for i in cfg.hdv_indices}
    for i, c in coeffs.items():
        if not c.plausible:
            warnings.warn(f"HDV {i} coefficients {c} are outside the stable driving regime")
    s_star = {i: (cav_spacing if i in cfg.cav_set else equilibrium_spacing(v_star, cfg.hdv_params[i]))
              for i in range(1, cfg.n + 1)}
    return build_model(cfg.n, cfg.cav_set, coeffs, v_star, s_star)


@dataclass(frozen=True)
class DiscreteModel:
    Ad: np.ndarray
    Bd: np.ndarray
    Hd: np.ndarray
    Cd: np.ndarray
    dt: float

    @property
    def n_state(self) -> int:
        return self.Ad.shape[0]

    @property
    def m(self) -> int:
        return self.Bd.shape[1]

    @property
    def p(self) -> int:
        return self.Cd.shape[0]

    def step(self, x, u, eps):
        return self.Ad @ x + self.Bd @ np.atleast_1d(u) + self.Hd[:, 0] * float(eps)

    def output(self, x):
        return self.Cd @ x


def discretize(model: LinearTrafficModel, dt: float) -> DiscreteModel:
    """Zero-order-hold discretisation through one augmented matrix exponential."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    nx = model.A.shape[0]
    Bh = model.B_hat
    aug = np.zeros((nx + Bh.shape[1], nx + Bh.shape[1]))
    aug[:nx, :nx] = model.A
    aug[:nx, nx:] = Bh
    E = expm(aug * dt)
    Ad = E[:nx, :nx]
    Hd = E[:nx, nx:nx + 1]
    Bd = E[:nx, nx + 1:]
    return DiscreteModel(Ad, Bd, Hd, model.C.copy(), dt)


def simulate_lti(dm: DiscreteModel, x0, u_seq, eps_seq):
    """Roll the discrete model forward.

    ``u_seq`` is (K, m), ``eps_seq`` is (K,). Returns states (K+1, 2n) and
    outputs (K, p) with ``y[k] = C x[k]``.
    """
    u_seq = np.asarray(u_seq, dtype=float).reshape(len(eps_seq), dm.m)
    x = np.asarray(x0, dtype=float).copy()
    xs = [x]
    for u, e in zip(u_seq, eps_seq):
        x = dm.step(x, u, e)
        xs.append(x)
    xs = np.array(xs)
    return xs, xs[:-1] @ dm.Cd.T


# -- structural analysis ----------------------------------------------------

def numerical_rank(M: np.ndarray, rel_tol: float = 1e-10) -> tuple[int, np.ndarray]:
    """Rank with threshold max(shape) * sigma_1 * rel_tol; also returns the singular values."""
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0, sv
    tol = max(M.shape) * sv[0] * rel_tol
    return int(np.sum(sv > tol)), sv


def _gap(sv: np.ndarray, rank: int) -> float:
    """Ratio between the last kept and first dropped singular value (inf if none dropped)."""
    if rank == 0 or rank >= sv.size:
        return float("inf")
    return float(sv[rank - 1] / max(sv[rank], np.finfo(float).tiny))


def kalman_controllability_matrix(A, B) -> np.ndarray:
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def kalman_observability_matrix(A, C) -> np.ndarray:
    return kalman_controllability_matrix(A.T, C.T).T


def _krylov_basis(A, B, rel_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the reachable subspace by block Arnoldi (staircase)."""
    nx = A.shape[0]
    scale = max(np.linalg.norm(A, 2), np.linalg.norm(B, 2), 1.0)
    Q = np.zeros((nx, 0))
    W = B.copy()
    for _ in range(nx):
        W = W - Q @ (Q.T @ W)
        W = W - Q @ (Q.T @ W)
        if W.size == 0:
            break
        U, s, _ = np.linalg.svd(W, full_matrices=False)
        keep = s > nx * scale * rel_tol
        if not keep.any():
            break
        new = U[:, keep]
        Q = np.hstack([Q, new])
        W = A @ new
    return Q


def _block_eigenvalues(model: LinearTrafficModel) -> np.ndarray:
    # A is block lower-triangular: its spectrum is that of the 2x2 diagonal blocks,
    # which avoids the spread eigvals() produces on defective repeated modes
    ev = []
    for i in range(model.n):
        ev.extend(np.linalg.eigvals(model.A[2 * i:2 * i + 2, 2 * i:2 * i + 2]))
    return np.array(ev)


def _distinct(ev: np.ndarray, tol: float = 1e-9) -> list[complex]:
    out: list[complex] = []
    for lam in sorted(ev, key=lambda z: (z.real, z.imag)):
        if not any(abs(lam - mu) <= tol * max(1.0, abs(mu)) for mu in out):
            out.append(complex(lam))
    return out


def _pbh(A: np.ndarray, M: np.ndarray, eigs, rel_tol: float, dual: bool) -> list[dict]:
    nx = A.shape[0]
    rows = []
    for lam in eigs:
        if dual:
            test = np.vstack([lam * np.eye(nx) - A, M])
        else:
            test = np.hstack([lam * np.eye(nx) - A, M])
        r, _ = numerical_rank(test, rel_tol)
        rows.append({"eigenvalue": [lam.real, lam.imag], "rank": r, "full": r == nx})
    return rows


def structural_prediction(model: LinearTrafficModel, tol: float = 1e-9) -> dict:
    """Verdicts implied by the structural controllability/observability results.

    Entries are ``None`` where no claim is made (the coupling condition fails
    for some HDV).
    """
    cond = all(coupling_condition_holds(c, tol) for c in model.coeffs.values())
    first = model.cav_set[0]
    if not cond:
        return {"coupling_condition": False, "cav_only_controllable": None, "dim_uncontrollable": None,
                "stabilizable": None, "combined_controllable": None, "observable": None}
    return {
        "coupling_condition": True,
        "cav_only_controllable": first == 1,
        "dim_uncontrollable": 2 * (first - 1),
        "stabilizable": True,
        "combined_controllable": True,
        "observable": True,
    }


@dataclass
class ControllabilityReport:
    input_choice: str
    rank: int
    dim_controllable: int
    dim_uncontrollable: int
    controllable: bool
    stabilizable: bool
    uncontrollable_modes: list[list[float]]
    uncontrolled_vehicles: list[int]
    svd_gap: float
    pbh: list[dict]
    heterogeneous: bool
    predicted: dict

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ObservabilityReport:
    rank: int
    observable: bool
    svd_gap: float
    pbh: list[dict]
    heterogeneous: bool
    predicted: dict

    def to_dict(self) -> dict:
        return asdict(self)


def analyze_controllability(
    model: LinearTrafficModel,
    input_choice: Literal["cav_only", "combined"] = "cav_only",
    rel_tol: float = 1e-10,
    stability_tol: float = 1e-9,
) -> ControllabilityReport:
    if input_choice == "cav_only":
        B = model.B
    elif input_choice == "combined":
        B = model.B_hat
    else:
        raise ValueError(f"unknown input choice {input_choice!r}")
    A = model.A
    nx = A.shape[0]
    rank, sv = numerical_rank(kalman_controllability_matrix(A, B), rel_tol)
    basis = _krylov_basis(A, B, rel_tol)
    pbh = _pbh(A, B, _distinct(_block_eigenvalues(model)), rel_tol, dual=False)
    bad = [row["eigenvalue"] for row in pbh if not row["full"]]
    stabilizable = all(lam[0] < -stability_tol for lam in bad)
    # vehicles whose (s, v) coordinates the reachable subspace does not touch
    proj = np.linalg.norm(basis.T, axis=0) if basis.size else np.zeros(nx)
    untouched = [i + 1 for i in range(model.n) if max(proj[2 * i], proj[2 * i + 1]) < 1e-8]
    pred = structural_prediction(model)
    return ControllabilityReport(
        input_choice=input_choice,
        rank=rank,
        dim_controllable=basis.shape[1],
        dim_uncontrollable=nx - rank,
        controllable=rank == nx,
        stabilizable=stabilizable,
        uncontrollable_modes=bad,
        uncontrolled_vehicles=untouched,
        svd_gap=_gap(sv, rank),
        pbh=pbh,
        heterogeneous=model.heterogeneous,
        predicted=pred,
    )


def analyze_observability(model: LinearTrafficModel, rel_tol: float = 1e-10) -> ObservabilityReport:
    A, C = model.A, model.C
    nx = A.shape[0]
    rank, sv = numerical_rank(kalman_observability_matrix(A, C), rel_tol)
    pbh = _pbh(A, C, _distinct(_block_eigenvalues(model)), rel_tol, dual=True)
    return ObservabilityReport(
        rank=rank,
        observable=rank == nx,
        svd_gap=_gap(sv, rank),
        pbh=pbh,
        heterogeneous=model.heterogeneous,
        predicted=structural_prediction(model),
    )
