import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deeplcc.qp import INFEASIBLE, OPTIMAL, QpSolver, solve_qp


def test_toy_equality():
    r = solve_qp(2 * np.eye(2), np.zeros(2), A=[[1.0, 0.0]], b=[1.0])
    assert r.optimal and np.allclose(r.x, [1.0, 0.0])


def _projected_gradient(P, q, lo, hi, iters=20000):
    # independent oracle for box-constrained QPs
    x = np.zeros(len(q))
    t = 1.0 / np.linalg.eigvalsh(P).max()
    for _ in range(iters):
        x = np.clip(x - t * (P @ x + q), lo, hi)
    return x


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_box_qp_matches_projected_gradient(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.5 * np.eye(n)
    q = rng.normal(size=n) * 3
    G = np.vstack([np.eye(n), -np.eye(n)])
    h = np.ones(2 * n)
    r = solve_qp(P, q, G=G, h=h)
    assert r.optimal and r.kkt.max() <= 1e-6
    assert np.allclose(r.x, _projected_gradient(P, q, -1, 1), atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_general_qp_kkt(seed):
    rng = np.random.default_rng(seed)
    n, me, mi = 15, 4, 20
    M = rng.normal(size=(n, n))
    P = M @ M.T + 1e-3 * np.eye(n)
    A = rng.normal(size=(me, n))
    G = rng.normal(size=(mi, n))
    x_feas = rng.normal(size=n)
    b = A @ x_feas
    h = G @ x_feas + rng.uniform(0, 1, mi)
    r = solve_qp(P, rng.normal(size=n), A, b, G, h)
    assert r.status == OPTIMAL
    assert r.kkt.max() <= 1e-6
    assert np.all(r.ineq_dual >= 0)


def test_singular_hessian_via_proximal_iterations():
    # minimise (x1 + x2 - 2)^2 with x1 <= 0.5: singular P
    P = 2 * np.ones((2, 2))
    q = np.array([-4.0, -4.0])
    s = QpSolver(P, None, [[1.0, 0.0]])
    assert s.rho > 0
    r = s.solve(q, None, [0.5])
    assert r.optimal and r.x.sum() == pytest.approx(2.0, abs=1e-6) and r.x[0] <= 0.5 + 1e-8


def test_warm_start_reuses_active_set():
    rng = np.random.default_rng(1)
    n = 20
    M = rng.normal(size=(n, n))
    s = QpSolver(M @ M.T + np.eye(n), None, np.vstack([np.eye(n), -np.eye(n)]))
    q = rng.normal(size=n) * 10
    cold = s.solve(q, None, np.ones(2 * n), warm_start=False)
    warm = s.solve(q * 1.001, None, np.ones(2 * n))
    assert warm.iterations < cold.iterations
    assert warm.optimal


def test_inconsistent_equalities_flagged():
    r = solve_qp(np.eye(2), np.zeros(2), A=[[1.0, 0.0], [1.0, 0.0]], b=[0.0, 1.0])
    assert r.status == INFEASIBLE
