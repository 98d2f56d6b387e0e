import numpy as np
import pytest

from deeplcc.controller import (
    ControllerParams, DeepLcc, DeepLccController, OnlineWindow, build_condensed_qp, estimate_equilibrium_velocity,
    run_receding_horizon, solve_condensed, spacing_selector,
)
from deeplcc.data import TrajectoryDataset, partition
from deeplcc.linear_model import simulate_lti
from deeplcc.scenarios import brake_profile


@pytest.fixture(scope="module")
def opt(blocks):
    return DeepLcc(blocks, ControllerParams())


def test_params_validation():
    with pytest.raises(ValueError):
        ControllerParams(lambda_y=0.0)
    with pytest.raises(ValueError):
        ControllerParams(s_tilde_min=5, s_tilde_max=0)
    with pytest.raises(ValueError):
        ControllerParams.from_dict({"Tini": 10, "horizon": 3})
    assert ControllerParams.from_dict({"N": 30}).N == 30


def test_zero_window_gives_zero_input(opt):
    u, sol = opt.step(OnlineWindow.zeros(2, 10, 20))
    assert sol.optimal
    assert np.allclose(u, 0, atol=1e-9)
    assert np.linalg.norm(sol.g) <= 1e-9


def test_spacing_selector():
    sel = spacing_selector(3, 2, 2)
    assert sel.tolist() == [3, 4, 8, 9]


def test_window_stacking_is_time_major():
    w = OnlineWindow(np.array([[1, 2], [3, 4]]), np.array([[5, 6]]), np.zeros((3, 2)))
    u, e, _ = w.stacked()
    assert u.tolist() == [1, 3, 2, 4] and e.tolist() == [5, 6]
    with pytest.raises(ValueError):
        OnlineWindow(np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((2, 3)))


def test_equilibrium_estimate():
    assert estimate_equilibrium_velocity([1, 2, 3, 4], Tini=2) == 3.5
    with pytest.raises(ValueError):
        estimate_equilibrium_velocity([1.0], Tini=3)


def test_condensed_qp_objective_matches_explicit_cost(blocks, opt):
    rng = np.random.default_rng(0)
    pr = ControllerParams()
    w = OnlineWindow(rng.normal(size=(2, 20)) * 0.1, rng.normal(size=(1, 20)) * 0.1, rng.normal(size=(10, 20)) * 0.1)
    qp = build_condensed_qp(blocks, pr, w)
    g = rng.normal(size=blocks.L) * 1e-3
    u, y = blocks.Uf @ g, blocks.Yf @ g
    qd = np.tile(np.r_[np.full(8, pr.wv), np.full(2, pr.ws)], pr.N)
    sigma = blocks.Yp @ g - w.stacked()[2]
    explicit = y @ (qd * y) + pr.wu * u @ u + pr.lambda_g * g @ g + pr.lambda_y * sigma @ sigma
    condensed = 0.5 * g @ qp.P @ g + qp.q @ g + qp.const
    assert condensed == pytest.approx(explicit, rel=1e-9)
    res = solve_condensed(qp, pr)
    assert res.optimal and res.kkt.max() <= 1e-6


def test_solution_respects_constraints(opt):
    rng = np.random.default_rng(2)
    w = OnlineWindow(rng.normal(size=(2, 20)), np.full((1, 20), -3.0), rng.normal(size=(10, 20)) * 3)
    sol = opt.solve(w)
    pr = opt.params
    assert sol.optimal and max(sol.kkt_residuals.values()) <= 1e-6
    tol = 1e-5
    assert sol.u_star.min() >= pr.a_min - tol and sol.u_star.max() <= pr.a_max + tol
    assert sol.y_star[8:].min() >= pr.s_tilde_min - tol and sol.y_star[8:].max() <= pr.s_tilde_max + tol
    md = sol.metadata()
    assert set(md) == {"status", "iterations", "objective", "norm_g", "norm_sigma_y"}


def test_short_tini_warns(dataset):
    blocks = partition(dataset, 5, 10)
    with pytest.warns(UserWarning):
        DeepLcc(blocks, ControllerParams(Tini=5, N=10))


def test_mismatched_blocks_rejected(blocks, platoon):
    with pytest.raises(ValueError):
        DeepLcc(blocks, ControllerParams(Tini=10))


def test_noise_free_lti_prediction_is_exact(small_lti):
    # with exact LTI data and Tini >= lag, predictions equal the model rollout
    _, dm = small_lti
    rng = np.random.default_rng(0)
    T, Tini, N = 300, 10, 15
    u, e = rng.uniform(-1, 1, (T, 1)), rng.uniform(-1, 1, T)
    _, y = simulate_lti(dm, np.zeros(8), u, e)
    blocks = partition(TrajectoryDataset(u.T, e[None], y.T, 0.05, 4, (2,), 15.0, 20.0), Tini, N)
    opt = DeepLcc(blocks, ControllerParams(Tini=Tini, N=N, lambda_g=0.0, slack=False))
    u2, e2 = rng.uniform(-1, 1, (Tini, 1)), rng.uniform(-1, 1, Tini)
    xs, y2 = simulate_lti(dm, rng.normal(size=8), u2, e2)
    sol = opt.solve(OnlineWindow(u2.T, e2[None], y2.T))
    assert sol.optimal
    _, y_pred = simulate_lti(dm, xs[-1], sol.u_star.T, np.zeros(N))
    assert np.allclose(sol.y_star.T, y_pred, atol=1e-6)


def test_closed_loop_brake(platoon, blocks):
    prof = brake_profile(tail=4.0)
    log, ctrl = run_receding_horizon(platoon, blocks, ControllerParams(), prof, prof.duration, seed=1)
    assert log.ok and ctrl.failures == 0
    sp = log.spacings[:, [2, 5]] - 20.0
    assert sp.min() >= -15 - 1e-3 and sp.max() <= 20 + 1e-3
    assert all(i["status"] in ("warmup", "optimal") for i in log.step_info)
    assert np.all(log.inputs[:20] == 0)


class _FailingOnce(DeepLccController):
    def __init__(self, *a, **k):
        super().__init__(*a, **k)
        self.calls = 0

    def plan(self, window, v_star):
        self.calls += 1
        if self.calls in (3, 4):
            return np.full(2, 9.0), {"status": "max_iter"}, None
        return super().plan(window, v_star)


def test_fallback_holds_then_zeroes(platoon, blocks):
    ctrl = _FailingOnce(platoon, blocks, ControllerParams())
    from deeplcc.vehicle import simulate_closed_loop
    log = simulate_closed_loop(platoon, ctrl, lambda t: 15.0 - 0.5 * t, 1.5, seed=0)
    k = 20 + 2
    assert np.array_equal(log.inputs[k], log.inputs[k - 1])
    assert np.all(log.inputs[k + 1] == 0)
    assert ctrl.failures == 2


@pytest.fixture(scope="module")
def lti_blocks(small_lti):
    _, dm = small_lti
    rng = np.random.default_rng(0)
    u, e = rng.uniform(-1, 1, (300, 1)), rng.uniform(-1, 1, 300)
    _, y = simulate_lti(dm, np.zeros(8), u, e)
    blocks = partition(TrajectoryDataset(u.T, e[None], y.T, 0.05, 4, (2,), 15.0, 20.0), 10, 15)
    u2, e2 = rng.uniform(-1, 1, (10, 1)), rng.uniform(-1, 1, 10)
    _, y2 = simulate_lti(dm, rng.normal(size=8), u2, e2)
    return blocks, OnlineWindow(u2.T, e2[None], y2.T)


def test_slack_inactive_on_consistent_lti_window(lti_blocks):
    blocks, w = lti_blocks
    sol = DeepLcc(blocks, ControllerParams(Tini=10, N=15, lambda_g=0.0, lambda_y=1e8)).solve(w)
    assert sol.optimal and np.abs(sol.sigma_y).max() <= 1e-5


def test_larger_lambda_g_shrinks_g(lti_blocks):
    blocks, w = lti_blocks
    norms = [np.linalg.norm(DeepLcc(blocks, ControllerParams(Tini=10, N=15, lambda_g=lg)).solve(w).g)
             for lg in (1, 10, 100, 1000)]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(norms, norms[1:]))


def test_feasible_perturbations_do_not_improve_objective(lti_blocks):
    blocks, w = lti_blocks
    opt = DeepLcc(blocks, ControllerParams(Tini=10, N=15))
    qp = opt.condensed(w)
    sol = opt.solve(w)
    f = lambda g: 0.5 * g @ qp.P @ g + qp.q @ g + qp.const
    _, s, Vt = np.linalg.svd(qp.A)
    null = Vt[int(np.sum(s > s[0] * 1e-10)):].T
    rng = np.random.default_rng(5)
    tried = 0
    for _ in range(200):
        g = sol.g + null @ rng.normal(size=null.shape[1]) * 1e-3
        if np.all(qp.G @ g <= qp.h):
            tried += 1
            assert f(g) >= sol.objective - 1e-6 * (1 + abs(sol.objective))
        if tried == 10:
            break
    assert tried == 10
