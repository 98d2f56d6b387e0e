import numpy as np
import pytest
from scipy.integrate import solve_ivp

from deeplcc.linear_model import (
    LinearizationCoeffs, analyze_controllability, analyze_observability, build_model, coupling_condition_holds,
    discretize, linearize_hdv, model_from_config, simulate_lti, structural_prediction,
)
from deeplcc.vehicle import OvmParams, PlatoonConfig, equilibrium_spacing, ovm_acceleration

from conftest import NOMINAL_COEFFS


def test_nominal_linearization_values():
    c = linearize_hdv(OvmParams(), 15.0)
    assert c.alpha1 == pytest.approx(0.3 * np.pi, abs=1e-12)
    assert c.alpha2 == pytest.approx(1.5) and c.alpha3 == pytest.approx(0.9)
    assert c.plausible


@pytest.mark.parametrize("v", [5.0, 10.0, 15.0, 22.0])
@pytest.mark.parametrize("params", [OvmParams(), OvmParams(alpha=0.5, beta=1.05)])
def test_linearization_matches_finite_differences(v, params):
    s = equilibrium_spacing(v, params)
    h = 1e-5
    F = lambda ds, dsd, dv: ovm_acceleration(s + ds, dsd, v + dv, params)
    d_s = (F(h, 0, 0) - F(-h, 0, 0)) / (2 * h)
    d_sd = (F(0, h, 0) - F(0, -h, 0)) / (2 * h)
    d_v = (F(0, 0, h) - F(0, 0, -h)) / (2 * h)
    c = linearize_hdv(params, v)
    assert d_s == pytest.approx(c.alpha1, rel=1e-6)
    assert d_sd == pytest.approx(c.alpha3, rel=1e-6)
    # dF/dv at fixed s, with s_dot = v_pred - v contributing -beta
    assert d_v - d_sd == pytest.approx(-c.alpha2, rel=1e-6)


def test_coupling_condition():
    assert coupling_condition_holds(NOMINAL_COEFFS)
    assert not coupling_condition_holds(LinearizationCoeffs(0.54, 1.5, 0.9))  # 0.54 - 1.35 + 0.81 = 0


def test_model_structure_cav_first():
    m = build_model(3, (1,), {2: NOMINAL_COEFFS, 3: NOMINAL_COEFFS})
    assert m.H[:, 0].tolist() == [1, 0, 0, 0, 0, 0]
    assert m.B[1, 0] == 1 and m.B.sum() == 1
    m2 = build_model(3, (2,), {1: NOMINAL_COEFFS, 3: NOMINAL_COEFFS})
    assert m2.H[:2, 0].tolist() == [1, 0.9]
    # output: velocity errors of all vehicles, then the CAV spacing error
    assert m2.C.shape == (4, 6) and m2.C[3, 2] == 1


def test_discretization_matches_ode_oracle(small_lti):
    model, dm = small_lti
    rng = np.random.default_rng(0)
    for _ in range(3):
        x0 = rng.normal(size=8)
        u, e = rng.normal(size=1), rng.normal()
        rhs = lambda t, x: model.A @ x + model.B @ u + model.H[:, 0] * e
        sol = solve_ivp(rhs, (0, 0.05), x0, method="DOP853", rtol=1e-13, atol=1e-14)
        exact = sol.y[:, -1]
        assert np.max(np.abs(dm.step(x0, u, e) - exact)) <= 1e-8 * (1 + np.max(np.abs(exact)))


def test_discretization_refinement_consistency(small_lti):
    model, dm = small_lti
    half = discretize(model, 0.025)
    assert np.allclose(half.Ad @ half.Ad, dm.Ad, atol=1e-12)
    assert np.allclose(half.Ad @ half.Bd + half.Bd, dm.Bd, atol=1e-12)


def test_simulate_lti_alignment(small_lti):
    _, dm = small_lti
    x0 = np.arange(8.0)
    xs, ys = simulate_lti(dm, x0, np.ones((3, 1)), np.zeros(3))
    assert np.allclose(ys[0], dm.Cd @ x0)
    assert np.allclose(xs[1], dm.step(x0, [1.0], 0.0))


def _model(n, S, coeffs=NOMINAL_COEFFS):
    return build_model(n, S, {i: coeffs for i in range(1, n + 1) if i not in S})


def test_leading_cav_controllable():
    r = analyze_controllability(_model(4, (1,)))
    assert r.controllable and r.rank == 8
    assert analyze_observability(_model(4, (1,))).observable


def test_trailing_cav_stabilizable_only():
    r = analyze_controllability(_model(4, (3,)))
    assert not r.controllable and r.stabilizable
    assert r.dim_uncontrollable == 4 and r.uncontrolled_vehicles == [1, 2]
    assert all(lam[0] < 0 for lam in r.uncontrollable_modes)
    assert analyze_controllability(_model(4, (3,)), "combined").controllable


def test_coupling_condition_violation_loses_controllability():
    bad = LinearizationCoeffs(0.54, 1.5, 0.9)
    for S in [(1,), (3,)]:
        assert analyze_controllability(_model(4, S, bad), "combined").rank < 8
    assert analyze_controllability(_model(4, (1,), bad)).rank < 8
    assert structural_prediction(_model(4, (1,), bad))["coupling_condition"] is False


def test_random_configs_agree_with_predictions_and_monotone():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        S = tuple(sorted(rng.choice(np.arange(1, n + 1), size=int(rng.integers(1, n + 1)), replace=False)))
        coeffs = {}
        for i in range(1, n + 1):
            a3 = rng.uniform(0.3, 1.2)
            c = LinearizationCoeffs(rng.uniform(0.3, 2.0), a3 + rng.uniform(0.1, 1.0), a3)
            assert coupling_condition_holds(c)
            coeffs[i] = c
        model = build_model(n, S, {i: coeffs[i] for i in range(1, n + 1) if i not in S})
        pred = structural_prediction(model)
        only = analyze_controllability(model, "cav_only")
        comb = analyze_controllability(model, "combined")
        assert only.controllable == pred["cav_only_controllable"]
        assert only.dim_uncontrollable == pred["dim_uncontrollable"]
        assert only.stabilizable == pred["stabilizable"]
        assert comb.controllable == pred["combined_controllable"]
        assert analyze_observability(model).observable == pred["observable"]
        assert comb.dim_controllable >= only.dim_controllable


def test_pbh_agrees_with_kalman():
    for S in [(1,), (3,), (2, 4)]:
        r = analyze_controllability(_model(4, S))
        assert r.controllable == all(row["full"] for row in r.pbh)


def test_heterogeneous_model_from_config():
    cfg = PlatoonConfig.heterogeneous(8, (3, 6), seed=0)
    model = model_from_config(cfg, 15.0)
    assert model.heterogeneous
    assert analyze_controllability(model, "combined").controllable
