import numpy as np
import pytest

from deeplcc.scenarios import (
    PHASE_KIND, FuelModel, FuelReport, RunSummary, VelocityProfile, brake_profile, eudc_like_profile, fuel_rate,
    total_fuel,
)
from deeplcc.vehicle import simulate_closed_loop


def test_fuel_rate_hand_values():
    assert fuel_rate(0.0, 0.0) == pytest.approx(0.444)
    # R = 0.333 + 0.00108 * 225 = 0.576; 0.444 + 0.09 * 0.576 * 15
    assert fuel_rate(15.0, 0.0) == pytest.approx(1.2216, abs=1e-12)
    # R = 0.333 + 0.108 + 1.2 = 1.641; 0.444 + 0.09*1.641*10 + 0.054*1*10
    assert fuel_rate(10.0, 1.0) == pytest.approx(0.444 + 1.4769 + 0.54, abs=1e-12)
    assert fuel_rate(15.0, -2.0) == pytest.approx(0.444)  # R < 0: idle
    assert np.allclose(fuel_rate(np.array([0.0, 15.0]), np.zeros(2)), [0.444, 1.2216])
    assert fuel_rate(15.0, 0.0, FuelModel(idle=0.0, b1=0.0)) == 0.0


def test_steady_cruise_fuel():
    from deeplcc.vehicle import PlatoonConfig
    cfg = PlatoonConfig.heterogeneous(8, (3, 6), seed=0, noise_amplitude=0.0)
    log = simulate_closed_loop(cfg.all_hdv(), None, lambda t: 15.0, 10.05)
    # six vehicles at 15 m/s for 10 s
    assert total_fuel(log) == pytest.approx(6 * 10 * 1.2216, rel=1e-9)


def test_phase_fuel_is_additive(platoon):
    prof = eudc_like_profile()
    log = simulate_closed_loop(platoon.all_hdv(), None, prof, prof.duration, seed=0)
    parts = sum(total_fuel(log, t0=a, t1=b) for _, a, b in prof.phase_windows())
    assert parts == pytest.approx(total_fuel(log), rel=1e-12)


def test_profiles():
    e = eudc_like_profile()
    assert e(0.0) == 15.0 and e(e.duration) == 15.0
    assert [p for p, _, _ in e.phase_windows()] == ["1", "2", "3", "4"]
    assert set(PHASE_KIND.values()) == {"braking", "accelerating"}
    assert max(e(t) for t in np.arange(0, e.duration, 0.5)) == 25.0
    b = brake_profile()
    assert b(0) == 15.0 and b(b.duration) == 15.0 and 20 <= b.duration <= 30
    assert b.acceleration(5.0) == pytest.approx(-5.0) and b.acceleration(10.0) == pytest.approx(2.0)
    assert min(b(t) for t in np.arange(0, b.duration, 0.05)) == pytest.approx(5.0)


def test_profile_builder_rejects_bad_segments():
    with pytest.raises(ValueError):
        VelocityProfile(10.0).hold(-1)
    with pytest.raises(ValueError):
        VelocityProfile(10.0).ramp(12.0, 0.0)


def test_report_reductions_and_table():
    runs = [RunSummary("hdv", 1, True, {"a": 100.0, "total": 200.0}, None, 0, 0, 0, 0),
            RunSummary("deeplcc", 1, True, {"a": 90.0, "total": 190.0}, None, 0, 0, 0, 0),
            RunSummary("deeplcc", 2, False, {"a": 0.0, "total": 0.0}, "collision", 0, 0, 0, 0)]
    rep = FuelReport(["a"], runs)
    assert rep.reductions("deeplcc") == pytest.approx({"a": 10.0, "total": 5.0})
    assert "saved %" in rep.table()
    assert '"reduction_pct"' in rep.to_json()
