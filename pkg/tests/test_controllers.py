import copy
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ri_switch.controllers import (F110_WIRING, ControllerBank, ControllerConfig, ControllerGroup,
                                   DimensionMismatch, DistancePid, MlpLayer, MlpModel,
                                   MlpSteering, PidGains, PidState, bare_controller, brake_linear,
                                   distance_pid, f110_bank, mlp_infer, steer_geometric,
                                   swerve_heuristic)
from ri_switch.vdta import BOTTOM

from conftest import scan

N = 61


def reference_mlp(layers, x):
    """Plain scalar loops; no numpy."""
    h = list(x)
    for w, b, act in layers:
        z = [sum(w[i][j] * h[j] for j in range(len(h))) + b[i] for i in range(len(w))]
        h = [math.tanh(v) if act == "tanh" else max(v, 0.0) if act == "relu" else v for v in z]
    return h


def model_of(layers):
    return MlpModel(tuple(MlpLayer(np.array(w, float), np.array(b, float), act)
                          for w, b, act in layers))


# --------------------------------------------------------------------------
# MLP

def test_identity_layer():
    m = model_of([(np.eye(4), np.zeros(4), "linear")])
    x = np.array([1.0, -2.0, 0.5, 3.0])
    assert np.array_equal(mlp_infer(m, x), x)


def test_two_layer_tanh_against_reference():
    layers = [([[0.5, -1.0], [2.0, 0.25], [-0.75, 0.1]], [0.1, -0.2, 0.0], "tanh"),
              ([[1.0, -0.5, 2.0]], [0.3], "tanh")]
    got = mlp_infer(model_of(layers), [1.0, -1.0])
    assert got == pytest.approx(reference_mlp(layers, [1.0, -1.0]), abs=1e-12)


def test_zero_input_zero_output():
    layers = [([[0.3, -2.0], [1.0, 1.0]], [0.0, 0.0], "tanh"), ([[4.0, -1.0]], [0.0], "tanh")]
    assert mlp_infer(model_of(layers), [0.0, 0.0]) == pytest.approx([0.0])


@given(st.lists(st.floats(-3, 3), min_size=12, max_size=12),
       st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.sampled_from(["tanh", "relu", "linear"]))
def test_mlp_matches_reference(weights, x, act):
    w1 = [weights[0:3], weights[3:6], weights[6:9]]
    layers = [(w1, weights[9:12], act), ([[1.0, -1.0, 0.5]], [0.0], "linear")]
    assert mlp_infer(model_of(layers), x) == pytest.approx(reference_mlp(layers, x), abs=1e-9)


def test_mlp_shape_errors(tmp_path):
    with pytest.raises(DimensionMismatch):
        model_of([(np.ones((2, 3)), np.zeros(2), "tanh"), (np.ones((1, 4)), np.zeros(1), "tanh")])
    with pytest.raises(DimensionMismatch):
        MlpModel(())
    with pytest.raises(ValueError):
        model_of([(np.array([[np.nan]]), np.zeros(1), "tanh")])
    m = model_of([(np.ones((2, 3)), np.zeros(2), "tanh")])
    with pytest.raises(DimensionMismatch):
        mlp_infer(m, [1.0, 2.0])
    with pytest.raises(DimensionMismatch):
        MlpSteering(m)


def test_mlp_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = model_of([(rng.normal(size=(8, N)) * 0.1, np.zeros(8), "tanh"),
                  (rng.normal(size=(1, 8)), np.zeros(1), "tanh")])
    path = tmp_path / "weights.json"
    path.write_text(json.dumps(m.to_dict()))
    cfg = ControllerConfig(mlp_weights=str(path))
    bank = f110_bank(cfg)
    assert isinstance(bank.controllers["steer"], MlpSteering)
    r = rng.uniform(0.5, 5.0, N)
    d = bank.controllers["steer"].step({"R": r, "v": 1.0})["d"]
    assert d == pytest.approx(float(np.clip(mlp_infer(m, r)[0], -1, 1)))


# --------------------------------------------------------------------------
# steering

def test_steer_symmetric_corridor():
    r = np.concatenate([np.linspace(0.8, 3.0, 30), [5.0], np.linspace(3.0, 0.8, 30)])
    assert steer_geometric(r) == 0.0


def test_steer_toward_open_left():
    r = np.concatenate([np.full(30, 1.0), [2.0], np.full(30, 3.0)])
    assert steer_geometric(r) < 0
    assert steer_geometric(r[::-1]) > 0


def test_steer_blocked_centre_breaks_tie():
    r = np.full(N, 5.0)
    r[N // 2] = 0.5
    assert abs(steer_geometric(r)) > 0


def test_steer_reach_clips_far_rays():
    r = np.concatenate([np.full(30, 1.0), [2.0], np.full(30, 20.0)])
    far = steer_geometric(r)
    near = steer_geometric(r, max_range=1.0)
    assert far < 0 and near == 0.0


def test_swerve_examples():
    assert swerve_heuristic(scan(5.0)) == 0.0
    r = scan(5.0)
    r[33] = 0.45  # left of centre
    assert swerve_heuristic(r) == pytest.approx(0.5)
    r = scan(5.0)
    r[27] = 0.45
    assert swerve_heuristic(r) == pytest.approx(-0.5)
    r = scan(5.0)
    r[27] = 0.0
    assert swerve_heuristic(r) == -1.0
    assert swerve_heuristic(r, react_range=0.9, lock_range=0.3) == -1.0
    r = scan(5.0)
    r[N // 2] = 0.3
    assert swerve_heuristic(r) == pytest.approx(-2 / 3)  # tie: pass on the left


def test_swerve_ignores_rays_outside_front():
    r = scan(5.0)
    r[3] = 0.1
    assert swerve_heuristic(r) == 0.0


@given(st.lists(st.floats(0.0, 10.0), min_size=N, max_size=N))
def test_steering_is_bounded(rays):
    assert -1.0 <= steer_geometric(rays, gain=4.0) <= 1.0
    assert -1.0 <= steer_geometric(rays, gain=4.0, max_range=3.5) <= 1.0
    assert -1.0 <= swerve_heuristic(rays) <= 1.0


@given(st.lists(st.floats(0.0, 10.0), min_size=N, max_size=N))
def test_steering_mirror(rays):
    r = np.array(rays)
    a, b = steer_geometric(r), steer_geometric(r[::-1])
    if abs(a) < 1.0 or abs(b) < 1.0:
        if not np.allclose(r[:30].sum(), r[31:].sum()):
            assert a == pytest.approx(-b, abs=1e-12)


# --------------------------------------------------------------------------
# braking

def test_brake_examples():
    assert brake_linear(0.0, 0.05) == 0.0
    assert brake_linear(2.4, 0.05, r_max=4.0) == -4.0
    eps = 1e-4
    a = brake_linear(eps, 0.05)
    assert abs(a * 0.05) <= eps
    assert brake_linear(1.0, 0.05, stop_time=0.5) == -2.0


@given(st.floats(0.0, 3.0), st.floats(0.01, 0.2))
def test_brake_never_reverses(v, dt):
    a = brake_linear(v, dt)
    assert -4.0 <= a <= 0.0
    assert v + a * dt >= -1e-12


# --------------------------------------------------------------------------
# PID

def test_pid_equilibrium():
    g = PidGains()
    _, a = distance_pid(PidState(), g.target_gap, 0.05, g)
    assert a == 0.0


def test_pid_constant_error_closed_form():
    g = PidGains(kp=1.5, ki=0.3, windup=2.0, a_min=-10, a_max=10)
    dt, e = 0.05, 0.25
    st_ = PidState()
    for k in range(1, 400):
        st_, a = distance_pid(st_, g.target_gap + e, dt, g)
        integral = min(g.windup, k * e * dt)
        assert a == pytest.approx(g.kp * e + g.ki * integral)
    assert a == pytest.approx(g.kp * e + g.ki * g.windup)


def test_pid_windup_clamp():
    g = PidGains()
    st_ = PidState()
    for _ in range(2000):
        st_, a = distance_pid(st_, 100.0, 0.05, g)
    assert st_.integral == g.windup
    assert a == g.a_max
    for _ in range(2000):
        st_, a = distance_pid(st_, -100.0, 0.05, g)
    assert st_.integral == -g.windup and a == g.a_min


def test_pid_integral_stays_small_inside_band():
    g = PidGains()
    st_ = PidState()
    for k in range(400):
        gap = 0.6 + 0.6 * ((k * 37) % 100) / 100
        st_, _ = distance_pid(st_, gap, 0.05, g)
        assert abs(st_.integral) <= 0.3 * 0.05 * (k + 1) + 1e-12


def test_pid_derivative_term():
    g = PidGains(kp=0.0, ki=0.0, kd=1.0, a_min=-99, a_max=99)
    s, _ = distance_pid(PidState(), 1.0, 0.1, g)
    _, a = distance_pid(s, 1.5, 0.1, g)
    assert a == pytest.approx(5.0)


# --------------------------------------------------------------------------
# banks

def test_bank_wiring():
    bank = f110_bank()
    outs = bank.step({"R": scan(1.0), "v": 1.0}, (True, True, True))
    assert all(set(y) == {"d", "a"} for y in outs)
    assert outs[0]["a"] == 2.0
    assert outs[1]["a"] == brake_linear(1.0, 0.05)
    assert outs[0]["d"] == outs[2]["d"]


def test_bank_suspension_outputs_bottom_and_skips_controllers():
    bank = f110_bank()
    pid = bank.controllers["pid"]
    outs = bank.step({"R": scan(3.0), "v": 1.0}, (True, False, False))
    assert outs[1] is BOTTOM and outs[2] is BOTTOM
    assert pid.state == PidState()


@pytest.mark.parametrize("k", [1, 5, 50])
def test_suspension_contract(k):
    x0 = {"R": scan(1.0), "v": 1.0}
    x = {"R": scan(0.8), "v": 1.0}
    a, b = f110_bank(), f110_bank()
    for bank in (a, b):
        bank.step(x0, (True, True, True))
        bank.step(x0, (True, True, True))
    for _ in range(k):
        a.step({"R": scan(4.0), "v": 1.0}, (True, False, False))
    assert a.step(x, (True, True, True)) == b.step(x, (True, True, True))


def test_shared_controller_steps_once():
    calls = []

    class Counting:
        def reset(self):
            pass

        def step(self, inputs):
            calls.append(1)
            return {"d": 0.0, "a": 0.0}

    groups = [ControllerGroup("g0", {"d": "c.d", "a": "c.a"}, 0),
              ControllerGroup("g1", {"d": "c", "a": "c"}, 1)]
    bank = ControllerBank({"c": Counting()}, groups)
    bank.step({}, (True, True))
    assert len(calls) == 1


def test_bank_validates_groups():
    with pytest.raises(ValueError):
        ControllerBank({}, [ControllerGroup("g", {"d": "x", "a": "x"}, 0)])
    with pytest.raises(ValueError):
        f110_bank(wiring={**F110_WIRING, "normal": {"d": "steer"}})


def test_copies_share_controllers():
    bank = f110_bank(copies=4)
    assert len(bank.groups) == 12
    assert [g.name for g in bank.groups[:4]] == ["normal", "stopping", "cautious", "normal"]
    assert len(bank.controllers) == 5


def test_bare_controller():
    ctl = bare_controller()
    y = ctl({"R": scan(3.0), "v": 0.0})
    assert y["a"] == 2.0 and -1.0 <= y["d"] <= 1.0


def test_reset_clears_pid():
    bank = f110_bank()
    bank.step({"R": scan(1.0), "v": 1.0}, (False, False, True))
    assert bank.controllers["pid"].state != PidState()
    bank.reset()
    assert bank.controllers["pid"].state == PidState()


@given(st.lists(st.floats(0.01, 10.0), min_size=N, max_size=N), st.floats(0.0, 2.4),
       st.lists(st.booleans(), min_size=3, max_size=3))
def test_bank_outputs_bounded(rays, v, mask):
    cfg = ControllerConfig()
    bank = f110_bank(cfg)
    for y in bank.step({"R": np.array(rays), "v": v}, mask):
        if y is BOTTOM:
            continue
        assert -1.0 <= y["d"] <= 1.0
        assert -max(cfg.r_max, cfg.pid.a_max) <= y["a"] <= cfg.a_max


def test_distance_pid_object_matches_function():
    pid = DistancePid(0.05)
    s = PidState()
    for f in (1.0, 0.9, 1.1, 0.7):
        a = pid.step({"R": scan(f), "v": 1.0})["a"]
        s, b = distance_pid(s, f, 0.05)
        assert a == b
    assert copy.deepcopy(pid).state == s
