import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tandem.arbitration import OnsetLatch
from tandem.controller import (
    ControllerConfig,
    GainSchedule,
    MotorCommand,
    PidGains,
    PidState,
    compliance_reference,
    guidance_reference,
    motor_command,
    on_mode_transition,
    pid_step,
    select_gains,
)
from tandem.errors import ConfigError, MissingLatch, NonFiniteInput
from tandem.kinematics import GearTrain

DT = 0.002


@pytest.mark.parametrize("q, onset, now, ratio, expected", [
    (0.0, 7.0, 7.0, 0.1, 0.0),
    (100.0, 20.0, 50.0, 0.5, 160.0),
    (-40.0, 0.0, -10.0, 0.1, -140.0),
])
def test_guidance_reference_examples(q, onset, now, ratio, expected):
    got = guidance_reference(OnsetLatch(q, onset), now, GearTrain(1.0, ratio))
    assert got == pytest.approx(expected, rel=1e-12)


def test_guidance_reference_requires_latch():
    with pytest.raises(MissingLatch):
        guidance_reference(None, 1.0, GearTrain())


@given(st.floats(-1e5, 1e5), st.floats(-1e5, 1e5), st.floats(-1e3, 1e3),
       st.sampled_from([0.1, 0.5, 0.25, 2.0]))
def test_guidance_reference_affine(q, onset, d, ratio):
    gear = GearTrain(1.0, ratio)
    latch = OnsetLatch(q, onset)
    assert guidance_reference(latch, onset, gear) == q
    # slope 1/(g1 g2): evaluate by two points
    y0 = guidance_reference(latch, onset, gear)
    y1 = guidance_reference(latch, onset + d, gear)
    assert y1 - y0 == pytest.approx(d / ratio, rel=1e-9, abs=1e-6)


@pytest.mark.parametrize("x", [0.0, 123.4, -7.25])
def test_compliance_reference_identity(x):
    assert compliance_reference(x) == x


def test_select_gains():
    sched = GainSchedule()
    assert select_gains(0, sched) == PidGains(0.02, 0.001, 0.0)
    assert select_gains(1, sched) == PidGains(5.0, 0.05, 0.5)
    g = PidGains(1, 2, 3)
    same = GainSchedule(g, g)
    assert select_gains(0, same) == select_gains(1, same) == g


def test_gain_validation():
    with pytest.raises(ConfigError):
        PidGains(-1, 0, 0)
    with pytest.raises(ConfigError):
        PidGains(0, float("nan"), 0)


def test_pid_examples():
    _, tau = pid_step(PidState(), 0.0, DT, PidGains(1, 1, 1))
    assert tau == 0.0
    _, tau = pid_step(PidState(), 1.0, DT, PidGains(2, 0, 0))
    assert tau == 2.0
    # unit ramp e = t: after the first step the backward difference is exactly 1
    s = PidState()
    s, _ = pid_step(s, 0.0, DT, PidGains(0, 1, 0))
    s, tau = pid_step(s, DT, DT, PidGains(0, 1, 0))
    assert tau == pytest.approx(1.0, rel=1e-12)


def test_pid_rejects_non_finite():
    with pytest.raises(NonFiniteInput):
        pid_step(PidState(), float("inf"), DT, PidGains(1, 0, 0))
    with pytest.raises(NonFiniteInput):
        pid_step(PidState(), 1.0, float("nan"), PidGains(1, 0, 0))
    with pytest.raises(NonFiniteInput):
        pid_step(PidState(), 1.0, 0.0, PidGains(1, 0, 0))


def test_low_pass_first_step_by_hand():
    fc = 50.0
    alpha = DT / (DT + 1 / (2 * math.pi * fc))
    s, tau = pid_step(PidState(prev_error=0.0), 1.0, DT, PidGains(0, 1, 0), cutoff_hz=fc)
    assert tau == pytest.approx(alpha * 1.0 / DT, rel=1e-12)
    assert 0 < alpha < 1


def test_mode_transition_reset():
    s = PidState(integral=5.0, prev_error=2.0, deriv_filtered=3.0)
    r = on_mode_transition(s)
    assert r.integral == 0.0 and r.prev_error is None and r.deriv_filtered == 0.0
    assert on_mode_transition(r) == r
    # no derivative kick and no integral on the re-seeded step
    r2, tau = pid_step(r, 10.0, DT, PidGains(0, 1, 0))
    assert tau == 0.0
    _, tau_i = pid_step(r, 0.0, DT, PidGains(0, 0, 1))
    assert tau_i == 0.0


errors = st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=200)


@given(errors, st.floats(0.1, 100))
def test_integral_clamp(seq, limit):
    s = PidState(integral_limit=limit)
    for e in seq:
        s, _ = pid_step(s, e, DT, PidGains(0, 0, 1))
        assert abs(s.integral) <= limit


@settings(max_examples=50)
@given(errors, st.floats(0, 10), st.floats(0, 1), st.floats(0, 5))
def test_gain_doubling_doubles_torque(seq, kp, kd, ki):
    g = PidGains(kp, kd, ki)
    a, b = PidState(integral_limit=math.inf), PidState(integral_limit=math.inf)
    for e in seq:
        a, ta = pid_step(a, e, DT, g)
        b, tb = pid_step(b, e, DT, g.scaled(2.0))
        assert tb == pytest.approx(2 * ta, rel=1e-12, abs=1e-300)


@settings(max_examples=50)
@given(errors, st.floats(0.1, 5))
def test_pid_linear_in_error(seq, c):
    g = PidGains(1.3, 0.2, 0.7)
    a, b = PidState(integral_limit=math.inf), PidState(integral_limit=math.inf)
    for e in seq:
        a, ta = pid_step(a, e, DT, g)
        b, tb = pid_step(b, c * e, DT, g)
        assert tb == pytest.approx(c * ta, rel=1e-9, abs=1e-9)


def test_motor_command_modes():
    cfg = ControllerConfig()
    gear = GearTrain(1.0, 0.5)
    pid = cfg.initial_pid_state()
    pid, cmd = motor_command(0, None, 10.0, 5.0, 0.0, pid, DT, cfg, gear)
    assert cmd == MotorCommand(0.0, 5.0, 0)
    pid, cmd = motor_command(1, OnsetLatch(5.0, 10.0), 11.0, 5.0, 0.0, pid, DT, cfg, gear)
    assert cmd.reference == 7.0 and cmd.mode == 1 and cmd.torque > 0


def test_motor_command_clamp_and_feedforward():
    cfg = ControllerConfig(torque_limit=1.0, friction_ff=0.3)
    gear = GearTrain()
    _, cmd = motor_command(1, OnsetLatch(0.0, 0.0), 100.0, 0.0, 0.0, cfg.initial_pid_state(), DT, cfg, gear)
    assert cmd.torque == 1.0
    _, cmd = motor_command(0, None, 0.0, 0.0, -2.0, cfg.initial_pid_state(), DT, cfg, gear)
    assert cmd.torque == pytest.approx(-0.3)


def test_filtered_derivative_tracks_sinusoid():
    # with the filter on the derivative lags but stays bounded
    t = np.arange(0, 2, DT)
    e = np.sin(2 * np.pi * t)
    s = PidState()
    out = []
    for v in e:
        s, tau = pid_step(s, float(v), DT, PidGains(0, 1, 0), cutoff_hz=50.0)
        out.append(tau)
    assert np.max(np.abs(out[100:])) < 2 * np.pi * 1.01
