"""Reference generation and the mode-scheduled PID.

In guidance mode each motor tracks ``q* + dtheta / (g1*g2)``, where ``q*``
and the wheel angle were latched at motion onset. In compliance mode the
reference is the measured motor position, so the error is zero and the motor
stays transparent to the trainee's hand.

Errors are motor-space degrees; torques are N*mm in simulation units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

from .arbitration import OnsetLatch
from .errors import ConfigError, MissingLatch, NonFiniteInput
from .kinematics import GearTrain, wheel_delta_to_motor_delta


@dataclass(frozen=True)
class PidGains:
    kp: float
    kd: float
    ki: float

    def __post_init__(self):
        for name in ("kp", "kd", "ki"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"gain {name} must be finite and >= 0, got {value!r}", key=name)

    def scaled(self, factor: float) -> "PidGains":
        return PidGains(self.kp * factor, self.kd * factor, self.ki * factor)


@dataclass(frozen=True)
class GainSchedule:
    compliance: PidGains = PidGains(kp=0.02, kd=0.001, ki=0.0)
    guidance: PidGains = PidGains(kp=5.0, kd=0.05, ki=0.5)


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    # None means "re-seed from the next error" (no derivative kick)
    prev_error: Optional[float] = 0.0
    deriv_filtered: float = 0.0
    integral_limit: float = 50.0


class MotorCommand(NamedTuple):
    torque: float
    reference: float
    mode: int


@dataclass(frozen=True)
class ControllerConfig:
    schedule: GainSchedule = field(default_factory=GainSchedule)
    integral_limit: float = 50.0
    deriv_cutoff_hz: Optional[float] = 50.0
    torque_limit: Optional[float] = None
    friction_ff: float = 0.0

    def __post_init__(self):
        if not (self.integral_limit >= 0):
            raise ConfigError("integral_limit must be >= 0", key="integral_limit")
        if self.deriv_cutoff_hz is not None and not (self.deriv_cutoff_hz > 0):
            raise ConfigError("deriv_cutoff_hz must be positive or null", key="deriv_cutoff_hz")
        if self.torque_limit is not None and not (self.torque_limit > 0):
            raise ConfigError("torque_limit must be positive or null", key="torque_limit")
        if not math.isfinite(self.friction_ff):
            raise ConfigError("friction_ff must be finite", key="friction_ff")

    def initial_pid_state(self) -> PidState:
        return PidState(integral_limit=self.integral_limit)


def guidance_reference(latch: Optional[OnsetLatch], theta_now: float, gear: GearTrain) -> float:
    if latch is None:
        raise MissingLatch("guidance reference requested without an onset latch")
    return latch.q_star + wheel_delta_to_motor_delta(theta_now - latch.theta_onset, gear)


def compliance_reference(measured_motor_pos: float) -> float:
    return measured_motor_pos


def select_gains(sigma: int, schedule: GainSchedule) -> PidGains:
    return schedule.guidance if sigma == 1 else schedule.compliance


def pid_step(state: PidState, error: float, dt: float, gains: PidGains, *, cutoff_hz: Optional[float] = None):
    """One PID update; returns ``(state', torque)``.

    Rectangular integration with clamping anti-windup, backward-difference
    derivative with an optional first-order low-pass (``cutoff_hz=None``
    disables it).
    """
    if not math.isfinite(error):
        raise NonFiniteInput(f"non-finite error {error!r}")
    if not (math.isfinite(dt) and dt > 0):
        raise NonFiniteInput(f"invalid dt {dt!r}")

    lim = state.integral_limit
    integral = min(max(state.integral + error * dt, -lim), lim)

    if state.prev_error is None:
        raw = 0.0
    else:
        raw = (error - state.prev_error) / dt
    if cutoff_hz is None:
        deriv = raw
    else:
        alpha = dt / (dt + 1.0 / (2.0 * math.pi * cutoff_hz))
        deriv = state.deriv_filtered + alpha * (raw - state.deriv_filtered)

    torque = gains.kp * error + gains.kd * deriv + gains.ki * integral
    return PidState(integral, error, deriv, lim), torque


def on_mode_transition(state: PidState) -> PidState:
    return replace(state, integral=0.0, prev_error=None, deriv_filtered=0.0)


def motor_command(
    sigma: int,
    latch: Optional[OnsetLatch],
    theta_now: float,
    motor_pos: float,
    motor_vel: float,
    pid: PidState,
    dt: float,
    cfg: ControllerConfig,
    gear: GearTrain,
):
    """Reference + PID for one motor. Returns ``(pid', MotorCommand)``."""
    if sigma == 1:
        ref = guidance_reference(latch, theta_now, gear)
    else:
        ref = compliance_reference(motor_pos)
    gains = select_gains(sigma, cfg.schedule)
    pid, torque = pid_step(pid, ref - motor_pos, dt, gains, cutoff_hz=cfg.deriv_cutoff_hz)
    if sigma == 0 and cfg.friction_ff and motor_vel:
        torque += math.copysign(cfg.friction_ff, motor_vel)
    if cfg.torque_limit is not None:
        torque = min(max(torque, -cfg.torque_limit), cfg.torque_limit)
    return pid, MotorCommand(torque, ref, sigma)
