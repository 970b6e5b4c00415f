"""Mode arbitration between active compliance and preceptor guidance.

One call to :func:`arbitrate` per control cycle decides the mode flag
``sigma`` (0 = compliance, 1 = guidance). Guidance starts on the first cycle
in which either preceptor wheel moves by strictly more than the onset
threshold while the enable switch is on; both wheels' onset latches are
captured on that cycle. Guidance ends after ``exit_dwell_cycles`` consecutive
quiet cycles or as soon as the enable switch drops.

The no-advancement trigger (:func:`guidance_trigger_check`) is independent of
the wheel logic and only emits the warning that precedes an expert takeover.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .errors import ConfigError, OutOfOrderTick
from .kinematics import WheelReading


class EventKind(str, enum.Enum):
    GUIDANCE_WARNING = "GuidanceWarning"
    GUIDANCE_START = "GuidanceStart"
    GUIDANCE_END = "GuidanceEnd"


class ArbitrationEvent(NamedTuple):
    kind: EventKind
    t_us: int
    wheel: Optional[int] = None

    @property
    def t(self) -> float:
        return self.t_us / 1e6


class OnsetLatch(NamedTuple):
    """Motor position and wheel angle captured when guidance began."""

    q_star: float
    theta_onset: float


@dataclass(frozen=True)
class ArbitrationConfig:
    onset_threshold_deg: float = 0.02
    loop_rate_hz: float = 500.0
    exit_dwell_cycles: int = 125
    stall_window_s: float = 3.0
    warning_lead_s: float = 3.0
    advancement_epsilon_m: float = 0.001

    def __post_init__(self):
        for name in (
            "onset_threshold_deg",
            "loop_rate_hz",
            "stall_window_s",
            "warning_lead_s",
            "advancement_epsilon_m",
        ):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {value!r}", key=name)
        if isinstance(self.exit_dwell_cycles, bool) or not isinstance(self.exit_dwell_cycles, int):
            raise ConfigError("exit_dwell_cycles must be an integer", key="exit_dwell_cycles")
        if self.exit_dwell_cycles < 1:
            raise ConfigError("exit_dwell_cycles must be >= 1", key="exit_dwell_cycles")
        period_us = 1e6 / self.loop_rate_hz
        if period_us != round(period_us):
            raise ConfigError(
                "loop_rate_hz must divide one second into whole microseconds", key="loop_rate_hz"
            )

    @property
    def period_us(self) -> int:
        return int(round(1e6 / self.loop_rate_hz))

    @property
    def dt(self) -> float:
        return self.period_us / 1e6


class ArbitrationState(NamedTuple):
    sigma: int = 0
    enable_switch: bool = False
    latches: tuple = (None, None)
    quiet_cycles: int = 0
    prev_wheel_angles: Optional[WheelReading] = None
    stall_clock_s: float = 0.0
    warning_active: bool = False
    last_tick: int = -1


def detect_motion_onset(prev: float, curr: float, cfg: ArbitrationConfig) -> bool:
    return abs(curr - prev) > cfg.onset_threshold_deg


def arbitrate(
    state: ArbitrationState,
    wheels: WheelReading,
    motor_pos,
    cfg: ArbitrationConfig,
    *,
    tick: int,
    enable: bool,
):
    """Advance the mode state machine by one cycle.

    Returns ``(state', sigma, events)``. ``tick`` must be strictly increasing
    across calls; ``enable`` is the switch position for this cycle.
    """
    if tick <= state.last_tick:
        raise OutOfOrderTick(f"tick {tick} after tick {state.last_tick}")
    t_us = tick * cfg.period_us
    prev = state.prev_wheel_angles
    if prev is None:
        moving = (False, False)
    else:
        thr = cfg.onset_threshold_deg
        moving = (abs(wheels[0] - prev[0]) > thr, abs(wheels[1] - prev[1]) > thr)

    events = []
    sigma = state.sigma
    latches = state.latches
    quiet = state.quiet_cycles

    if sigma == 0:
        if enable and any(moving):
            sigma = 1
            # the latch holds the angle from before the onset cycle so the
            # onset delta itself is not dropped from the guidance reference
            base = prev if prev is not None else wheels
            latches = tuple(OnsetLatch(float(q), float(th)) for q, th in zip(motor_pos, base))
            quiet = 0
            first = next(i for i, m in enumerate(moving) if m)
            events.append(ArbitrationEvent(EventKind.GUIDANCE_START, t_us, first))
    else:
        if not enable:
            quiet = cfg.exit_dwell_cycles
        elif any(moving):
            quiet = 0
        else:
            quiet += 1
        if quiet >= cfg.exit_dwell_cycles:
            sigma = 0
            latches = (None, None)
            quiet = 0
            events.append(ArbitrationEvent(EventKind.GUIDANCE_END, t_us))

    new_state = ArbitrationState(sigma, bool(enable), latches, quiet, WheelReading(*wheels),
                                 state.stall_clock_s, state.warning_active, tick)
    return new_state, sigma, events


def guidance_trigger_check(stall_clock: float, advancement_delta: float, dt: float, cfg: ArbitrationConfig):
    """Accumulate the no-advancement clock.

    Forward progress larger than ``advancement_epsilon_m * dt`` (a minimum
    insertion speed) resets the clock. Returns ``(stall_clock', warning)``
    where ``warning`` is ``True`` on the cycle the clock first reaches the
    stall window. The clock is kept on an integer-microsecond grid so that
    the window is reached on an exact cycle.
    """
    if advancement_delta > cfg.advancement_epsilon_m * dt:
        return 0.0, False
    new_clock = round((stall_clock + dt) * 1e6) / 1e6
    crossed = stall_clock < cfg.stall_window_s <= new_clock
    return new_clock, crossed


def update_stall(state: ArbitrationState, advancement_delta: float, cfg: ArbitrationConfig, *, tick: int):
    """Loop-side wrapper: runs the trigger check and emits the warning event.

    The stall clock is held at zero while guidance is active; the expert is
    driving and warnings would break event alternation.
    """
    if state.sigma == 1:
        return state._replace(stall_clock_s=0.0, warning_active=False), []
    clock, crossed = guidance_trigger_check(state.stall_clock_s, advancement_delta, cfg.dt, cfg)
    events = []
    if crossed:
        events.append(ArbitrationEvent(EventKind.GUIDANCE_WARNING, tick * cfg.period_us))
    warning_active = (state.warning_active or crossed) and clock > 0.0
    return state._replace(stall_clock_s=clock, warning_active=warning_active), events
