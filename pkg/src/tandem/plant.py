"""Simulated follower: RMD motors driving the trainee's control wheels.

This is invented scaffolding, not a physical model of any device. Each motor
is a damped rotational inertia with Coulomb friction integrated by
semi-implicit Euler in motor degrees; the trainee wheel is the motor angle
through the gear train. The scope tip is a kinematic map from wheel angles to
a deflected tangent at the current insertion depth along a colon centerline.

Units: motor/wheel angles in degrees, torques in N*mm, lengths in meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DepthOutOfRange, NonFiniteTorque
from .kinematics import GearTrain

ARTICULATION_LENGTH_M = 0.10
TRAILING_SENSOR_OFFSETS_M = (0.10, 0.20, 0.30)
N_SENSORS = 4


@dataclass(frozen=True)
class PlantConfig:
    inertia: float = 1.25e-3  # N*mm*s^2/deg, per motor
    damping: float = 0.1  # N*mm*s/deg
    static_friction: float = 0.5  # N*mm
    wheel_angle_limit: float = 180.0  # +/- deg at the wheel
    tip_gain: float = 1.35  # tip deg per wheel deg
    insertion_speed_max: float = 0.05  # m/s
    alignment_stall_threshold: float = 0.5  # cosine
    tracker_noise_std: float = 0.001  # m
    lookahead_m: float = 0.0  # centerline tangent used for alignment is taken this far ahead

    def __post_init__(self):
        if not (math.isfinite(self.inertia) and self.inertia > 0):
            raise ConfigError("inertia must be > 0", key="inertia")
        for name in ("damping", "static_friction", "tracker_noise_std", "lookahead_m"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be finite and >= 0", key=name)
        for name in ("wheel_angle_limit", "tip_gain", "insertion_speed_max"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be finite and > 0", key=name)
        if not -1.0 <= self.alignment_stall_threshold <= 1.0:
            raise ConfigError("alignment_stall_threshold must be a cosine in [-1, 1]",
                              key="alignment_stall_threshold")

    def check_step(self, dt: float):
        """Explicit damping is only monotone (no sign flip) when damping*dt/inertia < 1."""
        if self.damping * dt / self.inertia >= 1.0:
            raise ConfigError(
                f"damping*dt/inertia = {self.damping * dt / self.inertia:.3g} >= 1; "
                "integration would not be passive",
                key="damping",
            )


@dataclass(frozen=True)
class PlantState:
    motor_pos: tuple = (0.0, 0.0)
    motor_vel: tuple = (0.0, 0.0)
    wheels: tuple = (0.0, 0.0)
    insertion_depth: float = 0.0
    tip_position: tuple = (0.0, 0.0, 0.0)
    tip_tangent: tuple = (1.0, 0.0, 0.0)


class ColonModel:
    """Arc-length parameterized polyline centerline."""

    def __init__(self, centerline, name: str = "custom"):
        pts = np.asarray(centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ConfigError("centerline must be an (N, 3) array of points", key="colon")
        if len(pts) < 2:
            raise ConfigError("centerline needs at least 2 points", key="colon")
        if not np.all(np.isfinite(pts)):
            raise ConfigError("centerline contains non-finite coordinates", key="colon")
        seg = np.diff(pts, axis=0)
        seg_len = np.sqrt(np.sum(seg * seg, axis=1))
        if np.any(seg_len == 0.0):
            bad = int(np.flatnonzero(seg_len == 0.0)[0])
            raise ConfigError(f"centerline points {bad} and {bad + 1} coincide", key="colon")
        self.name = name
        self.points = pts
        self._seg_dir = seg / seg_len[:, None]
        self._s = np.concatenate(([0.0], np.cumsum(seg_len)))
        self.length = float(self._s[-1])
        self._up, self._left = _frames(self._seg_dir)

    def __repr__(self):
        return f"ColonModel({self.name!r}, {len(self.points)} points, {self.length:.4f} m)"

    def _segment(self, s: float) -> int:
        i = int(np.searchsorted(self._s, s, side="right")) - 1
        return min(max(i, 0), len(self._seg_dir) - 1)

    def point_at(self, s: float) -> np.ndarray:
        i = self._segment(s)
        return self.points[i] + (s - self._s[i]) * self._seg_dir[i]

    def tangent_at(self, s: float) -> np.ndarray:
        return self._seg_dir[self._segment(s)]

    def frame_at(self, s: float):
        """(tangent, up, left) orthonormal frame of the segment at arc length s."""
        i = self._segment(s)
        return self._seg_dir[i], self._up[i], self._left[i]

    def bounds(self):
        return self.points.min(axis=0), self.points.max(axis=0)


def normal_loop(step_m: float = 0.005) -> ColonModel:
    """Built-in synthetic "normal loop" centerline, 1.6 m long.

    A straight rectum segment, a planar S-curve, one 270 degree loop that
    climbs 8 cm so it does not self-intersect, then a straight run sized so
    the total polyline length is exactly 1.6 m.
    """
    pts = [np.zeros(3)]
    heading = 0.0
    pos = np.zeros(3)

    def straight(length):
        nonlocal pos
        n = max(1, int(math.ceil(length / step_m)))
        d = np.array([math.cos(heading), math.sin(heading), 0.0])
        for k in range(1, n + 1):
            pts.append(pos + d * (length * k / n))
        pos = pts[-1]

    def arc(radius, turn_rad, climb=0.0):
        nonlocal pos, heading
        n = max(2, int(math.ceil(abs(turn_rad) * radius / step_m)))
        sign = 1.0 if turn_rad > 0 else -1.0
        # center of curvature on the turning side
        cx = pos[0] - sign * radius * math.sin(heading)
        cy = pos[1] + sign * radius * math.cos(heading)
        z0 = pos[2]
        for k in range(1, n + 1):
            h = heading + turn_rad * k / n
            pts.append(np.array([
                cx + sign * radius * math.sin(h),
                cy - sign * radius * math.cos(h),
                z0 + climb * k / n,
            ]))
        heading += turn_rad
        pos = pts[-1]

    straight(0.25)
    arc(0.12, math.pi / 2)
    arc(0.12, -math.pi / 2)
    arc(0.10, 1.5 * math.pi, climb=0.08)
    partial = ColonModel(np.array(pts)).length
    straight(1.6 - partial)
    return ColonModel(np.array(pts), name="normal_loop")


def load_centerline(path) -> ColonModel:
    """Read a plain-text polyline: one ``x y z`` triple (meters) per line.

    ``#`` starts a comment; blank lines are ignored.
    """
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ConfigError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}", key="colon")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric coordinate", key="colon") from None
    return ColonModel(np.array(rows).reshape(-1, 3), name=path.stem)


def plant_step(state: PlantState, motor_torques, hand_torques, dt: float, cfg: PlantConfig,
               gears: Sequence[GearTrain]) -> PlantState:
    """Integrate both motors by one step (semi-implicit Euler).

    Coulomb friction opposes the current velocity (or the applied torque
    when at rest) and is not allowed to reverse the motion on its own, so a
    stuck wheel stays stuck while |torque| <= static_friction. A wheel that
    reaches its angle limit is clamped there with zero velocity.
    """
    pos_out, vel_out, wheel_out = [], [], []
    fric_dv = dt * cfg.static_friction / cfg.inertia
    for i in range(2):
        tau = motor_torques[i] + hand_torques[i]
        if not math.isfinite(tau):
            raise NonFiniteTorque(f"motor {i + 1}: non-finite torque {tau!r}")
        vel = state.motor_vel[i]
        v_free = vel + dt * (tau - cfg.damping * vel) / cfg.inertia
        direction = (vel > 0) - (vel < 0) if vel != 0.0 else (tau > 0) - (tau < 0)
        if direction and fric_dv:
            v_new = v_free - direction * fric_dv
            if v_new * direction < 0.0 <= v_free * direction:
                v_new = 0.0
        else:
            v_new = v_free
        pos = state.motor_pos[i] + dt * v_new
        ratio = gears[i].ratio
        wheel = pos * ratio
        lim = cfg.wheel_angle_limit
        if wheel > lim or wheel < -lim:
            wheel = lim if wheel > 0 else -lim
            pos = wheel / ratio
            v_new = 0.0
        pos_out.append(pos)
        vel_out.append(v_new)
        wheel_out.append(wheel)
    return replace(state, motor_pos=tuple(pos_out), motor_vel=tuple(vel_out), wheels=tuple(wheel_out))


def _frames(tangents: np.ndarray):
    """Up and left unit vectors completing a right-handed frame with each tangent.

    "Up" is world +z projected off the tangent (world +y where the tangent is
    within ~2.6 deg of vertical); left = up x tangent.
    """
    ref = np.tile([0.0, 0.0, 1.0], (len(tangents), 1))
    vertical = np.abs(tangents[:, 2]) > 0.999
    ref[vertical] = [0.0, 1.0, 0.0]
    up = ref - np.sum(tangents * ref, axis=1)[:, None] * tangents
    up /= np.linalg.norm(up, axis=1)[:, None]
    left = np.cross(up, tangents)
    return up, left


def deflect(tangent, up, left, up_deg: float, left_deg: float) -> np.ndarray:
    """Rotate ``tangent`` toward ``up`` by ``up_deg``, then toward ``left`` by ``left_deg``."""
    a1 = math.radians(up_deg)
    a2 = math.radians(left_deg)
    c2 = math.cos(a2)
    return (math.cos(a1) * c2) * tangent + (math.sin(a1) * c2) * up + math.sin(a2) * left


def tip_pose(wheel_angles, insertion_depth: float, colon: ColonModel, cfg: PlantConfig):
    """Tip position and unit tangent for the given wheels and depth."""
    if not 0.0 <= insertion_depth <= colon.length:
        raise DepthOutOfRange(f"insertion depth {insertion_depth} outside [0, {colon.length}]")
    base = colon.point_at(insertion_depth)
    t, up, left = colon.frame_at(insertion_depth)
    lim = 180.0 * cfg.tip_gain
    a1 = min(max(cfg.tip_gain * wheel_angles[0], -lim), lim)
    a2 = min(max(cfg.tip_gain * wheel_angles[1], -lim), lim)
    tip_tangent = deflect(t, up, left, a1, a2)
    chord = deflect(t, up, left, 0.5 * a1, 0.5 * a2)
    return base + ARTICULATION_LENGTH_M * chord, tip_tangent


def advancement_step(tip_tangent, centerline_tangent, push_effort: float, dt: float, cfg: PlantConfig) -> float:
    """Forward depth gained this cycle; zero when the tip points into the wall."""
    alignment = float(np.dot(tip_tangent, centerline_tangent))
    if alignment < cfg.alignment_stall_threshold:
        return 0.0
    push = min(max(push_effort, 0.0), 1.0)
    return push * cfg.insertion_speed_max * dt * max(0.0, alignment)


def advance(state: PlantState, push_effort: float, dt: float, colon: ColonModel, cfg: PlantConfig):
    """Move along the centerline and refresh the tip pose.

    Returns ``(state', depth_delta)``; depth saturates at the centerline end.
    """
    _, tip_t = tip_pose(state.wheels, state.insertion_depth, colon, cfg)
    ahead = min(state.insertion_depth + cfg.lookahead_m, colon.length)
    delta = advancement_step(tip_t, colon.tangent_at(ahead), push_effort, dt, cfg)
    depth = min(state.insertion_depth + delta, colon.length)
    pos, tan = tip_pose(state.wheels, depth, colon, cfg)
    new = replace(state, insertion_depth=depth, tip_position=tuple(pos.tolist()),
                  tip_tangent=tuple(tan.tolist()))
    return new, depth - state.insertion_depth


def initial_state(colon: ColonModel, cfg: PlantConfig) -> PlantState:
    pos, tan = tip_pose((0.0, 0.0), 0.0, colon, cfg)
    return PlantState(tip_position=tuple(pos.tolist()), tip_tangent=tuple(tan.tolist()))


def tracker_sample(state: PlantState, colon: ColonModel, rng: np.random.Generator, cfg: PlantConfig):
    """Positions of the 4 magnetic sensors, shape (4, 3).

    Sensor 0 sits on the tip; sensors 1-3 trail it along the centerline by
    10/20/30 cm of insertion depth (clamped at the entry). Noise is drawn for
    every call, even at zero std, so the RNG stream does not depend on it.
    """
    out = np.empty((N_SENSORS, 3))
    out[0] = state.tip_position
    for k, off in enumerate(TRAILING_SENSOR_OFFSETS_M, start=1):
        out[k] = colon.point_at(max(0.0, state.insertion_depth - off))
    noise = rng.normal(0.0, 1.0, size=(N_SENSORS, 3))
    return out + cfg.tracker_noise_std * noise
