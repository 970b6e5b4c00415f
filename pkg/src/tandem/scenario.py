"""Declarative scenarios (JSON or TOML) and the scripted input channels.

A scenario fixes everything a run depends on: seed, duration, colon
geometry, every module config, and keyframed scripts for the preceptor's
wheels/enable switch and the trainee's hand torques and push effort.
Unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .arbitration import ArbitrationConfig, EventKind
from .controller import ControllerConfig, GainSchedule, PidGains
from .errors import ConfigError
from .kinematics import EncoderConfig, GearTrain, WheelReading, encoder_read
from .plant import ColonModel, PlantConfig, load_centerline, normal_loop

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class Keyframes:
    """Piecewise-linear signal through ``[(t, value), ...]``, held at both ends."""

    def __init__(self, points, key="keyframes"):
        try:
            pts = [(float(t), float(v)) for t, v in points]
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a list of [t, value] pairs", key=key) from None
        if not pts:
            pts = [(0.0, 0.0)]
        for (t0, _), (t1, _) in zip(pts, pts[1:]):
            if t1 < t0:
                raise ConfigError(f"{key}: keyframe times must be non-decreasing", key=key)
        if not all(math.isfinite(t) and math.isfinite(v) for t, v in pts):
            raise ConfigError(f"{key}: non-finite keyframe", key=key)
        self.points = pts
        self._t = [p[0] for p in pts]

    def at(self, t: float) -> float:
        pts = self.points
        i = bisect.bisect_right(self._t, t)
        if i == 0:
            return pts[0][1]
        if i == len(pts):
            return pts[-1][1]
        (t0, v0), (t1, v1) = pts[i - 1], pts[i]
        if t1 == t0:
            return v1
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)

    def end(self) -> float:
        return self._t[-1]

    def to_list(self):
        return [list(p) for p in self.points]


class StepSchedule:
    """Boolean schedule ``[(t, on), ...]``; the latest entry at or before t wins."""

    def __init__(self, points, key="enable"):
        try:
            pts = [(float(t), bool(v)) for t, v in points]
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a list of [t, bool] pairs", key=key) from None
        if not pts:
            pts = [(0.0, True)]
        self.points = pts
        self._t = [p[0] for p in pts]

    def at(self, t: float) -> bool:
        i = bisect.bisect_right(self._t, t)
        return self.points[max(i - 1, 0)][1]

    def to_list(self):
        return [list(p) for p in self.points]


@dataclass
class Correction:
    """Expert wheel motion added after each occurrence of an event."""

    on: str = EventKind.GUIDANCE_WARNING.value
    delay_s: float = 3.0
    wheel1: Keyframes = field(default_factory=lambda: Keyframes([]))
    wheel2: Keyframes = field(default_factory=lambda: Keyframes([]))


@dataclass
class PreceptorScript:
    wheel1: Keyframes = field(default_factory=lambda: Keyframes([]))
    wheel2: Keyframes = field(default_factory=lambda: Keyframes([]))
    enable: StepSchedule = field(default_factory=lambda: StepSchedule([]))
    corrections: list = field(default_factory=list)


@dataclass
class TraineeScript:
    hand_torque1: Keyframes = field(default_factory=lambda: Keyframes([]))
    hand_torque2: Keyframes = field(default_factory=lambda: Keyframes([]))
    push: Keyframes = field(default_factory=lambda: Keyframes([]))

    def at(self, t: float):
        return (self.hand_torque1.at(t), self.hand_torque2.at(t)), self.push.at(t)


class ScriptSource:
    """Preceptor device driven by a script: true angles -> encoder readings.

    Event-keyed corrections are armed through :meth:`notify`; each matching
    event starts an independent offset profile ``delay_s`` later.
    """

    def __init__(self, script: PreceptorScript, encoder: EncoderConfig):
        self.script = script
        self.encoder = encoder
        self._armed = []  # (start_s, Correction)

    def notify(self, events):
        for e in events:
            kind = e.kind.value if hasattr(e.kind, "value") else str(e.kind)
            for c in self.script.corrections:
                if c.on == kind:
                    self._armed.append((e.t_us / 1e6 + c.delay_s, c))

    def true_angles(self, t: float):
        s = self.script
        w1, w2 = s.wheel1.at(t), s.wheel2.at(t)
        for start, c in self._armed:
            if t >= start:
                w1 += c.wheel1.at(t - start)
                w2 += c.wheel2.at(t - start)
        return w1, w2

    def __call__(self, tick: int, t_us: int):
        t = t_us / 1e6
        w1, w2 = self.true_angles(t)
        reading = WheelReading(encoder_read(w1, self.encoder), encoder_read(w2, self.encoder))
        return reading, self.script.enable.at(t)


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    duration_s: Optional[float] = 10.0
    run_to_completion: bool = False
    max_duration_s: float = 600.0
    colon: ColonModel = field(default_factory=normal_loop)
    colon_ref: str = "normal_loop"
    preceptor: PreceptorScript = field(default_factory=PreceptorScript)
    trainee: TraineeScript = field(default_factory=TraineeScript)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    gears: tuple = (GearTrain(1.0, 0.1), GearTrain(1.0, 0.1))
    arbitration: ArbitrationConfig = field(default_factory=ArbitrationConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    staleness_timeout_us: int = 100_000
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.duration_s is None and not self.run_to_completion:
            raise ConfigError("duration_s is required unless run_to_completion is set", key="duration_s")
        if self.duration_s is not None and not (self.duration_s >= 0 and math.isfinite(self.duration_s)):
            raise ConfigError("duration_s must be finite and >= 0", key="duration_s")
        if not (self.max_duration_s > 0):
            raise ConfigError("max_duration_s must be > 0", key="max_duration_s")
        if self.staleness_timeout_us <= 0:
            raise ConfigError("staleness_timeout_us must be > 0", key="link.staleness_timeout_us")
        self.plant.check_step(self.arbitration.dt)

    @property
    def n_ticks(self) -> int:
        """Tick budget: ceil(duration * rate), or the max duration when running to completion."""
        period = self.arbitration.period_us
        if self.run_to_completion:
            limit = self.max_duration_s if self.duration_s is None else min(self.duration_s, self.max_duration_s)
        else:
            limit = self.duration_s
        return -(-int(round(limit * 1e6)) // period)

    def to_dict(self) -> dict:
        """JSON-compatible snapshot, stored in trace headers."""
        ctrl = self.controller
        return {
            "name": self.name,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "run_to_completion": self.run_to_completion,
            "max_duration_s": self.max_duration_s,
            "colon": self.colon_ref,
            "colon_length_m": self.colon.length,
            "metadata": dict(self.metadata),
            "preceptor": {
                "wheel1": self.preceptor.wheel1.to_list(),
                "wheel2": self.preceptor.wheel2.to_list(),
                "enable": self.preceptor.enable.to_list(),
                "corrections": [
                    {"on": c.on, "delay_s": c.delay_s,
                     "wheel1": c.wheel1.to_list(), "wheel2": c.wheel2.to_list()}
                    for c in self.preceptor.corrections
                ],
            },
            "trainee": {
                "hand_torque1": self.trainee.hand_torque1.to_list(),
                "hand_torque2": self.trainee.hand_torque2.to_list(),
                "push": self.trainee.push.to_list(),
            },
            "encoder": asdict(self.encoder),
            "gears": {"wheel1": [self.gears[0].g1, self.gears[0].g2],
                      "wheel2": [self.gears[1].g1, self.gears[1].g2]},
            "arbitration": asdict(self.arbitration),
            "controller": {
                "compliance": asdict(ctrl.schedule.compliance),
                "guidance": asdict(ctrl.schedule.guidance),
                "integral_limit": ctrl.integral_limit,
                "deriv_cutoff_hz": ctrl.deriv_cutoff_hz,
                "torque_limit": ctrl.torque_limit,
                "friction_ff": ctrl.friction_ff,
            },
            "plant": asdict(self.plant),
            "link": {"staleness_timeout_us": self.staleness_timeout_us},
        }


# -- parsing -------------------------------------------------------------------

_TOP_KEYS = {"name", "seed", "duration_s", "run_to_completion", "max_duration_s", "colon",
             "colon_length_m", "metadata", "preceptor", "trainee", "encoder", "gears",
             "arbitration", "controller", "plant", "link"}


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'scenario'}: expected a table/object", key=path or None)
    for k in d:
        if k not in allowed:
            full = f"{path}.{k}" if path else k
            raise ConfigError(f"unknown key '{full}'", key=full)


def _build(cls, d, path, **extra):
    names = set(cls.__dataclass_fields__) - {"ratio"}
    _check_keys(d, names, path)
    try:
        return cls(**d, **extra)
    except ConfigError as exc:
        key = f"{path}.{exc.key}" if exc.key else path
        raise ConfigError(f"{key}: {exc}", key=key) from None
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}", key=path) from None


def _optional(value):
    """TOML has no null; ``false`` or "off" also mean unset."""
    if value is None or value is False or value == "off":
        return None
    return value


def scenario_from_dict(d: dict, base_dir: Optional[Path] = None) -> Scenario:
    _check_keys(d, _TOP_KEYS, "")
    kw = {}
    for k in ("name", "seed", "duration_s", "run_to_completion", "max_duration_s", "metadata"):
        if k in d:
            kw[k] = d[k]
    if "duration_s" in kw:
        kw["duration_s"] = _optional(kw["duration_s"])
    if not isinstance(kw.get("seed", 0), int) or isinstance(kw.get("seed", 0), bool):
        raise ConfigError("seed must be an integer", key="seed")

    colon_ref = d.get("colon", "normal_loop")
    if colon_ref == "normal_loop":
        colon = normal_loop()
    else:
        p = Path(colon_ref)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        try:
            colon = load_centerline(p)
        except OSError as exc:
            raise ConfigError(f"colon: cannot read {p}: {exc.strerror}", key="colon") from None
    kw["colon"] = colon
    kw["colon_ref"] = colon_ref

    pre = d.get("preceptor", {})
    _check_keys(pre, {"wheel1", "wheel2", "enable", "corrections"}, "preceptor")
    corrections = []
    for n, c in enumerate(pre.get("corrections", [])):
        path = f"preceptor.corrections[{n}]"
        _check_keys(c, {"on", "delay_s", "wheel1", "wheel2"}, path)
        on = c.get("on", EventKind.GUIDANCE_WARNING.value)
        if on not in {e.value for e in EventKind}:
            raise ConfigError(f"{path}.on: unknown event {on!r}", key=f"{path}.on")
        corrections.append(Correction(on, float(c.get("delay_s", 3.0)),
                                      Keyframes(c.get("wheel1", []), f"{path}.wheel1"),
                                      Keyframes(c.get("wheel2", []), f"{path}.wheel2")))
    kw["preceptor"] = PreceptorScript(
        Keyframes(pre.get("wheel1", []), "preceptor.wheel1"),
        Keyframes(pre.get("wheel2", []), "preceptor.wheel2"),
        StepSchedule(pre.get("enable", []), "preceptor.enable"),
        corrections,
    )

    tr = d.get("trainee", {})
    _check_keys(tr, {"hand_torque1", "hand_torque2", "push"}, "trainee")
    kw["trainee"] = TraineeScript(*(Keyframes(tr.get(k, []), f"trainee.{k}")
                                    for k in ("hand_torque1", "hand_torque2", "push")))

    if "encoder" in d:
        kw["encoder"] = _build(EncoderConfig, d["encoder"], "encoder")
    if "gears" in d:
        g = d["gears"]
        _check_keys(g, {"wheel1", "wheel2"}, "gears")
        gears = []
        for w in ("wheel1", "wheel2"):
            pair = g.get(w, [1.0, 0.1])
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ConfigError(f"gears.{w}: expected [g1, g2]", key=f"gears.{w}")
            try:
                gears.append(GearTrain(*pair))
            except ConfigError as exc:
                raise type(exc)(f"gears.{w}: {exc}", key=f"gears.{w}") from None
        kw["gears"] = tuple(gears)
    if "arbitration" in d:
        kw["arbitration"] = _build(ArbitrationConfig, d["arbitration"], "arbitration")
    if "controller" in d:
        c = dict(d["controller"])
        _check_keys(c, {"compliance", "guidance", "integral_limit", "deriv_cutoff_hz",
                        "torque_limit", "friction_ff"}, "controller")
        defaults = GainSchedule()
        sched = GainSchedule(
            _build(PidGains, c.pop("compliance"), "controller.compliance") if "compliance" in c
            else defaults.compliance,
            _build(PidGains, c.pop("guidance"), "controller.guidance") if "guidance" in c
            else defaults.guidance,
        )
        for k in ("deriv_cutoff_hz", "torque_limit"):
            if k in c:
                c[k] = _optional(c[k])
        kw["controller"] = _build(ControllerConfig, c, "controller", schedule=sched)
    if "plant" in d:
        kw["plant"] = _build(PlantConfig, d["plant"], "plant")
    if "link" in d:
        _check_keys(d["link"], {"staleness_timeout_us"}, "link")
        kw["staleness_timeout_us"] = int(d["link"].get("staleness_timeout_us", 100_000))
    try:
        return Scenario(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_scenario(path) -> Scenario:
    """Load a ``.json`` or ``.toml`` scenario file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}", key="scenario") from None
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(raw.decode("utf-8"))
        else:
            data = json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse scenario {path}: {exc}", key="scenario") from None
    return scenario_from_dict(data, base_dir=path.parent)
