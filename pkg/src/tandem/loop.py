"""Deterministic fixed-rate control loop.

Every tick runs the same stages in the same order::

    ingest -> arbitrate -> reference -> pid -> plant -> trigger-check -> record

Time is virtual: tick ``k`` happens at ``k * period_us`` microseconds, with
no dependence on the wall clock unless pacing is requested for a live link.
References are computed from the arbitration result of the same tick.
"""

from __future__ import annotations

import logging
import time
from typing import Callable, Optional

import numpy as np

from .arbitration import ArbitrationState, arbitrate, update_stall
from .controller import motor_command, on_mode_transition
from .errors import TandemError, TickError
from .kinematics import WheelReading
from .netlink import LinkStatus, staleness_check
from .plant import advance, initial_state, plant_step, tracker_sample
from .scenario import Scenario, ScriptSource
from .session import Outcome, SessionTrace, TickRecord, TraceHeader

log = logging.getLogger(__name__)

PIPELINE = ("ingest", "arbitrate", "reference", "pid", "plant", "trigger-check", "record")


class LinkSource:
    """Ingest stage for the tethered loop: hold-last frame, staleness gating."""

    def __init__(self, endpoint):
        self.endpoint = endpoint
        self._last = WheelReading(0.0, 0.0)
        self.degraded_ticks = 0

    def notify(self, events):
        notify = getattr(self.endpoint, "notify", None)
        if notify is not None:
            notify(events)

    def __call__(self, tick: int, t_us: int):
        link = self.endpoint.snapshot(tick, t_us)
        if link.last_frame is not None:
            self._last = link.last_frame.reading
        fresh = staleness_check(link, t_us) is LinkStatus.FRESH
        if not fresh:
            self.degraded_ticks += 1
        enable = fresh and link.last_frame is not None and link.last_frame.enable
        return self._last, enable


class Simulation:
    """One run of a scenario, advanced a tick at a time."""

    def __init__(self, scenario: Scenario, source=None):
        self.scenario = scenario
        self.source = source if source is not None else ScriptSource(scenario.preceptor, scenario.encoder)
        self._notify = getattr(self.source, "notify", None)
        self.period_us = scenario.arbitration.period_us
        self.dt = scenario.arbitration.dt
        self.arb = ArbitrationState()
        self.pids = [scenario.controller.initial_pid_state() for _ in range(2)]
        self.plant = initial_state(scenario.colon, scenario.plant)
        self.rng = np.random.default_rng(scenario.seed)
        self.trace = SessionTrace(TraceHeader(
            loop_rate_hz=scenario.arbitration.loop_rate_hz,
            scenario=scenario.name,
            seed=scenario.seed,
            config=scenario.to_dict(),
        ))
        self.tick = 0
        self.completed_at: Optional[int] = None

    @property
    def done(self) -> bool:
        return self.completed_at is not None or self.tick >= self.scenario.n_ticks

    def step(self):
        """Run one tick; returns ``(TickRecord, events)``."""
        k = self.tick
        try:
            return self._step(k)
        except TandemError as exc:
            raise TickError(k, exc) from exc

    def _step(self, k: int):
        sc = self.scenario
        t_us = k * self.period_us
        t = t_us / 1e6
        plant = self.plant

        # ingest
        reading, enable = self.source(k, t_us)

        # arbitrate
        prev_sigma = self.arb.sigma
        self.arb, sigma, events = arbitrate(self.arb, reading, plant.motor_pos, sc.arbitration,
                                            tick=k, enable=enable)
        if sigma != prev_sigma:
            self.pids = [on_mode_transition(p) for p in self.pids]

        # reference + pid
        cmds = []
        for i in range(2):
            self.pids[i], cmd = motor_command(
                sigma, self.arb.latches[i], reading[i], plant.motor_pos[i], plant.motor_vel[i],
                self.pids[i], self.dt, sc.controller, sc.gears[i],
            )
            cmds.append(cmd)

        # plant
        hand, push = sc.trainee.at(t)
        plant = plant_step(plant, (cmds[0].torque, cmds[1].torque), hand, self.dt, sc.plant, sc.gears)
        plant, depth_delta = advance(plant, push, self.dt, sc.colon, sc.plant)
        self.plant = plant

        # trigger-check
        self.arb, warnings = update_stall(self.arb, depth_delta, sc.arbitration, tick=k)
        events.extend(warnings)

        # record
        sample = tracker_sample(plant, sc.colon, self.rng, sc.plant)
        record = TickRecord(
            tick_index=k,
            t_us=t_us,
            sigma=sigma,
            preceptor=(float(reading[0]), float(reading[1])),
            trainee=plant.wheels,
            motor=plant.motor_pos,
            reference=(cmds[0].reference, cmds[1].reference),
            torque=(cmds[0].torque, cmds[1].torque),
            insertion_depth=plant.insertion_depth,
            tracker=tuple(tuple(row) for row in sample.tolist()),
        )
        self.trace.record_tick(record)
        for e in events:
            self.trace.record_event(e)
        if events and self._notify is not None:
            self._notify(events)
        if self.completed_at is None and plant.insertion_depth >= sc.colon.length:
            self.completed_at = k
            self.trace.outcome = Outcome(True, t)
            log.info("completed at tick %d (t=%.3f s)", k, t)
        self.tick = k + 1
        return record, events


def run(scenario: Scenario, on_tick: Optional[Callable] = None) -> SessionTrace:
    """Execute a scripted scenario and return its complete trace."""
    sim = Simulation(scenario)
    while not sim.done:
        record, events = sim.step()
        if on_tick is not None:
            on_tick(record, events)
    return sim.trace


def run_tethered(scenario: Scenario, endpoint, *, pace: bool = False,
                 on_tick: Optional[Callable] = None, should_stop: Optional[Callable] = None,
                 t0_ns: Optional[int] = None) -> SessionTrace:
    """Like :func:`run`, but preceptor input comes from a link endpoint.

    ``endpoint.snapshot(tick, now_us)`` must return the receiver's current
    LinkState. With ``pace=True`` each tick waits for its wall-clock slot
    (for live UDP operation); otherwise time is purely virtual.
    """
    src = LinkSource(endpoint)
    sim = Simulation(scenario, source=src)
    t0 = time.monotonic_ns() if t0_ns is None else t0_ns
    while not sim.done:
        if should_stop is not None and should_stop():
            break
        if pace:
            target = t0 + sim.tick * sim.period_us * 1000
            delay = (target - time.monotonic_ns()) / 1e9
            if delay > 0:
                time.sleep(delay)
        record, events = sim.step()
        if on_tick is not None:
            on_tick(record, events)
    if src.degraded_ticks:
        log.info("link degraded for %d of %d ticks", src.degraded_ticks, sim.tick)
    return sim.trace
