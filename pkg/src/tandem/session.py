"""Session traces: per-tick records plus arbitration events, as JSON Lines.

File layout (``*.tandem.jsonl``), one JSON object per line:

* line 1: ``{"kind": "header", ...}``
* per tick: ``{"kind": "tick", ...}`` followed by the events of that tick
  as ``{"kind": "event", ...}``
* last line: ``{"kind": "outcome", ...}``; a file without it is truncated.

Floats are written with ``repr`` precision so a read/write round trip is
bit-exact. Time is integer microseconds everywhere. Field names are frozen in
``docs/schema.md``.
"""

from __future__ import annotations

import io
import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np

from .arbitration import ArbitrationEvent, EventKind
from .errors import CorruptRecord, NonContiguousTick, SchemaMismatch

SCHEMA_VERSION = 1
TRACE_SUFFIX = ".tandem.jsonl"


@dataclass(frozen=True)
class TickRecord:
    tick_index: int
    t_us: int
    sigma: int
    preceptor: tuple  # deg, as seen by the controller
    trainee: tuple  # deg
    motor: tuple  # deg
    reference: tuple  # deg (motor space)
    torque: tuple  # N*mm
    insertion_depth: float  # m
    tracker: tuple  # 4 x (x, y, z) m

    @property
    def t(self) -> float:
        return self.t_us / 1e6


@dataclass(frozen=True)
class TraceHeader:
    loop_rate_hz: float = 500.0
    scenario: str = ""
    seed: int = 0
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def period_us(self) -> int:
        return int(round(1e6 / self.loop_rate_hz))


@dataclass(frozen=True)
class Outcome:
    completed: bool = False
    completion_time_s: Optional[float] = None


class SessionTrace:
    """Ordered tick records and events for one run."""

    def __init__(self, header: Optional[TraceHeader] = None):
        self._header = header if header is not None else TraceHeader()
        self.ticks: List[TickRecord] = []
        self.events: List[ArbitrationEvent] = []
        self.outcome = Outcome()

    @property
    def header(self) -> TraceHeader:
        return self._header

    @header.setter
    def header(self, value: TraceHeader):
        if self.ticks:
            raise ValueError("header is immutable once ticks have been recorded")
        self._header = value

    def __len__(self):
        return len(self.ticks)

    def __eq__(self, other):
        if not isinstance(other, SessionTrace):
            return NotImplemented
        return (self._header == other._header and self.ticks == other.ticks
                and self.events == other.events and self.outcome == other.outcome)

    def __repr__(self):
        return (f"SessionTrace({self._header.scenario!r}, {len(self.ticks)} ticks, "
                f"{len(self.events)} events, {self.outcome})")

    def record_tick(self, record: TickRecord) -> "SessionTrace":
        expected = self.ticks[-1].tick_index + 1 if self.ticks else 0
        if record.tick_index != expected:
            raise NonContiguousTick(f"expected tick {expected}, got {record.tick_index}")
        self.ticks.append(record)
        return self

    def record_event(self, event: ArbitrationEvent) -> "SessionTrace":
        if self.events and event.t_us < self.events[-1].t_us:
            raise ValueError("events must be recorded in time order")
        self.events.append(event)
        return self

    def column(self, name: str) -> np.ndarray:
        """Stack one TickRecord field over all ticks, e.g. ``column("trainee")``."""
        return np.array([getattr(r, name) for r in self.ticks], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t_us for r in self.ticks], dtype=np.int64) / 1e6


# -- serialization -------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _tick_to_json(r: TickRecord) -> dict:
    return {
        "kind": "tick",
        "tick_index": r.tick_index,
        "t_us": r.t_us,
        "sigma": r.sigma,
        "preceptor_deg": list(r.preceptor),
        "trainee_deg": list(r.trainee),
        "motor_deg": list(r.motor),
        "reference_deg": list(r.reference),
        "torque_nmm": list(r.torque),
        "insertion_depth_m": r.insertion_depth,
        "tracker_m": [list(p) for p in r.tracker],
    }


def _tick_from_json(d: dict) -> TickRecord:
    return TickRecord(
        tick_index=d["tick_index"],
        t_us=d["t_us"],
        sigma=d["sigma"],
        preceptor=tuple(d["preceptor_deg"]),
        trainee=tuple(d["trainee_deg"]),
        motor=tuple(d["motor_deg"]),
        reference=tuple(d["reference_deg"]),
        torque=tuple(d["torque_nmm"]),
        insertion_depth=d["insertion_depth_m"],
        tracker=tuple(tuple(p) for p in d["tracker_m"]),
    )


def _event_to_json(e: ArbitrationEvent) -> dict:
    return {"kind": "event", "event": EventKind(e.kind).value, "t_us": e.t_us, "wheel": e.wheel}


class TraceWriter:
    """Streaming writer: header on open, ticks as they happen, outcome on close."""

    def __init__(self, fh, header: TraceHeader):
        self._fh = fh
        self._period = header.period_us
        self._last_tick = -1
        fh.write(_dumps({
            "kind": "header",
            "schema_version": header.schema_version,
            "loop_rate_hz": header.loop_rate_hz,
            "scenario": header.scenario,
            "seed": header.seed,
            "config": header.config,
        }) + "\n")

    def tick(self, record: TickRecord, events=()):
        if record.tick_index != self._last_tick + 1:
            raise NonContiguousTick(f"expected tick {self._last_tick + 1}, got {record.tick_index}")
        self._last_tick = record.tick_index
        self._fh.write(_dumps(_tick_to_json(record)) + "\n")
        for e in events:
            self._fh.write(_dumps(_event_to_json(e)) + "\n")

    def events(self, events):
        for e in events:
            self._fh.write(_dumps(_event_to_json(e)) + "\n")

    def close(self, outcome: Outcome, n_ticks: int, n_events: int):
        self._fh.write(_dumps({
            "kind": "outcome",
            "completed": outcome.completed,
            "completion_time_s": outcome.completion_time_s,
            "ticks": n_ticks,
            "events": n_events,
        }) + "\n")
        self._fh.flush()


@contextmanager
def _open(target, mode):
    if isinstance(target, (str, Path)):
        with open(target, mode, encoding="utf-8", newline="\n") as fh:
            yield fh
    else:
        yield target


def _events_by_tick(trace: SessionTrace):
    """Group events under the tick whose time is the latest not after them."""
    period = trace.header.period_us
    groups = {}
    tail = []
    last = len(trace.ticks) - 1
    for e in trace.events:
        k = e.t_us // period
        if 0 <= k <= last:
            groups.setdefault(k, []).append(e)
        else:
            tail.append(e)
    return groups, tail


def write_trace(trace: SessionTrace, destination) -> None:
    """Serialize ``trace`` to a path or a text stream."""
    groups, tail = _events_by_tick(trace)
    with _open(destination, "w") as fh:
        w = TraceWriter(fh, trace.header)
        for r in trace.ticks:
            w.tick(r, groups.get(r.tick_index, ()))
        w.events(tail)
        w.close(trace.outcome, len(trace.ticks), len(trace.events))


def dumps_trace(trace: SessionTrace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


def read_trace(source) -> SessionTrace:
    """Parse a trace from a path or a text stream.

    Raises SchemaMismatch for an unsupported schema_version and CorruptRecord
    (with the 1-based line number) for anything malformed or truncated.
    """
    with _open(source, "r") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorruptRecord("empty trace: missing header", line=1)

    def parse(i):
        try:
            obj = json.loads(lines[i])
        except json.JSONDecodeError as exc:
            raise CorruptRecord(f"invalid JSON ({exc.msg})", line=i + 1) from None
        if not isinstance(obj, dict) or "kind" not in obj:
            raise CorruptRecord("record is not an object with a 'kind'", line=i + 1)
        return obj

    head = parse(0)
    if head["kind"] != "header":
        raise CorruptRecord("first record must be the header", line=1)
    if head.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"unsupported schema_version {head.get('schema_version')!r} (expected {SCHEMA_VERSION})"
        )
    try:
        header = TraceHeader(
            loop_rate_hz=head["loop_rate_hz"],
            scenario=head["scenario"],
            seed=head["seed"],
            config=head["config"],
            schema_version=head["schema_version"],
        )
    except KeyError as exc:
        raise CorruptRecord(f"header missing field {exc}", line=1) from None

    trace = SessionTrace(header)
    for i in range(1, len(lines)):
        obj = parse(i)
        kind = obj["kind"]
        try:
            if kind == "tick":
                trace.record_tick(_tick_from_json(obj))
            elif kind == "event":
                trace.record_event(ArbitrationEvent(EventKind(obj["event"]), obj["t_us"], obj["wheel"]))
            elif kind == "outcome":
                if i != len(lines) - 1:
                    raise CorruptRecord("records after outcome", line=i + 2)
                if obj["ticks"] != len(trace.ticks) or obj["events"] != len(trace.events):
                    raise CorruptRecord("outcome counts do not match records", line=i + 1)
                trace.outcome = Outcome(obj["completed"], obj["completion_time_s"])
                return trace
            else:
                raise CorruptRecord(f"unknown record kind {kind!r}", line=i + 1)
        except CorruptRecord:
            raise
        except (KeyError, TypeError, ValueError, NonContiguousTick) as exc:
            raise CorruptRecord(f"bad {kind} record: {exc}", line=i + 1) from None
    raise CorruptRecord("truncated trace: no outcome record", line=len(lines) + 1)


def replay(trace: SessionTrace) -> Iterator:
    """Yield ``(TickRecord, [events at that tick])`` in tick order.

    An event belongs to the latest tick whose time does not exceed the event
    time; ties keep their recorded order.
    """
    groups, _ = _events_by_tick(trace)
    for r in trace.ticks:
        yield r, groups.get(r.tick_index, [])
