import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tandem.arbitration import ArbitrationEvent, EventKind
from tandem.errors import CorruptRecord, NonContiguousTick, SchemaMismatch
from tandem.session import (
    Outcome,
    SessionTrace,
    TickRecord,
    TraceHeader,
    dumps_trace,
    read_trace,
    replay,
    write_trace,
)

W, S, E = EventKind.GUIDANCE_WARNING, EventKind.GUIDANCE_START, EventKind.GUIDANCE_END


def tick(k, x=0.0, sigma=0):
    return TickRecord(k, 2000 * k, sigma, (x, -x), (x, 0.1), (1.0, 2.0), (3.0, 4.0), (0.5, -0.5),
                      x * 1e-3, ((x, 0.0, 0.0),) * 4)


def build(n, events=(), header=None):
    tr = SessionTrace(header or TraceHeader(scenario="t", seed=3, config={"a": [1, 2.5]}))
    for k in range(n):
        tr.record_tick(tick(k, k * 0.1))
    for e in events:
        tr.record_event(e)
    return tr


def roundtrip(tr):
    return read_trace(io.StringIO(dumps_trace(tr)))


def test_record_tick_contiguity():
    tr = SessionTrace()
    tr.record_tick(tick(0))
    assert len(tr) == 1
    for k in range(1, 5):
        tr.record_tick(tick(k))
    tr.record_tick(tick(5))
    with pytest.raises(NonContiguousTick):
        tr.record_tick(tick(7))
    with pytest.raises(NonContiguousTick):
        SessionTrace().record_tick(tick(1))


def test_header_immutable_after_first_tick():
    tr = SessionTrace()
    tr.header = TraceHeader(scenario="x")
    tr.record_tick(tick(0))
    with pytest.raises(ValueError):
        tr.header = TraceHeader(scenario="y")


def test_empty_roundtrip():
    tr = SessionTrace()
    assert roundtrip(tr) == tr


def test_roundtrip_bit_exact_floats():
    tr = SessionTrace(TraceHeader())
    vals = [0.1, 1 / 3, -2.5e-308, 5e-324, 1.7976931348623157e308, -0.0]
    for k, v in enumerate(vals):
        tr.record_tick(TickRecord(k, 2000 * k, 0, (v, v), (v, v), (v, v), (v, v), (v, v), v,
                                  ((v, v, v),) * 4))
    back = roundtrip(tr)
    for a, b in zip(tr.ticks, back.ticks):
        assert a.preceptor[0].hex() == b.preceptor[0].hex()
    assert back == tr


def test_file_roundtrip(tmp_path):
    tr = build(10, [ArbitrationEvent(S, 4000, 0), ArbitrationEvent(E, 8000)])
    tr.outcome = Outcome(True, 0.018)
    p = tmp_path / "run.tandem.jsonl"
    write_trace(tr, p)
    assert read_trace(p) == tr
    lines = p.read_text().splitlines()
    kinds = [json.loads(line)["kind"] for line in lines]
    assert kinds[0] == "header" and kinds[-1] == "outcome"
    assert kinds[3:5] == ["tick", "event"]  # event at tick 2 follows tick 2


def test_frozen_field_names(tmp_path):
    tr = build(1, [ArbitrationEvent(S, 0, 1)])
    lines = [json.loads(x) for x in dumps_trace(tr).splitlines()]
    assert set(lines[0]) == {"kind", "schema_version", "loop_rate_hz", "scenario", "seed", "config"}
    assert set(lines[1]) == {"kind", "tick_index", "t_us", "sigma", "preceptor_deg", "trainee_deg",
                             "motor_deg", "reference_deg", "torque_nmm", "insertion_depth_m", "tracker_m"}
    assert lines[2] == {"kind": "event", "event": "GuidanceStart", "t_us": 0, "wheel": 1}
    assert set(lines[3]) == {"kind", "completed", "completion_time_s", "ticks", "events"}


def test_truncated_stream():
    text = dumps_trace(build(20))
    lines = text.splitlines(keepends=True)
    with pytest.raises(CorruptRecord) as exc:
        read_trace(io.StringIO("".join(lines[:11])))
    assert exc.value.line == 12
    # cut mid-record
    cut = "".join(lines[:6]) + lines[6][:15]
    with pytest.raises(CorruptRecord) as exc:
        read_trace(io.StringIO(cut))
    assert exc.value.line == 7


def test_schema_mismatch():
    text = dumps_trace(build(2)).replace('"schema_version":1', '"schema_version":2')
    with pytest.raises(SchemaMismatch):
        read_trace(io.StringIO(text))


@pytest.mark.parametrize("mutate, line", [
    (lambda ls: ls[:2] + ['{"kind":"tick","tick_index":5}'] + ls[2:], 3),
    (lambda ls: ls[:2] + ["not json"] + ls[2:], 3),
    (lambda ls: ls[:2] + ['{"kind":"mystery"}'] + ls[2:], 3),
    (lambda ls: ls[:1] + ls[2:], 2),  # tick 0 missing -> tick 1 non-contiguous
])
def test_corrupt_records(mutate, line):
    ls = dumps_trace(build(4)).splitlines()
    with pytest.raises(CorruptRecord) as exc:
        read_trace(io.StringIO("\n".join(mutate(ls)) + "\n"))
    assert exc.value.line == line


def test_outcome_count_mismatch():
    text = dumps_trace(build(3)).replace('"ticks":3', '"ticks":4')
    with pytest.raises(CorruptRecord):
        read_trace(io.StringIO(text))


def test_replay():
    tr = build(3, [ArbitrationEvent(W, 4000), ArbitrationEvent(S, 4000, 0)])
    out = list(replay(tr))
    assert [r.tick_index for r, _ in out] == [0, 1, 2]
    assert out[0][1] == [] and out[1][1] == []
    assert [e.kind for e in out[2][1]] == [W, S]


def test_event_between_ticks_goes_to_earlier_tick():
    tr = build(3, [ArbitrationEvent(W, 3000)])
    assert [len(ev) for _, ev in replay(tr)] == [0, 1, 0]
    assert roundtrip(tr) == tr


def test_events_must_be_time_ordered():
    tr = build(3, [ArbitrationEvent(W, 4000)])
    with pytest.raises(ValueError):
        tr.record_event(ArbitrationEvent(S, 2000, 0))


def test_times_are_exact():
    tr = build(5000)
    t_us = np.array([r.t_us for r in tr.ticks])
    assert np.all(t_us == 2000 * np.arange(5000))
    assert tr.times[-1] == 9.998


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def traces(draw):
    n = draw(st.integers(0, 40))
    tr = SessionTrace(TraceHeader(scenario=draw(st.text(max_size=8)), seed=draw(st.integers(0, 2**32))))
    pair = st.tuples(finite, finite)
    for k in range(n):
        tr.record_tick(TickRecord(k, 2000 * k, draw(st.sampled_from([0, 1])), draw(pair), draw(pair),
                                  draw(pair), draw(pair), draw(pair), draw(finite),
                                  tuple(draw(st.tuples(finite, finite, finite)) for _ in range(4))))
    times = sorted(draw(st.lists(st.integers(0, max(0, 2000 * n + 3000)), max_size=10)))
    for t in times:
        tr.record_event(ArbitrationEvent(draw(st.sampled_from(list(EventKind))), t,
                                         draw(st.sampled_from([None, 0, 1]))))
    done = draw(st.booleans())
    tr.outcome = Outcome(done, draw(finite) if done else None)
    return tr


@settings(max_examples=80, deadline=None)
@given(traces())
def test_roundtrip_property(tr):
    back = roundtrip(tr)
    assert back == tr
    assert dumps_trace(back) == dumps_trace(tr)
