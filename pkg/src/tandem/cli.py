"""Command-line entry point: ``tandem <subcommand>``.

Exit codes: 0 ok, 2 configuration/input error, 3 runtime error during the
loop, 4 socket bind/connect failure. Logs go to stderr; verbosity is set by
``TANDEM_LOG`` (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import signal
import socket
import sys
import threading
import time
from collections import Counter
from pathlib import Path

from . import __version__
from .errors import ConfigError, CorruptRecord, SchemaMismatch, TandemError, TickError
from .loop import run, run_tethered
from .metrics import (
    TrialRecord,
    build_report,
    fit_learning_line,
    fit_table,
    read_trial_table,
    trial_from_trace,
)
from .netlink import DEFAULT_PORT, UdpReceiver, UdpSender
from .scenario import ScriptSource, load_scenario
from .session import read_trace, write_trace

log = logging.getLogger("tandem")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_SOCKET = 4

_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
           "info": logging.INFO, "debug": logging.DEBUG}


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def _setup_logging():
    level = _LEVELS.get(os.environ.get("TANDEM_LOG", "warn").strip().lower(), logging.WARNING)
    root = logging.getLogger("tandem")
    root.setLevel(level)
    if not any(isinstance(h, _StderrHandler) for h in root.handlers):
        h = _StderrHandler()
        h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(h)


def _check_writable(path: Path):
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir():
        raise _Fail(EXIT_CONFIG, f"output directory does not exist: {parent}")
    if path.is_dir() or not os.access(parent, os.W_OK) or (path.exists() and not os.access(path, os.W_OK)):
        raise _Fail(EXIT_CONFIG, f"cannot write output file: {path}")


def _load(path):
    try:
        return load_scenario(path)
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, f"config error: {exc}") from None


def _parse_addr(text, default_host="127.0.0.1"):
    host, _, port = text.rpartition(":")
    try:
        return (host or default_host), int(port)
    except ValueError:
        raise _Fail(EXIT_CONFIG, f"bad address {text!r} (expected HOST:PORT)") from None


def _summary_line(trace):
    kinds = Counter(e.kind.value for e in trace.events)
    ev = ", ".join(f"{k}={v}" for k, v in sorted(kinds.items())) or "none"
    done = (f"completed at {trace.outcome.completion_time_s:.3f} s"
            if trace.outcome.completed else "not completed")
    return f"ticks={len(trace.ticks)} {done} events: {ev}"


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(args):
    scenario = _load(args.scenario)
    _check_writable(args.out)
    try:
        trace = run(scenario)
    except TickError as exc:
        raise _Fail(EXIT_RUNTIME, f"runtime error at {exc}") from None
    write_trace(trace, args.out)
    print(_summary_line(trace))
    return EXIT_OK


def cmd_replay(args):
    try:
        trace = read_trace(args.trace)
    except (OSError, CorruptRecord, SchemaMismatch) as exc:
        raise _Fail(EXIT_CONFIG, f"cannot read trace: {exc}") from None
    guided = sum(r.sigma for r in trace.ticks)
    summary = {
        "scenario": trace.header.scenario,
        "seed": trace.header.seed,
        "ticks": len(trace.ticks),
        "duration_s": len(trace.ticks) / trace.header.loop_rate_hz,
        "guided_fraction": guided / len(trace.ticks) if trace.ticks else 0.0,
        "completed": trace.outcome.completed,
        "completion_time_s": trace.outcome.completion_time_s,
        "events": [{"kind": e.kind.value, "t_s": e.t_us / 1e6, "wheel": e.wheel} for e in trace.events],
    }
    if args.json:
        print(json.dumps(summary, indent=2))
        return EXIT_OK
    print(_summary_line(trace))
    if args.events:
        for e in trace.events:
            wheel = "" if e.wheel is None else f" wheel{e.wheel + 1}"
            print(f"{e.t_us / 1e6:10.3f} s  {e.kind.value}{wheel}")
    return EXIT_OK


def _parse_groups(items):
    groups = {}
    for item in items or []:
        name, sep, members = item.partition("=")
        if not sep or not name or not members:
            raise _Fail(EXIT_CONFIG, f"bad --group {item!r} (expected NAME=user1,user2)")
        groups[name] = [m.strip() for m in members.split(",") if m.strip()]
    return groups or None


def cmd_metrics(args):
    trials = []
    n_traces = 0
    for p in args.inputs:
        path = Path(p)
        try:
            if path.suffix.lower() == ".csv":
                trials.extend(read_trial_table(path))
            else:
                trials.append(trial_from_trace(read_trace(path), args.smooth))
                n_traces += 1
        except (OSError, ValueError, CorruptRecord, SchemaMismatch) as exc:
            raise _Fail(EXIT_CONFIG, f"cannot read {p}: {exc}") from None
    if not trials:
        raise _Fail(EXIT_CONFIG, "no trials found in inputs")
    _check_writable(args.report)
    if args.csv:
        _check_writable(args.csv)

    groups = _parse_groups(args.group)
    single = n_traces == 1 and len(trials) == 1
    try:
        if single:
            t = trials[0]
            report = {"users": {t.user_id: {"trials": [{
                "trial": t.trial_index, "assisted": t.assisted,
                "time_s": t.completion_time_s, "path_m": t.path_length_m}]}}, "groups": {}}
        else:
            report = build_report(trials, groups, metric=args.metric,
                                  use_unassisted_only=not args.all_trials)
    except TandemError as exc:
        raise _Fail(EXIT_CONFIG, f"metrics error: {exc}") from None

    Path(args.report).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    if args.csv:
        _write_fit_csv(args, trials, groups)
    for name, g in report["groups"].items():
        fit = g.get("fit")
        slope = f"{fit['slope']:+.4f}/trial" if fit else "n/a"
        tp = g.get("improvement_time_pct")
        pp = g.get("improvement_path_pct")
        print(f"group {name}: time {_pct(tp)}, path {_pct(pp)}, fit slope {slope}")
    if not report["groups"]:
        print(f"{len(trials)} trial(s); no group fit")
    return EXIT_OK


def _pct(v):
    return "n/a" if v is None else f"{v:.1f}%"


def _write_fit_csv(args, trials, groups):
    by_user = {}
    for t in trials:
        by_user.setdefault(t.user_id, []).append(t)
    groups = groups or {"all": sorted(by_user)}
    with open(args.csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "user_id", "trial", "normalized_" + args.metric, "fitted", "band_low", "band_high"])
        for name, members in groups.items():
            rows = [r for u in members for r in by_user.get(u, [])]
            try:
                fit = fit_learning_line(rows, not args.all_trials, args.metric)
            except TandemError:
                continue
            for row in fit_table(fit, rows, args.metric):
                w.writerow([name, *row])


def _install_stop():
    stop = threading.Event()

    def handler(signum, frame):
        stop.set()

    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            signal.signal(sig, handler)
        except ValueError:  # not in main thread
            pass
    return stop


def cmd_preceptor(args):
    scenario = _load(args.script)
    host, port = _parse_addr(args.target)
    try:
        socket.getaddrinfo(host, port, socket.AF_INET, socket.SOCK_DGRAM)
        sender = UdpSender(host, port)
    except OSError as exc:
        raise _Fail(EXIT_SOCKET, f"cannot reach {host}:{port}: {exc}") from None
    source = ScriptSource(scenario.preceptor, scenario.encoder)
    period_us = scenario.arbitration.period_us
    n = scenario.n_ticks if args.duration is None else -(-int(round(args.duration * 1e6)) // period_us)
    stop = _install_stop()
    t0 = time.monotonic_ns()
    sent = 0
    try:
        for k in range(n):
            if stop.is_set():
                break
            delay = (t0 + k * period_us * 1000 - time.monotonic_ns()) / 1e9
            if delay > 0:
                time.sleep(delay)
            t_us = k * period_us
            reading, enable = source(k, t_us)
            try:
                sender.send(reading, t_us, enable)
                sent += 1
            except ConnectionRefusedError:
                pass
    finally:
        sender.close()
    log.info("sent %d frames", sent)
    print(f"frames={sent}")
    return EXIT_OK


def cmd_trainee(args):
    scenario = _load(args.scenario)
    _check_writable(args.out)
    host, port = _parse_addr(args.listen)
    try:
        receiver = UdpReceiver(host, port, staleness_timeout_us=scenario.staleness_timeout_us)
    except OSError as exc:
        raise _Fail(EXIT_SOCKET, f"cannot bind {host}:{port}: {exc}") from None
    stop = _install_stop()
    t0 = time.monotonic_ns()
    receiver.start(t0)
    try:
        trace = run_tethered(scenario, receiver, pace=True, should_stop=stop.is_set, t0_ns=t0)
    except TickError as exc:
        raise _Fail(EXIT_RUNTIME, f"runtime error at {exc}") from None
    finally:
        receiver.close()
    write_trace(trace, args.out)
    print(_summary_line(trace))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="tandem", description="Tandem telemanipulation simulator and study metrics.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write its trace")
    s.add_argument("scenario", help="scenario file (.json or .toml)")
    s.add_argument("-o", "--out", required=True, help="output trace (.tandem.jsonl)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("replay", help="summarize a recorded trace")
    s.add_argument("trace")
    s.add_argument("--events", action="store_true", help="list every event")
    s.add_argument("--json", action="store_true", help="print the summary as JSON")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("metrics", help="compute the study metrics report")
    s.add_argument("inputs", nargs="+", help="trace files and/or trial-table CSVs")
    s.add_argument("--report", required=True, help="report JSON output path")
    s.add_argument("--csv", help="optional plot table CSV output path")
    s.add_argument("--group", action="append", metavar="NAME=U1,U2",
                   help="define a user group (repeatable); default: one group of all users")
    s.add_argument("--metric", choices=("time", "path"), default="time", help="metric for the line fit")
    s.add_argument("--all-trials", action="store_true", help="fit assisted trials too")
    s.add_argument("--smooth", type=int, default=1, help="moving-average window for trace path length")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("preceptor-endpoint", help="stream a scripted preceptor over UDP")
    s.add_argument("--target", default=f"127.0.0.1:{DEFAULT_PORT}", help="HOST:PORT of the trainee")
    s.add_argument("--script", required=True, help="scenario file whose preceptor script is streamed")
    s.add_argument("--duration", type=float, help="override the scenario duration (s)")
    s.set_defaults(func=cmd_preceptor)

    s = sub.add_parser("trainee-endpoint", help="run the follower loop fed by UDP frames")
    s.add_argument("--listen", default=f"127.0.0.1:{DEFAULT_PORT}", help="HOST:PORT to bind")
    s.add_argument("--scenario", required=True, help="scenario file (trainee script and configs)")
    s.add_argument("-o", "--out", required=True, help="output trace (.tandem.jsonl)")
    s.set_defaults(func=cmd_trainee)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"tandem: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
