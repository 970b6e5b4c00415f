"""Study arithmetic: path length, completion time, normalization, improvement
percentages, and the learning-rate line with its margin band.

Normalization divides each user's times by that user's first trial. The
margin band is relative: ``fitted * (1 +/- margin_fraction)``.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateAbscissa,
    EmptyInput,
    InsufficientTrials,
    NonPositiveFirst,
    NotCompleted,
)


@dataclass(frozen=True)
class TrialRecord:
    user_id: str
    trial_index: int
    assisted: bool
    completion_time_s: Optional[float]
    path_length_m: Optional[float]

    def metric(self, name: str) -> Optional[float]:
        if name == "time":
            return self.completion_time_s
        if name == "path":
            return self.path_length_m
        raise ValueError(f"unknown metric {name!r} (expected 'time' or 'path')")


@dataclass(frozen=True)
class LearningFit:
    slope: float
    intercept: float
    margin_fraction: float = 0.05
    trials_used: tuple = ()
    residual_rms: float = 0.0
    n_points: int = 0

    def predict(self, trial_index):
        return self.intercept + self.slope * np.asarray(trial_index, dtype=float)

    def band(self, trial_index):
        y = self.predict(trial_index)
        return y * (1.0 - self.margin_fraction), y * (1.0 + self.margin_fraction)


# -- per-trace quantities ------------------------------------------------------

def moving_average(points, window: int) -> np.ndarray:
    """Trailing moving average along axis 0; only full windows are returned."""
    p = np.asarray(points, dtype=float)
    if window <= 1 or len(p) < window:
        return p
    c = np.cumsum(np.vstack([np.zeros((1,) + p.shape[1:]), p]), axis=0)
    return (c[window:] - c[:-window]) / window


def path_length(points, smooth_window: int = 1) -> float:
    """Polyline arc length of ordered 3-D points (meters); one point gives 0."""
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or len(p) == 0:
        raise EmptyInput("path_length needs at least one point")
    if smooth_window > 1:
        p = moving_average(p, smooth_window)
    if len(p) < 2:
        return 0.0
    d = np.diff(p, axis=0)
    return float(np.sum(np.sqrt(np.sum(d * d, axis=1))))


def completion_time(trace) -> float:
    """Time of the first tick whose insertion depth reaches the colon length."""
    length = trace.header.config.get("colon_length_m")
    if length is not None:
        for r in trace.ticks:
            if r.insertion_depth >= length:
                return r.t_us / 1e6
        raise NotCompleted(f"trace {trace.header.scenario!r} never reached full depth")
    if trace.outcome.completed and trace.outcome.completion_time_s is not None:
        return trace.outcome.completion_time_s
    raise NotCompleted(f"trace {trace.header.scenario!r} did not complete")


def tip_path(trace) -> np.ndarray:
    """Tip-sensor positions (sensor 0) over the run, shape (n_ticks, 3)."""
    if not trace.ticks:
        return np.zeros((0, 3))
    return np.array([r.tracker[0] for r in trace.ticks], dtype=float)


def tracking_lag(times, follower, leader, sigma, tol: float, max_lag_s: float = 1.0) -> np.ndarray:
    """Per-sample lag of ``follower`` behind ``leader`` while ``sigma`` is 1.

    For each guided sample k the lag is the smallest ``t[k] - t[j]`` with
    ``t[k] - max_lag_s <= t[j] <= t[k]`` such that
    ``|follower[k] - leader[j]| <= tol``; ``inf`` when no such j exists.
    The leader history before guidance started counts, so the onset jump
    itself is measured.
    """
    times = np.asarray(times, dtype=float)
    f = np.asarray(follower, dtype=float)
    lead = np.asarray(leader, dtype=float)
    guided = np.flatnonzero(np.asarray(sigma) == 1)
    first = np.searchsorted(times, times[guided] - max_lag_s, side="left")
    lags = np.full(len(guided), math.inf)
    for n, (k, j0) in enumerate(zip(guided, first)):
        close = np.flatnonzero(np.abs(f[k] - lead[j0:k + 1]) <= tol)
        if len(close):
            lags[n] = times[k] - times[j0 + close[-1]]
    return lags


# -- study arithmetic ----------------------------------------------------------

def normalize_times(times: Sequence[float]) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.size == 0:
        raise EmptyInput("no times to normalize")
    if not t[0] > 0:
        raise NonPositiveFirst(f"first trial time must be positive, got {t[0]}")
    return t / t[0]


def percent_improvement(first: float, last: float) -> float:
    if not first > 0:
        raise NonPositiveFirst(f"first value must be positive, got {first}")
    return 100.0 * (first - last) / first


def _by_user(trials: Iterable[TrialRecord]) -> Dict[str, List[TrialRecord]]:
    users = defaultdict(list)
    for tr in trials:
        users[tr.user_id].append(tr)
    for v in users.values():
        v.sort(key=lambda r: r.trial_index)
    return dict(users)


def user_improvement(trials: Sequence[TrialRecord], metric: str = "time") -> float:
    """First-to-last unassisted improvement for one user's trials."""
    usable = sorted((t for t in trials if not t.assisted and t.metric(metric) is not None),
                    key=lambda r: r.trial_index)
    if len(usable) < 2:
        uid = trials[0].user_id if trials else None
        raise InsufficientTrials(
            f"user {uid!r} has {len(usable)} unassisted trial(s) with a {metric} value; need 2",
            user_id=uid,
        )
    return percent_improvement(usable[0].metric(metric), usable[-1].metric(metric))


def group_average_improvement(trials: Iterable[TrialRecord], metric: str = "time") -> float:
    """Mean over users of the first-to-last unassisted improvement."""
    users = _by_user(trials)
    if not users:
        raise InsufficientTrials("no trials in group")
    return float(np.mean([user_improvement(v, metric) for v in users.values()]))


def fit_learning_line(trials: Iterable[TrialRecord], use_unassisted_only: bool = True,
                      metric: str = "time", margin_fraction: float = 0.05) -> LearningFit:
    """Least-squares line of normalized metric against trial index.

    Values are normalized per user by that user's first trial; with
    ``use_unassisted_only`` only trials without expert intervention enter
    the fit.
    """
    xs, ys = [], []
    for uid, rows in _by_user(trials).items():
        rows = [r for r in rows if r.metric(metric) is not None]
        if not rows:
            continue
        first = rows[0].metric(metric)
        if not first > 0:
            raise NonPositiveFirst(f"user {uid!r}: first {metric} must be positive")
        for r in rows:
            if use_unassisted_only and r.assisted:
                continue
            xs.append(float(r.trial_index))
            ys.append(r.metric(metric) / first)
    if len(xs) < 2:
        raise InsufficientTrials(f"need at least 2 usable trials to fit, got {len(xs)}")
    x = np.array(xs)
    y = np.array(ys)
    if np.all(x == x[0]):
        raise DegenerateAbscissa("all usable trials share one trial index")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    return LearningFit(
        slope=float(slope),
        intercept=float(intercept),
        margin_fraction=margin_fraction,
        trials_used=tuple(sorted(set(int(v) for v in xs))),
        residual_rms=float(np.sqrt(np.mean(resid * resid))),
        n_points=len(xs),
    )


# -- I/O -----------------------------------------------------------------------

TRIAL_COLUMNS = ("user_id", "trial", "assisted", "time_s", "path_m")
_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f", ""}


def _opt_float(text: str, what: str, lineno: int) -> Optional[float]:
    text = text.strip()
    if text == "" or text.lower() in {"na", "nan", "null"}:
        return None
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"line {lineno}: {what} is not a number: {text!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise ValueError(f"line {lineno}: {what} must be positive, got {text!r}")
    return v


def read_trial_table(path) -> List[TrialRecord]:
    """Parse a CSV with columns user_id, trial, assisted, time_s, path_m."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRIAL_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"trial table missing column(s): {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                trial = int(row["trial"])
            except ValueError:
                raise ValueError(f"line {lineno}: trial is not an integer: {row['trial']!r}") from None
            if trial < 1:
                raise ValueError(f"line {lineno}: trial index must be >= 1")
            flag = row["assisted"].strip().lower()
            if flag not in _TRUE | _FALSE:
                raise ValueError(f"line {lineno}: assisted must be a boolean, got {row['assisted']!r}")
            rows.append(TrialRecord(
                user_id=row["user_id"].strip(),
                trial_index=trial,
                assisted=flag in _TRUE,
                completion_time_s=_opt_float(row["time_s"], "time_s", lineno),
                path_length_m=_opt_float(row["path_m"], "path_m", lineno),
            ))
    return rows


def trial_from_trace(trace, smooth_window: int = 1) -> TrialRecord:
    meta = trace.header.config.get("metadata", {}) or {}
    try:
        t = completion_time(trace)
    except NotCompleted:
        t = None
    path = tip_path(trace)
    return TrialRecord(
        user_id=str(meta.get("user_id", trace.header.scenario)),
        trial_index=int(meta.get("trial", 1)),
        assisted=bool(meta.get("assisted", any(r.sigma for r in trace.ticks))),
        completion_time_s=t,
        path_length_m=path_length(path, smooth_window) if len(path) else None,
    )


@dataclass
class GroupReport:
    name: str
    users: List[str]
    improvement_time_pct: Optional[float] = None
    improvement_path_pct: Optional[float] = None
    fit: Optional[LearningFit] = None
    notes: List[str] = field(default_factory=list)


def build_report(trials: Sequence[TrialRecord], groups: Optional[Dict[str, List[str]]] = None,
                 metric: str = "time", use_unassisted_only: bool = True,
                 margin_fraction: float = 0.05, strict: bool = True) -> dict:
    """Assemble the metrics report as a JSON-compatible dict.

    With ``strict`` a user lacking two unassisted trials raises
    InsufficientTrials; otherwise the group gets a note instead.
    """
    users = _by_user(trials)
    if groups is None:
        groups = {"all": sorted(users)}
    grouped = {u for members in groups.values() for u in members}
    per_user = {}
    for uid, rows in sorted(users.items()):
        entry = {"trials": [
            {"trial": r.trial_index, "assisted": r.assisted,
             "time_s": r.completion_time_s, "path_m": r.path_length_m}
            for r in rows
        ]}
        times = [r.completion_time_s for r in rows]
        if times and times[0] is not None and all(t is not None for t in times):
            entry["normalized_time"] = normalize_times(times).tolist()
        for m, key in (("time", "improvement_time_pct"), ("path", "improvement_path_pct")):
            try:
                entry[key] = user_improvement(rows, m)
            except InsufficientTrials:
                if strict and uid in grouped and len(rows) > 1:
                    raise
                entry[key] = None
        per_user[uid] = entry

    group_out = {}
    for gname, members in groups.items():
        unknown = [u for u in members if u not in users]
        if unknown:
            raise InsufficientTrials(f"group {gname!r}: no trials for user(s) {unknown}", user_id=unknown[0])
        rows = [r for u in members for r in users[u]]
        g = {"users": list(members)}
        for m, key in (("time", "improvement_time_pct"), ("path", "improvement_path_pct")):
            try:
                g[key] = group_average_improvement(rows, m)
            except InsufficientTrials:
                if strict and len(rows) > len(members):
                    raise
                g[key] = None
        try:
            fit = fit_learning_line(rows, use_unassisted_only, metric, margin_fraction)
        except (InsufficientTrials, DegenerateAbscissa) as exc:
            g["fit"] = None
            g["fit_note"] = str(exc)
        else:
            g["fit"] = {
                "metric": metric,
                "slope": fit.slope,
                "intercept": fit.intercept,
                "margin_fraction": fit.margin_fraction,
                "trials_used": list(fit.trials_used),
                "residual_rms": fit.residual_rms,
            }
        group_out[gname] = g
    return {"users": per_user, "groups": group_out}


def fit_table(fit: LearningFit, trials: Sequence[TrialRecord], metric: str = "time"):
    """Plot-ready rows: (user, trial, normalized, fitted, band_low, band_high)."""
    out = []
    for uid, rows in sorted(_by_user(trials).items()):
        rows = [r for r in rows if r.metric(metric) is not None]
        if not rows:
            continue
        first = rows[0].metric(metric)
        for r in rows:
            lo, hi = fit.band(r.trial_index)
            out.append((uid, r.trial_index, r.metric(metric) / first,
                        float(fit.predict(r.trial_index)), float(lo), float(hi)))
    return out
