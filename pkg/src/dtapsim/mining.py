"""Estimate a problem instance from an activity event log.

The log is a CSV of completed activity executions. Estimation recovers the
assignment pools (pairs observed at least twice) with Gaussian completion
models, the label transition matrix (traces augmented with virtual start and
end markers), the weekly availability calendar with per-resource weights,
and the case arrival rate. Together these assemble into a full instance.

Rows without a resource still shape transitions and the arrival rate, but
carry no pool or calendar information.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

from .model import (KIND_END, KIND_REGULAR, KIND_START, ActivityLabel, Calendar,
                    CompletionModel, DtapInstance, Resource, TransitionModel,
                    validate_instance)

LOG_HEADER = ["case_id", "activity", "resource", "start_timestamp", "end_timestamp"]

WEEK_HOURS = 168

# Virtual markers inserted around each trace.
START_MARK = "__start__"
END_MARK = "__end__"


class LogFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LogRecord:
    case_id: str
    activity: str
    resource: str | None
    start_h: float
    end_h: float


@dataclass(frozen=True)
class EventLog:
    """Parsed log with times in fractional hours since the Monday 00:00 at or
    before the earliest timestamp."""

    records: tuple[LogRecord, ...]
    rejected_rows: int
    origin: datetime

    @property
    def span_hours(self) -> float:
        if not self.records:
            return 0.0
        return max(r.end_h for r in self.records) - min(r.start_h for r in self.records)

    def case_count(self) -> int:
        return len({r.case_id for r in self.records})


def _parse_timestamp(text: str) -> datetime:
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    ts = datetime.fromisoformat(cleaned)
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def parse_event_log(path) -> EventLog:
    """Read and index a CSV event log. Malformed rows (bad timestamps, end
    before start, missing case or activity) are dropped and counted."""
    raw = []
    rejected = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != LOG_HEADER:
            raise LogFormatError(
                f"expected header {','.join(LOG_HEADER)!r}, got {header!r}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(LOG_HEADER):
                rejected += 1
                continue
            case_id, activity, resource, start_text, end_text = (c.strip() for c in row)
            if not case_id or not activity:
                rejected += 1
                continue
            try:
                start = _parse_timestamp(start_text)
                end = _parse_timestamp(end_text)
            except ValueError:
                rejected += 1
                continue
            if end < start:
                rejected += 1
                continue
            raw.append((case_id, activity, resource or None, start, end))
    if not raw:
        raise LogFormatError("log contains no usable rows")

    earliest = min(r[3] for r in raw)
    origin = datetime.combine(earliest.date() - timedelta(days=earliest.weekday()),
                              datetime.min.time())
    records = tuple(
        LogRecord(case_id=c, activity=a, resource=m,
                  start_h=(s - origin).total_seconds() / 3600.0,
                  end_h=(e - origin).total_seconds() / 3600.0)
        for c, a, m, s, e in raw)
    return EventLog(records=records, rejected_rows=rejected, origin=origin)


def mine_pools(log: EventLog) -> dict[tuple[str, str], tuple[int, float, float]]:
    """(activity, resource) pairs observed at least twice, with observation
    count, sample mean duration, and sample standard deviation (hours)."""
    durations: dict[tuple[str, str], list[float]] = {}
    for rec in log.records:
        if rec.resource is None:
            continue
        durations.setdefault((rec.activity, rec.resource), []).append(
            rec.end_h - rec.start_h)
    return {
        pair: (len(d), statistics.fmean(d), statistics.stdev(d))
        for pair, d in durations.items() if len(d) >= 2
    }


def _traces(log: EventLog) -> dict[str, list[str]]:
    by_case: dict[str, list[tuple[float, float, int, str]]] = {}
    for i, rec in enumerate(log.records):
        by_case.setdefault(rec.case_id, []).append((rec.start_h, rec.end_h, i, rec.activity))
    return {
        case: [name for _, _, _, name in sorted(entries)]
        for case, entries in by_case.items()
    }


def mine_transitions(log: EventLog) -> dict[str, dict[str, float]]:
    """Name-keyed transition rows over traces augmented with virtual start
    and end markers. Each row sums to exactly 1."""
    counts: dict[str, dict[str, int]] = {}
    for trace in _traces(log).values():
        path = [START_MARK, *trace, END_MARK]
        for src, dst in zip(path, path[1:]):
            counts.setdefault(src, {})[dst] = counts.get(src, {}).get(dst, 0) + 1
    rows = {}
    for src, row_counts in counts.items():
        total = sum(row_counts.values())
        row = {dst: c / total for dst, c in row_counts.items()}
        rows[src] = _exactly_stochastic(row)
    return rows


def _exactly_stochastic(row: dict[str, float]) -> dict[str, float]:
    # Nudge the largest entry so the float sum is exactly 1.
    for _ in range(5):
        residual = 1.0 - math.fsum(row.values())
        if sum(row.values()) == 1.0:
            return row
        top = max(row, key=row.get)
        row[top] += residual
    if sum(row.values()) != 1.0:
        raise ArithmeticError("could not normalize transition row exactly")
    return row


def mine_calendar(log: EventLog) -> tuple[Calendar, dict[str, int]]:
    """Weekly availability profile and per-resource weights.

    P[k] is the count of distinct resources observed working during hour k of
    the week, averaged over fully covered weeks, rounded half up. Weights are
    total record counts per resource."""
    weights: dict[str, int] = {}
    busy_hours: dict[int, set[str]] = {}
    max_end = 0.0
    for rec in log.records:
        max_end = max(max_end, rec.end_h)
        if rec.resource is None:
            continue
        weights[rec.resource] = weights.get(rec.resource, 0) + 1
        first = int(math.floor(rec.start_h))
        last = int(math.ceil(rec.end_h))
        for hour in range(first, max(last, first + 1)):
            busy_hours.setdefault(hour, set()).add(rec.resource)

    profile = []
    for k in range(WEEK_HOURS):
        weeks = 0
        seen = 0
        w = 0
        while w * WEEK_HOURS + k + 1 <= max_end:
            weeks += 1
            seen += len(busy_hours.get(w * WEEK_HOURS + k, ()))
            w += 1
        profile.append(int(math.floor(seen / weeks + 0.5)) if weeks else 0)
    return Calendar(expected_active=tuple(profile), period_hours=WEEK_HOURS), weights


def mine_arrival_rate(log: EventLog, scale: float = 1.0) -> float:
    """Cases per hour over the log span, multiplied by an adjustment factor
    (published instances tune the rate for stability; the factor leaves that
    choice to the caller)."""
    if log.case_count() < 2:
        raise LogFormatError("need at least two cases to estimate an arrival rate")
    span = log.span_hours
    if span <= 0:
        raise LogFormatError("log span is zero; cannot estimate an arrival rate")
    return scale * log.case_count() / span


def assemble_instance(log: EventLog, *, lambda_scale: float = 1.0,
                      horizon_hours: float | None = None,
                      name: str = "mined") -> DtapInstance:
    """Compose all estimates into a validated instance.

    Labels and resources are indexed by first appearance in the log; the
    virtual start marker becomes label 0 and the end marker the last label.
    The default horizon is the log span rounded up to whole weeks."""
    pools_by_name = mine_pools(log)
    rows_by_name = mine_transitions(log)
    calendar, weights_by_name = mine_calendar(log)

    activity_order: list[str] = []
    resource_order: list[str] = []
    for rec in log.records:
        if rec.activity not in activity_order:
            activity_order.append(rec.activity)
        if rec.resource is not None and rec.resource not in resource_order:
            resource_order.append(rec.resource)

    start_name, end_name = _marker_names(activity_order)
    label_ids = {START_MARK: 0}
    labels = [ActivityLabel(id=0, name=start_name, kind=KIND_START)]
    for name_ in activity_order:
        label_ids[name_] = len(labels)
        labels.append(ActivityLabel(id=label_ids[name_], name=name_, kind=KIND_REGULAR))
    label_ids[END_MARK] = len(labels)
    labels.append(ActivityLabel(id=label_ids[END_MARK], name=end_name, kind=KIND_END))

    resources = tuple(
        Resource(id=i, name=name_, weight=weights_by_name[name_])
        for i, name_ in enumerate(resource_order))
    resource_ids = {r.name: r.id for r in resources}

    pools = []
    completion = {}
    for (activity, resource), (_, mean, std) in sorted(pools_by_name.items()):
        pair = (label_ids[activity], resource_ids[resource])
        pools.append(pair)
        completion[pair] = CompletionModel(mean=mean, std_dev=std)
    pools.sort()

    rows = {
        label_ids[src]: {label_ids[dst]: p for dst, p in row.items()}
        for src, row in rows_by_name.items()
    }

    if horizon_hours is None:
        horizon_hours = WEEK_HOURS * max(1, math.ceil(log.span_hours / WEEK_HOURS))

    instance = DtapInstance(
        labels=tuple(labels),
        resources=resources,
        pools=tuple(pools),
        completion=completion,
        transitions=TransitionModel(rows=rows),
        calendar=calendar,
        arrival_rate=mine_arrival_rate(log, lambda_scale),
        horizon_hours=float(horizon_hours),
        name=name,
    )
    violations = validate_instance(instance)
    if violations:
        details = "; ".join(f"{v.code}: {v.message}" for v in violations)
        raise LogFormatError(
            f"mined instance failed validation ({details}); the log may be too "
            f"sparse (pools need two observations per pair)")
    return instance


def _marker_names(activity_order: list[str]) -> tuple[str, str]:
    start, end = "start", "end"
    taken = set(activity_order)
    while start in taken:
        start += "_"
    while end in taken:
        end += "_"
    return start, end


def mining_report(log: EventLog, instance: DtapInstance) -> str:
    """Human-readable estimation summary: sizes, rate, and the distribution
    of trace lengths, pool sizes, and hourly availability."""
    traces = _traces(log)
    trace_lengths = [len(t) for t in traces.values()]
    pool_sizes = [n for n, _, _ in mine_pools(log).values()]
    cal = instance.calendar.expected_active

    def mean_std(xs):
        if not xs:
            return "n/a"
        if len(xs) == 1:
            return f"{xs[0]:.1f} +/- 0.0"
        return f"{statistics.fmean(xs):.1f} +/- {statistics.stdev(xs):.1f}"

    lines = [
        "estimation report",
        f"  labels:               {len(instance.labels)} "
        f"({len(instance.regular_label_ids)} regular)",
        f"  resources:            {len(instance.resources)}",
        f"  pools:                {len(instance.pools)}",
        f"  cases:                {log.case_count()}",
        f"  records:              {len(log.records)} ({log.rejected_rows} rejected)",
        f"  span:                 {log.span_hours:.1f} h",
        f"  arrival rate:         {instance.arrival_rate:.4f} cases/h",
        f"  activities per case:  {mean_std(trace_lengths)}",
        f"  pool observations:    {mean_std(pool_sizes)}",
        f"  hourly availability:  {statistics.fmean(cal):.1f} "
        f"(min {min(cal)}, max {max(cal)})",
    ]
    return "\n".join(lines)
