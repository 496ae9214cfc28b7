"""Trace schema, persistence, and derived run statistics.

A trace is a header (run metadata: platform, policy, instance table) plus
timestamped events, persisted as newline-delimited JSON with a
schema-versioned header line.  Reports derive makespan, per-PE
utilization, scheduling overhead, and per-application latency.
"""

from __future__ import annotations

import csv
import json
import threading
from dataclasses import dataclass, field

__all__ = [
    "TraceError",
    "TraceEvent",
    "Trace",
    "TraceSink",
    "RunReport",
    "compute_report",
    "write_trace",
    "read_trace",
    "export_csv",
    "EXPORT_KINDS",
    "SCHEMA",
]

SCHEMA = "emu-trace/1"

EVENT_KINDS = {
    "inject",
    "task_ready",
    "sched_decision",
    "dispatch",
    "task_start",
    "transfer_start",
    "transfer_end",
    "task_end",
    "instance_complete",
}

EXPORT_KINDS = ("gantt", "utilization", "overhead", "latency")


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEvent:
    t: int
    kind: str
    instance_id: int | None = None
    node: str | None = None
    pe_id: int | None = None
    duration_ns: int | None = None  # sched_decision only
    policy: str | None = None  # sched_decision only
    ready_len: int | None = None  # sched_decision only

    def to_obj(self) -> dict:
        obj = {"t": self.t, "kind": self.kind}
        for key in ("instance_id", "node", "pe_id", "duration_ns", "policy", "ready_len"):
            value = getattr(self, key)
            if value is not None:
                obj[key] = value
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "TraceEvent":
        if obj.get("kind") not in EVENT_KINDS:
            raise TraceError(f"unknown event kind {obj.get('kind')!r}")
        return cls(
            t=int(obj["t"]),
            kind=obj["kind"],
            instance_id=obj.get("instance_id"),
            node=obj.get("node"),
            pe_id=obj.get("pe_id"),
            duration_ns=obj.get("duration_ns"),
            policy=obj.get("policy"),
            ready_len=obj.get("ready_len"),
        )


@dataclass
class Trace:
    meta: dict
    events: list[TraceEvent] = field(default_factory=list)

    def of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]


class TraceSink:
    """Thread-safe event collector shared by the manager and PE workers."""

    def __init__(self):
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()

    def emit(self, t: int, kind: str, **fields) -> None:
        event = TraceEvent(t=t, kind=kind, **fields)
        with self._lock:
            self._events.append(event)

    def drain(self) -> list[TraceEvent]:
        with self._lock:
            events = self._events
            self._events = []
        # Report-time ordering: by timestamp, stable across equal stamps.
        events.sort(key=lambda e: e.t)
        return events


@dataclass
class RunReport:
    makespan_ns: int
    utilization: dict[int, float]  # pe_id -> busy fraction
    overhead_mean_ns: float
    overhead_max_ns: int
    overhead_total_ns: int
    per_app: dict[str, dict]  # app -> {count, mean_latency_ns, max_latency_ns}
    failed_instances: list[int]
    placement: dict
    config: dict

    def to_obj(self) -> dict:
        return {
            "makespan_ns": self.makespan_ns,
            "utilization": {str(k): v for k, v in sorted(self.utilization.items())},
            "overhead": {
                "mean_ns": self.overhead_mean_ns,
                "max_ns": self.overhead_max_ns,
                "total_ns": self.overhead_total_ns,
            },
            "per_app": self.per_app,
            "failed_instances": self.failed_instances,
            "placement": self.placement,
            "config": self.config,
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_obj(), fh, indent=2)
            fh.write("\n")


def _busy_intervals(trace: Trace) -> dict[int, list[tuple[int, int]]]:
    """Per-PE [start, end) execution intervals from task_start/task_end pairs.

    Accelerator tasks stamp task_start before transfer-in and task_end after
    transfer-out, so transfers count as busy time.
    """
    open_tasks: dict[tuple[int, str], TraceEvent] = {}
    intervals: dict[int, list[tuple[int, int]]] = {}
    for event in trace.events:
        if event.kind == "task_start":
            key = (event.instance_id, event.node)
            if key in open_tasks:
                raise TraceError(f"task {event.node} of instance {event.instance_id} started twice")
            open_tasks[key] = event
        elif event.kind == "task_end":
            key = (event.instance_id, event.node)
            start = open_tasks.pop(key, None)
            if start is None:
                raise TraceError(f"task_end without task_start for {event.node} of instance {event.instance_id}")
            intervals.setdefault(event.pe_id, []).append((start.t, event.t))
    if open_tasks:
        (iid, node), _ = next(iter(open_tasks.items()))
        raise TraceError(f"unmatched task_start for {node} of instance {iid}")
    return intervals


def compute_report(trace: Trace) -> RunReport:
    intervals = _busy_intervals(trace)
    task_times = [e.t for e in trace.events if e.kind in ("task_start", "task_end")]
    makespan = (max(task_times) - min(task_times)) if task_times else 0

    pe_ids = [pe["pe_id"] for pe in trace.meta.get("pes", [])]
    utilization: dict[int, float] = {}
    for pe_id in pe_ids or sorted(intervals):
        busy = sum(end - start for start, end in intervals.get(pe_id, []))
        utilization[pe_id] = (busy / makespan) if makespan > 0 else 0.0

    samples = [e.duration_ns for e in trace.events if e.kind == "sched_decision"]
    total = sum(samples)
    mean = total / len(samples) if samples else 0.0
    peak = max(samples) if samples else 0

    apps = {iid: app for iid, app, *_ in trace.meta.get("instances", [])}
    injected_at = {e.instance_id: e.t for e in trace.events if e.kind == "inject"}
    latencies: dict[str, list[int]] = {}
    for event in trace.events:
        if event.kind == "instance_complete" and event.instance_id in injected_at:
            app = apps.get(event.instance_id, "?")
            latencies.setdefault(app, []).append(event.t - injected_at[event.instance_id])
    per_app = {
        app: {
            "count": len(vals),
            "mean_latency_ns": sum(vals) / len(vals),
            "max_latency_ns": max(vals),
        }
        for app, vals in sorted(latencies.items())
    }

    return RunReport(
        makespan_ns=makespan,
        utilization=utilization,
        overhead_mean_ns=mean,
        overhead_max_ns=peak,
        overhead_total_ns=total,
        per_app=per_app,
        failed_instances=trace.meta.get("failed_instances", []),
        placement=trace.meta.get("placement", {}),
        config=trace.meta.get("config", {}),
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def write_trace(trace: Trace, path) -> None:
    header = dict(trace.meta)
    header["schema"] = SCHEMA
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for event in trace.events:
            fh.write(json.dumps(event.to_obj(), sort_keys=True) + "\n")


def read_trace(path) -> Trace:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise TraceError("empty trace file")
        try:
            meta = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"malformed trace header: {exc}") from exc
        if meta.get("schema") != SCHEMA:
            raise TraceError(f"trace schema mismatch: {meta.get('schema')!r} != {SCHEMA!r}")
        events = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                events.append(TraceEvent.from_obj(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise TraceError(f"malformed trace line {lineno}: {exc}") from exc
    return Trace(meta=meta, events=events)


# ---------------------------------------------------------------------------
# CSV exports
# ---------------------------------------------------------------------------


def export_csv(trace: Trace, what: str, path) -> int:
    """Write one export kind; returns the data row count."""
    if what == "gantt":
        rows = _gantt_rows(trace)
        header = ["pe_id", "instance_id", "node", "start_ns", "end_ns"]
    elif what == "utilization":
        report = compute_report(trace)
        types = {pe["pe_id"]: pe["pe_type"] for pe in trace.meta.get("pes", [])}
        rows = [
            [pe_id, types.get(pe_id, "?"), f"{frac:.9f}"]
            for pe_id, frac in sorted(report.utilization.items())
        ]
        header = ["pe_id", "pe_type", "fraction"]
    elif what == "overhead":
        rows = [
            [i, e.duration_ns, e.ready_len]
            for i, e in enumerate(trace.of_kind("sched_decision"))
        ]
        header = ["cycle_index", "duration_ns", "ready_len"]
    elif what == "latency":
        apps = {iid: app for iid, app, *_ in trace.meta.get("instances", [])}
        injected_at = {e.instance_id: e.t for e in trace.events if e.kind == "inject"}
        rows = [
            [apps.get(e.instance_id, "?"), e.instance_id, e.t - injected_at[e.instance_id]]
            for e in trace.of_kind("instance_complete")
            if e.instance_id in injected_at
        ]
        header = ["app", "instance_id", "latency_ns"]
    else:
        raise TraceError(f"unknown export kind {what!r}; choose from {EXPORT_KINDS}")

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return len(rows)


def _gantt_rows(trace: Trace) -> list[list]:
    rows = []
    open_tasks: dict[tuple[int, str], int] = {}
    for event in trace.events:
        key = (event.instance_id, event.node)
        if event.kind == "task_start":
            open_tasks[key] = event.t
        elif event.kind == "task_end" and key in open_tasks:
            rows.append([event.pe_id, event.instance_id, event.node, open_tasks.pop(key), event.t])
    rows.sort(key=lambda r: (r[0], r[3]))
    return rows
