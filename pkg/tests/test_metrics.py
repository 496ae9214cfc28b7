import csv
import random

import pytest

from socemu import engine
from socemu.metrics import (
    SCHEMA,
    Trace,
    TraceError,
    TraceEvent,
    compute_report,
    export_csv,
    read_trace,
    write_trace,
)
from socemu.platform import PlatformConfig
from socemu.workload import generate_validation

from genutil import make_random_spec

US = 1_000
MS = 1_000_000


def meta(pes):
    return {"pes": [{"pe_id": i, "pe_type": t, "kind": "core", "host_core": i + 1}
                    for i, t in enumerate(pes)],
            "instances": [[0, "app", 0]]}


def ev(t, kind, **kw):
    return TraceEvent(t=t, kind=kind, **kw)


def task_pair(iid, node, pe, start, end):
    return [ev(start, "task_start", instance_id=iid, node=node, pe_id=pe),
            ev(end, "task_end", instance_id=iid, node=node, pe_id=pe)]


class TestComputeReport:
    def test_single_task_full_utilization(self):
        trace = Trace(meta(["cpu"]), [
            ev(0, "inject", instance_id=0),
            *task_pair(0, "t", 0, 0, 1 * MS),
            ev(1 * MS, "instance_complete", instance_id=0),
        ])
        report = compute_report(trace)
        assert report.makespan_ns == 1 * MS
        assert report.utilization == {0: 1.0}
        assert report.per_app["app"]["count"] == 1
        assert report.per_app["app"]["mean_latency_ns"] == 1 * MS

    def test_idle_second_pe(self):
        trace = Trace(meta(["cpu", "cpu"]), [
            *task_pair(0, "a", 0, 0, 1 * MS),
            *task_pair(0, "b", 0, 1 * MS, 2 * MS),
        ])
        report = compute_report(trace)
        assert report.utilization == {0: 1.0, 1: 0.0}

    def test_unmatched_start_is_error(self):
        trace = Trace(meta(["cpu"]), [ev(0, "task_start", instance_id=0, node="ghost", pe_id=0)])
        with pytest.raises(TraceError, match="ghost"):
            compute_report(trace)

    def test_random_traces_match_interval_oracle(self):
        rng = random.Random(3)
        for _ in range(30):
            spec = make_random_spec(rng, name="m", max_nodes=10)
            q = generate_validation({"m": rng.randint(1, 3)})
            config = PlatformConfig(
                entries=[{"type": "cpu", "kind": "core", "count": rng.randint(1, 3)}],
                manager_core=0, host_cores=4)
            result = engine.run(config, {"m": spec}, q, mode="virtual")
            report = result.report

            # Independent recomputation straight from raw events.
            events = result.trace.events
            task_ts = [e.t for e in events if e.kind in ("task_start", "task_end")]
            makespan = max(task_ts) - min(task_ts)
            assert report.makespan_ns == makespan
            busy = {}
            opened = {}
            for e in events:
                if e.kind == "task_start":
                    opened[(e.instance_id, e.node)] = e
                elif e.kind == "task_end":
                    s = opened.pop((e.instance_id, e.node))
                    busy[s.pe_id] = busy.get(s.pe_id, 0) + (e.t - s.t)
            for pe_id, frac in report.utilization.items():
                expected = busy.get(pe_id, 0) / makespan if makespan else 0.0
                assert frac == pytest.approx(expected, abs=1e-12)
                assert 0.0 <= frac <= 1.0 + 1e-6


class TestPersistence:
    def test_round_trip(self, tmp_path):
        trace = Trace(meta(["cpu"]), [
            ev(0, "inject", instance_id=0),
            *task_pair(0, "t", 0, 5, 10),
            ev(7, "sched_decision", duration_ns=3, policy="frfs", ready_len=2),
        ])
        path = tmp_path / "t.trace.json"
        write_trace(trace, path)
        again = read_trace(path)
        assert again.meta["schema"] == SCHEMA
        assert again.events == trace.events

    def test_header_first_line(self, tmp_path):
        path = tmp_path / "t.trace.json"
        write_trace(Trace(meta(["cpu"]), []), path)
        first = path.read_text(encoding="utf-8").splitlines()[0]
        assert '"schema": "emu-trace/1"' in first

    def test_empty_trace_header_only(self, tmp_path):
        path = tmp_path / "t.trace.json"
        write_trace(Trace(meta(["cpu"]), []), path)
        assert len(path.read_text(encoding="utf-8").splitlines()) == 1
        assert read_trace(path).events == []

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema": "emu-trace/99"}\n', encoding="utf-8")
        with pytest.raises(TraceError, match="schema mismatch"):
            read_trace(path)

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema": "emu-trace/1"}\n{nope\n', encoding="utf-8")
        with pytest.raises(TraceError, match="line 2"):
            read_trace(path)

    def test_random_round_trip(self, tmp_path):
        rng = random.Random(9)
        spec = make_random_spec(rng, name="rt", max_nodes=12)
        q = generate_validation({"rt": 2})
        config = PlatformConfig(entries=[{"type": "cpu", "kind": "core", "count": 2}],
                                manager_core=0, host_cores=4)
        result = engine.run(config, {"rt": spec}, q, mode="virtual")
        path = tmp_path / "rt.trace.json"
        write_trace(result.trace, path)
        again = read_trace(path)
        assert again.events == result.trace.events
        assert compute_report(again).to_obj() == result.report.to_obj()


class TestExports:
    def trace(self):
        return Trace(meta(["cpu", "fft"]), [
            ev(0, "inject", instance_id=0),
            ev(0, "sched_decision", duration_ns=4, policy="frfs", ready_len=1),
            *task_pair(0, "a", 0, 0, 10 * US),
            ev(10 * US, "sched_decision", duration_ns=6, policy="frfs", ready_len=0),
            *task_pair(0, "b", 1, 10 * US, 30 * US),
            ev(30 * US, "instance_complete", instance_id=0),
        ])

    def read(self, path):
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.reader(fh))

    def test_gantt(self, tmp_path):
        path = tmp_path / "g.csv"
        n = export_csv(self.trace(), "gantt", path)
        rows = self.read(path)
        assert rows[0] == ["pe_id", "instance_id", "node", "start_ns", "end_ns"]
        assert n == 2 and len(rows) == 3
        assert rows[1] == ["0", "0", "a", "0", "10000"]

    def test_utilization_sums_match_report(self, tmp_path):
        trace = self.trace()
        path = tmp_path / "u.csv"
        export_csv(trace, "utilization", path)
        rows = self.read(path)
        assert rows[0] == ["pe_id", "pe_type", "fraction"]
        report = compute_report(trace)
        got = {int(r[0]): float(r[2]) for r in rows[1:]}
        assert got == pytest.approx(report.utilization)
        assert rows[1][1] == "cpu" and rows[2][1] == "fft"

    def test_overhead_row_per_decision(self, tmp_path):
        trace = self.trace()
        path = tmp_path / "o.csv"
        n = export_csv(trace, "overhead", path)
        rows = self.read(path)
        assert rows[0] == ["cycle_index", "duration_ns", "ready_len"]
        assert n == len(trace.of_kind("sched_decision")) == 2
        assert rows[1] == ["0", "4", "1"]

    def test_latency(self, tmp_path):
        path = tmp_path / "l.csv"
        n = export_csv(self.trace(), "latency", path)
        rows = self.read(path)
        assert rows[0] == ["app", "instance_id", "latency_ns"]
        assert n == 1
        assert rows[1] == ["app", "0", "30000"]

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(TraceError, match="unknown export kind"):
            export_csv(self.trace(), "nope", tmp_path / "x.csv")

    def test_gantt_rows_non_overlapping_per_pe(self, tmp_path):
        rng = random.Random(21)
        spec = make_random_spec(rng, name="ov", max_nodes=14)
        q = generate_validation({"ov": 3})
        config = PlatformConfig(entries=[{"type": "cpu", "kind": "core", "count": 2}],
                                manager_core=0, host_cores=4)
        result = engine.run(config, {"ov": spec}, q, mode="virtual")
        path = tmp_path / "g.csv"
        export_csv(result.trace, "gantt", path)
        per_pe = {}
        for row in self.read(path)[1:]:
            per_pe.setdefault(row[0], []).append((int(row[3]), int(row[4])))
        for intervals in per_pe.values():
            intervals.sort()
            for (s1, e1), (s2, e2) in zip(intervals, intervals[1:]):
                assert e1 <= s2
