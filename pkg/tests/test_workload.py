import random

import pytest

from socemu.fixtures import TABLE2_APP_ORDER, TABLE2_ROWS, T_END_NS, table2_injections
from socemu.workload import (
    InjectionSpec,
    WorkloadError,
    generate_performance,
    generate_validation,
    merge,
    parse_workload,
)

MS = 1_000_000


class TestValidation:
    def test_three_instances_at_zero(self):
        q = generate_validation({"range_detection": 3})
        assert len(q) == 3
        assert all(e.arrival_ns == 0 for e in q)
        assert [e.instance_id for e in q] == [0, 1, 2]

    def test_empty(self):
        assert len(generate_validation({})) == 0

    def test_sorted_by_app_then_index(self):
        q = generate_validation({"b": 1, "a": 2})
        assert [e.app_name for e in q] == ["a", "a", "b"]
        assert [e.instance_id for e in q] == [0, 1, 2]

    def test_unknown_app(self):
        with pytest.raises(WorkloadError, match="unknown app"):
            generate_validation({"ghost": 1}, known_apps={"a"})


class TestPerformance:
    def test_range_detection_row_count(self):
        period = 100 * MS // 123
        assert period == 813008
        q = generate_performance([InjectionSpec("range_detection", period, 1.0)],
                                 100 * MS, seed=9)
        assert len(q) == 123

    def test_table2_totals(self):
        for rate, counts in TABLE2_ROWS.items():
            q = generate_performance(table2_injections(rate), T_END_NS, seed=5)
            for app, expected in zip(TABLE2_APP_ORDER, counts):
                assert q.count_for(app) == expected, (rate, app)
            total = sum(counts)
            assert abs(total / (T_END_NS / MS) - float(rate)) < 0.01

    def test_probability_zero(self):
        q = generate_performance([InjectionSpec("a", 10, 0.0)], 1000, seed=1)
        assert len(q) == 0

    def test_deterministic_for_seed(self):
        injections = [InjectionSpec("a", 997, 0.5), InjectionSpec("b", 1009, 0.5)]
        q1 = generate_performance(injections, 100_000, seed=42)
        q2 = generate_performance(injections, 100_000, seed=42)
        assert q1.entries == q2.entries
        q3 = generate_performance(injections, 100_000, seed=43)
        assert q1.entries != q3.entries

    def test_adding_app_does_not_perturb_others(self):
        a_only = generate_performance([InjectionSpec("a", 997, 0.5)], 100_000, seed=7)
        both = generate_performance(
            [InjectionSpec("a", 997, 0.5), InjectionSpec("b", 1009, 0.5)],
            100_000, seed=7)
        assert [e.arrival_ns for e in a_only] == \
               [e.arrival_ns for e in both if e.app_name == "a"]

    def test_full_probability_count_exact(self):
        rng = random.Random(3)
        for _ in range(30):
            period = rng.randint(1, 5000)
            t_end = rng.randint(period, 200_000)
            q = generate_performance([InjectionSpec("a", period, 1.0)], t_end, seed=1)
            assert len(q) == t_end // period

    def test_mean_count_tracks_probability(self):
        # Binomial: mean p*floor(t_end/period) within 3 sigma over many seeds.
        period, t_end, p = 100, 100_000, 0.3
        ticks = t_end // period
        counts = [
            len(generate_performance([InjectionSpec("a", period, p)], t_end, seed=s))
            for s in range(200)
        ]
        mean = sum(counts) / len(counts)
        sigma = (ticks * p * (1 - p)) ** 0.5 / len(counts) ** 0.5
        assert abs(mean - p * ticks) < 3 * sigma

    def test_arrival_bounds(self):
        q = generate_performance([InjectionSpec("a", 7, 1.0)], 1000, seed=1)
        assert all(0 < e.arrival_ns <= 1000 for e in q)
        assert [e.arrival_ns for e in q] == sorted(e.arrival_ns for e in q)


class TestMerge:
    def test_merge_empty_identity(self):
        q = generate_validation({"a": 2})
        merged = merge(generate_validation({}), q)
        assert [(e.arrival_ns, e.app_name) for e in merged] == \
               [(e.arrival_ns, e.app_name) for e in q]

    def test_merge_orders_by_time(self):
        from socemu.workload import QueueEntry, WorkloadQueue

        q1 = WorkloadQueue([QueueEntry(5, "a", 0)])
        q2 = WorkloadQueue([QueueEntry(3, "b", 0)])
        merged = merge(q1, q2)
        assert [(e.arrival_ns, e.app_name) for e in merged] == [(3, "b"), (5, "a")]
        assert [e.instance_id for e in merged] == [0, 1]

    def test_merge_random_queues_sorted(self):
        rng = random.Random(8)
        for _ in range(25):
            queues = [
                generate_performance([InjectionSpec(f"a{i}", rng.randint(3, 50), 0.8)],
                                     5_000, seed=i)
                for i in range(3)
            ]
            merged = merge(*queues)
            times = [e.arrival_ns for e in merged]
            assert times == sorted(times)
            assert [e.instance_id for e in merged] == list(range(len(merged)))


class TestWorkloadFiles:
    def test_parse_validation(self):
        spec = parse_workload({"mode": "validation", "counts": {"a": 2}})
        assert spec.validation_counts == {"a": 2}

    def test_parse_performance(self):
        spec = parse_workload({
            "mode": "performance",
            "injections": [{"app": "a", "period_ns": 100, "probability": 0.5}],
            "t_end_ns": 1000,
            "seed": 3,
        })
        assert spec.injections[0].period_ns == 100
        assert spec.seed == 3

    def test_bad_mode(self):
        with pytest.raises(WorkloadError, match="unknown workload mode"):
            parse_workload({"mode": "oops"})
