import random
import time

import pytest

from socemu.platform import IDLE, RUN
from socemu.schedulers import (
    Assignment,
    PEView,
    ReadySet,
    ReadyTask,
    available_policies,
    lookup_policy,
    register_policy,
    schedule_eft,
    schedule_frfs,
    schedule_met,
    schedule_random,
)

US = 1_000


def rt(iid, node, ready_time=0, bindings=(("cpu", 10 * US),), comm=0):
    return ReadyTask(instance_id=iid, node=node, ready_time=ready_time,
                     bindings=tuple(bindings), comm_bytes_in=comm)


def pe(pe_id, pe_type="cpu", status=IDLE, est_available=0, transfer=None):
    return PEView(pe_id=pe_id, pe_type=pe_type, status=status,
                  est_available=est_available, transfer=transfer)


def ready_set(*tasks):
    return ReadySet.from_tasks(tasks)


def pairs(decision):
    return [(a.task.node, a.pe_id) for a in decision]


class TestFRFS:
    def test_single_cpu_task(self):
        decision = schedule_frfs(ready_set(rt(0, "t")), [pe(0), pe(1, "fft")], 0)
        assert pairs(decision) == [("t", 0)]

    def test_two_tasks_two_types(self):
        tasks = [rt(0, "older", 0, (("cpu", 5 * US), ("fft", 5 * US))),
                 rt(1, "younger", 1, (("cpu", 5 * US), ("fft", 5 * US)))]
        decision = schedule_frfs(ready_set(*tasks), [pe(0), pe(1, "fft")], 2)
        assert sorted(pairs(decision)) == [("older", 0), ("younger", 1)]

    def test_all_busy_empty_decision(self):
        decision = schedule_frfs(ready_set(rt(0, "t")), [pe(0, status=RUN)], 0)
        assert decision == []

    def test_matches_bruteforce_scan(self):
        rng = random.Random(17)
        types = ["cpu", "fft", "gpu"]
        for _ in range(300):
            tasks = []
            for i in range(rng.randint(0, 8)):
                supported = rng.sample(types, rng.randint(1, 3))
                tasks.append(rt(i, f"t{i}", rng.randint(0, 5),
                                tuple((t, 10 * US) for t in sorted(supported))))
            pes = [pe(j, rng.choice(types), rng.choice([IDLE, RUN]))
                   for j in range(rng.randint(1, 5))]
            got = sorted((a.task.key, a.pe_id) for a in
                         schedule_frfs(ready_set(*tasks), pes, 9))
            want = sorted(_frfs_bruteforce(tasks, pes))
            assert got == want


def _frfs_bruteforce(tasks, pes):
    remaining = sorted(tasks, key=lambda t: t.key)
    out = []
    for view in sorted([p for p in pes if p.status == IDLE], key=lambda p: p.pe_id):
        for task in remaining:
            if any(t == view.pe_type for t, _ in task.bindings):
                out.append((task.key, view.pe_id))
                remaining.remove(task)
                break
    return out


class TestMET:
    def test_picks_strict_minimum(self):
        task = rt(0, "t", 0, (("cpu", 5 * US), ("fft", 1 * US)))
        decision = schedule_met(ready_set(task), [pe(0, "cpu"), pe(1, "fft")], 0)
        assert pairs(decision) == [("t", 1)]

    def test_waits_for_fast_type(self):
        task = rt(0, "t", 0, (("cpu", 5 * US), ("fft", 1 * US)))
        decision = schedule_met(ready_set(task), [pe(0, "cpu"), pe(1, "fft", RUN)], 0)
        assert decision == []

    def test_capacity_respects_fifo(self):
        a = rt(0, "a", 0, (("fft", 1 * US),))
        b = rt(1, "b", 1, (("fft", 1 * US),))
        decision = schedule_met(ready_set(a, b), [pe(0, "fft")], 2)
        assert pairs(decision) == [("a", 0)]

    def test_skips_missing_est(self):
        task = rt(0, "noest", 0, (("cpu", None),))
        assert schedule_met(ready_set(task), [pe(0)], 0) == []


class TestEFT:
    def test_waits_for_busy_faster_pe(self):
        task = rt(0, "t", 0, (("cpu", 10 * US), ("fft", 2 * US)))
        pes = [pe(0, "cpu"), pe(1, "fft", RUN, est_available=1 * US)]
        # EFT(fft) = 1 + 2 = 3 us < EFT(cpu) = 10 us -> wait for fft.
        assert schedule_eft(ready_set(task), pes, 0) == []

    def test_dispatches_to_idle_when_busy_loses(self):
        task = rt(0, "t", 0, (("cpu", 10 * US), ("fft", 2 * US)))
        pes = [pe(0, "cpu"), pe(1, "fft", RUN, est_available=9 * US)]
        # EFT(fft) = 11 us > EFT(cpu) = 10 us -> idle cpu wins.
        decision = schedule_eft(ready_set(task), pes, 0)
        assert pairs(decision) == [("t", 0)]

    def test_single_pe(self):
        task = rt(0, "t")
        assert pairs(schedule_eft(ready_set(task), [pe(0)], 0)) == [("t", 0)]
        assert schedule_eft(ready_set(task), [pe(0, status=RUN)], 0) == []

    def test_transfer_cost_counts(self):
        task = rt(0, "t", 0, (("cpu", 30 * US), ("fft", 1 * US)), comm=4096)
        # fft transfer: 20 us latency + 4096 B at 4096 B/ms = 1 ms -> cpu wins.
        pes = [pe(0, "cpu"), pe(1, "fft", transfer=(20 * US, 4_096_000))]
        decision = schedule_eft(ready_set(task), pes, 0)
        assert pairs(decision) == [("t", 0)]

    def test_second_task_sees_updated_availability(self):
        t1 = rt(0, "first", 0, (("cpu", 2 * US),))
        t2 = rt(1, "second", 1, (("cpu", 2 * US), ("fft", 3 * US)))
        pes = [pe(0, "cpu"), pe(1, "fft")]
        decision = schedule_eft(ready_set(t1, t2), pes, 0)
        # first -> cpu finishing at 2us; for second, cpu EFT = 4us > fft 3us.
        assert sorted(pairs(decision)) == [("first", 0), ("second", 1)]


class TestRandom:
    def test_single_option_deterministic(self):
        rng = random.Random(0)
        decision = schedule_random(ready_set(rt(0, "t")), [pe(0)], 0, rng)
        assert pairs(decision) == [("t", 0)]

    def test_uniform_within_3_sigma(self):
        hits = {0: 0, 1: 0}
        for s in range(10_000):
            rng = random.Random(s)
            decision = schedule_random(ready_set(rt(0, "t", bindings=(("cpu", None),))),
                                       [pe(0), pe(1)], 0, rng)
            hits[decision[0].pe_id] += 1
        sigma = (10_000 * 0.25) ** 0.5
        assert abs(hits[0] - 5000) < 3 * sigma

    def test_seed_reproducible(self):
        tasks = [rt(i, f"t{i}") for i in range(4)]
        pes = [pe(j) for j in range(4)]
        d1 = schedule_random(ready_set(*tasks), pes, 0, random.Random(5))
        d2 = schedule_random(ready_set(*tasks), pes, 0, random.Random(5))
        assert pairs(d1) == pairs(d2)


class TestRegistry:
    def test_lookup_builtin(self):
        assert lookup_policy("frfs") is schedule_frfs

    def test_unknown_lists_available(self):
        with pytest.raises(KeyError, match="frfs.*met.*random"):
            lookup_policy("bogus")

    def test_register_round_trip(self):
        def custom(ready, pes, now, rng=None):
            return []

        register_policy("custom-test", custom)
        assert lookup_policy("custom-test") is custom
        assert "custom-test" in available_policies()


class TestProperties:
    def test_decisions_always_legal(self):
        rng = random.Random(23)
        policies = [schedule_frfs, schedule_met, schedule_eft, schedule_random]
        types = ["cpu", "fft"]
        for trial in range(200):
            tasks = [rt(i, f"t{i}", rng.randint(0, 3),
                        tuple((t, rng.randint(1, 20) * US)
                              for t in sorted(rng.sample(types, rng.randint(1, 2)))))
                     for i in range(rng.randint(0, 6))]
            pes = [pe(j, rng.choice(types), rng.choice([IDLE, RUN]),
                      est_available=rng.randint(0, 50) * US)
                   for j in range(rng.randint(1, 5))]
            for policy in policies:
                decision = policy(ready_set(*tasks), pes, 4, random.Random(trial))
                seen_pes = set()
                for a in decision:
                    assert a.pe_id not in seen_pes
                    seen_pes.add(a.pe_id)
                    view = pes[a.pe_id]
                    assert view.status == IDLE
                    assert a.task.supports(view.pe_type)

    def test_argmin_scale_invariance(self):
        rng = random.Random(31)
        for _ in range(100):
            ests = [rng.randint(1, 100) * US for _ in range(2)]
            lat = rng.randint(0, 30) * US
            for scale in (3, 17):
                base_task = rt(0, "t", 0, (("cpu", ests[0]), ("fft", ests[1])))
                scaled_task = rt(0, "t", 0, (("cpu", ests[0] * scale),
                                             ("fft", ests[1] * scale)))
                base_pes = [pe(0, "cpu"), pe(1, "fft", transfer=(lat, 1 << 40))]
                scaled_pes = [pe(0, "cpu"), pe(1, "fft", transfer=(lat * scale, 1 << 40))]
                for policy in (schedule_met, schedule_eft):
                    d1 = policy(ready_set(base_task), base_pes, 0)
                    d2 = policy(ready_set(scaled_task), scaled_pes, 0)
                    assert [a.pe_id for a in d1] == [a.pe_id for a in d2]

    def test_decision_cost_scaling(self):
        # FRFS stays near-flat in ready-list length; EFT grows with it.
        def mean_time(policy, n_tasks, reps=30):
            tasks = [rt(i, f"t{i:05d}", i, (("cpu", 10 * US),)) for i in range(n_tasks)]
            rs = ready_set(*tasks)
            pes = [pe(j, "cpu", RUN) for j in range(4)] + [pe(4, "cpu", IDLE)]
            t0 = time.perf_counter_ns()
            for _ in range(reps):
                policy(rs, pes, 0)
            return (time.perf_counter_ns() - t0) / reps

        frfs_small, frfs_big = mean_time(schedule_frfs, 10), mean_time(schedule_frfs, 2000)
        eft_small, eft_big = mean_time(schedule_eft, 10), mean_time(schedule_eft, 2000)
        assert eft_big / eft_small > 10  # ~200x more work
        assert frfs_big / frfs_small < (eft_big / eft_small) / 4
