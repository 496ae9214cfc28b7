import math
import random
import threading
import time
from fractions import Fraction

import pytest

from socemu.kernels import ArgView, KernelRegistry
from socemu.platform import (
    COMPLETE,
    IDLE,
    RUN,
    AccelModel,
    CompletionRecord,
    PlatformConfig,
    PlatformError,
    ResourceHandler,
    TaskDescriptor,
    build_platform,
    pe_run_accelerator,
    pe_run_core,
    platform_from_arg,
    transfer_time,
)

US = 1_000


class FakeClock:
    """Wall-clock stand-in with a controllable origin."""

    def __init__(self):
        self.ref = time.perf_counter_ns()

    def now(self):
        return time.perf_counter_ns() - self.ref


def busy_task(duration_ns, registry=None, **kw):
    registry = registry or KernelRegistry()
    handle = registry.resolve("busy", None, "builtin")
    buf = bytearray(duration_ns.to_bytes(8, "little"))
    return TaskDescriptor(
        instance_id=0, node="t", app_name="x", kernel=handle,
        args=[ArgView("d", buf)], est_ns=duration_ns,
        arg_bytes=8, transfer_in_bytes=8, transfer_out_bytes=8, **kw,
    )


class TestTransferTime:
    def test_zero_bytes_latency_only(self):
        assert transfer_time(0, 5 * US, 123) == 5 * US

    def test_one_second_case(self):
        assert transfer_time(4096, 0, 4096) == 1_000_000_000

    def test_matches_rational_oracle(self):
        rng = random.Random(2)
        for _ in range(200):
            nbytes = rng.randint(0, 1 << 20)
            lat = rng.randint(0, 100_000)
            bps = rng.randint(1, 1 << 32)
            if nbytes == 0:
                want = lat
            else:
                want = lat + math.ceil(Fraction(nbytes * 10**9, bps))
            assert transfer_time(nbytes, lat, bps) == want


class TestPlacement:
    def test_zcu102_like_four_core_host(self):
        config = platform_from_arg("zcu102-like")
        config.host_cores = 4
        plat = build_platform(config)
        assert len(plat.pes) == 5
        cores = [plat.placement[pe.pe_id] for pe in plat.pes if pe.kind == "core"]
        assert sorted(cores) == [1, 2, 3]
        accel = [plat.placement[pe.pe_id] for pe in plat.pes if pe.kind == "accelerator"]
        assert sorted(accel) == [1, 2]  # round-robin back over pool cores
        assert plat.manager_core == 0
        assert any("shared" in w for w in plat.warnings)

    def test_single_cpu(self):
        plat = build_platform(PlatformConfig(entries=[{"type": "cpu", "kind": "core", "count": 1}],
                                             manager_core=0, host_cores=4))
        assert plat.placement[0] == 1
        assert plat.warnings == []

    def test_accel_only_two_host_cores_warns(self):
        accel = AccelModel(1000, 1 << 20, {"*": 1000}, 1 << 20)
        config = PlatformConfig(
            entries=[{"type": "fft", "kind": "accelerator", "count": 2, "accel": accel}],
            manager_core=0, host_cores=2)
        plat = build_platform(config)
        assert plat.placement[0] == plat.placement[1] == 1
        assert any("shared by PE workers" in w for w in plat.warnings)

    def test_zero_pes_rejected(self):
        with pytest.raises(PlatformError, match="zero PEs"):
            build_platform(PlatformConfig(entries=[], manager_core=0))

    def test_preset_overrides(self):
        config = platform_from_arg("zcu102-like,fft=1,cpu=2")
        counts = {e["type"]: e["count"] for e in config.entries}
        assert counts == {"cpu": 2, "fft": 1}


class TestHandshake:
    def test_legal_sequence(self):
        log = []
        handler = ResourceHandler(0, monitor=lambda *a: log.append(a))
        handler.dispatch(busy_task(1000), 0)
        handler.complete(CompletionRecord(0, "t", 0, 0, 10))
        assert handler.take_completion() is not None
        assert log == [(0, IDLE, RUN, "manager"),
                       (0, RUN, COMPLETE, "worker"),
                       (0, COMPLETE, IDLE, "manager")]

    def test_illegal_transitions_raise(self):
        handler = ResourceHandler(0)
        with pytest.raises(PlatformError):
            handler.complete(CompletionRecord(0, "t", 0, 0, 1))  # idle -> complete
        with pytest.raises(PlatformError):
            handler.transition(COMPLETE, "manager")
        handler.dispatch(busy_task(1000), 0)
        with pytest.raises(PlatformError):
            handler.dispatch(busy_task(1000), 0)  # run -> run

    def test_wrong_party_rejected(self):
        handler = ResourceHandler(0)
        with pytest.raises(PlatformError):
            handler.transition(RUN, "worker")


class TestCorePath:
    def test_busy_timing(self):
        clock = FakeClock()
        handler = ResourceHandler(0)
        handler.dispatch(busy_task(1_000_000), clock.now())
        record = pe_run_core(handler.task_slot, handler, clock)
        assert record.ok
        assert record.end_ns - record.start_ns >= 1_000_000
        assert handler.status() == COMPLETE

    def test_failing_kernel_still_completes(self):
        def boom(args):
            raise RuntimeError("bad kernel")

        from socemu.kernels import KernelHandle

        task = busy_task(1000)
        task.kernel = KernelHandle("boom", "builtin", boom)
        clock = FakeClock()
        handler = ResourceHandler(0)
        handler.dispatch(task, clock.now())
        record = pe_run_core(task, handler, clock)
        assert not record.ok
        assert "bad kernel" in record.error
        assert handler.status() == COMPLETE


class TestAcceleratorPath:
    MODEL = AccelModel(fixed_latency_ns=5 * US, bytes_per_sec=400_000_000,
                       process_time={"busy": 10 * US}, local_mem_bytes=1 << 20)

    def test_modeled_durations(self):
        # 2048 B in, 4096 B out at 400 MB/s with 5 us latency and 10 us
        # processing: 5+5.12 + 10 + 5+10.24 ~= 35.4 us of modeled busy time.
        t_in = self.MODEL.transfer(2048)
        t_out = self.MODEL.transfer(4096)
        assert t_in == 5 * US + 5120
        assert t_out == 5 * US + 10240
        total = t_in + 10 * US + t_out
        assert abs(total - 35_360) <= 1

    def test_accelerator_run_times_and_result(self):
        clock = FakeClock()
        handler = ResourceHandler(1)
        task = busy_task(0)
        task.process_ns = 2 * US
        task.transfer_in_bytes = 2048
        task.transfer_out_bytes = 4096
        handler.dispatch(task, clock.now())
        record = pe_run_accelerator(task, handler, clock, self.MODEL)
        assert record.ok
        assert record.transfer_in_ns == self.MODEL.transfer(2048)
        assert record.transfer_out_ns == self.MODEL.transfer(4096)
        modeled = record.transfer_in_ns + 2 * US + record.transfer_out_ns
        # Sleep overshoot allowed; never faster than the model.
        assert record.end_ns - record.start_ns >= modeled
        assert handler.status() == COMPLETE

    def test_zero_byte_transfers(self):
        assert self.MODEL.transfer(0) == 5 * US

    def test_local_memory_exceeded(self):
        clock = FakeClock()
        handler = ResourceHandler(1)
        model = AccelModel(0, 1 << 30, {"busy": 1000}, local_mem_bytes=4)
        task = busy_task(0)
        handler.dispatch(task, clock.now())
        record = pe_run_accelerator(task, handler, clock, model)
        assert not record.ok
        assert "local memory" in record.error
        assert handler.status() == COMPLETE

    def test_unknown_process_time(self):
        model = AccelModel(0, 1 << 30, {}, 1 << 20)
        with pytest.raises(PlatformError, match="process_time"):
            model.process_ns("mystery")

    def test_worker_sleeps_during_processing(self):
        # No progress events from the worker between transfer-in end and
        # transfer-out start.
        class Sink:
            def __init__(self):
                self.events = []

            def emit(self, t, kind, **kw):
                self.events.append((t, kind))

        clock = FakeClock()
        sink = Sink()
        handler = ResourceHandler(1)
        task = busy_task(0)
        task.process_ns = 3 * US
        handler.dispatch(task, clock.now())
        pe_run_accelerator(task, handler, clock, self.MODEL, sink)
        kinds = [k for _, k in sink.events]
        assert kinds == ["task_start", "transfer_start", "transfer_end",
                         "transfer_start", "transfer_end", "task_end"]
        t_in_end = sink.events[2][0]
        t_out_start = sink.events[3][0]
        assert t_out_start - t_in_end >= 3 * US


class TestConcurrentHandshake:
    def test_monitor_sees_only_legal_transitions(self):
        transitions = []
        lock = threading.Lock()

        def monitor(pe_id, old, new, actor):
            with lock:
                transitions.append((old, new, actor))

        handler = ResourceHandler(0, monitor=monitor)
        clock = FakeClock()
        stop = threading.Event()

        def worker():
            while not stop.is_set():
                task = None
                with handler.lock:
                    if handler._status == RUN:
                        task = handler.task_slot
                if task is not None:
                    pe_run_core(task, handler, clock)
                else:
                    time.sleep(1e-5)

        thread = threading.Thread(target=worker, daemon=True)
        thread.start()
        for _ in range(50):
            handler.dispatch(busy_task(1000), clock.now())
            while handler.take_completion() is None:
                time.sleep(1e-5)
        stop.set()
        thread.join()
        legal = {(IDLE, RUN, "manager"), (RUN, COMPLETE, "worker"),
                 (COMPLETE, IDLE, "manager")}
        assert set(transitions) <= legal
        assert len(transitions) == 150
