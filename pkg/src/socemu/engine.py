"""The workload-manager loop.

Wall-clock mode runs one thread per PE against real time: the manager
captures a reference start time, then repeatedly injects due applications,
harvests completions, maintains the ready list, runs the selected policy,
and dispatches through the per-PE handshake cells.  Virtual mode executes
the same loop single-threaded over a discrete-event clock using the cost
models (binding est_exec_time for cores, the DMA/processing model for
accelerators), which makes runs deterministic and oracle-checkable.

Per-cycle scheduling overhead is the measured time to monitor completions,
update the ready list, run the policy, and dispatch; in virtual mode it is
a configurable synthetic constant.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass, field

from . import appmodel, kernels as klib
from .metrics import Trace, TraceSink, compute_report, RunReport
from .platform import (
    IDLE,
    Platform,
    PlatformConfig,
    PlatformError,
    TaskDescriptor,
    build_platform,
    worker_loop,
)
from .schedulers import Assignment, PEView, ReadySet, ReadyTask, lookup_policy
from .workload import WorkloadQueue

__all__ = ["EngineError", "EmulationResult", "run"]

_YIELD_NS = 1_000


class EngineError(RuntimeError):
    pass


@dataclass
class EmulationResult:
    trace: Trace
    report: RunReport
    instances: dict[int, appmodel.ApplicationInstance]
    platform: Platform

    def __iter__(self):  # allows: trace, report = run(...)
        return iter((self.trace, self.report))


class _RunState:
    """Mutable emulation state owned by the manager."""

    def __init__(self, apps, queue: WorkloadQueue, platform: Platform, sink: TraceSink,
                 exec_kernels: bool, registry: klib.KernelRegistry):
        self.apps = apps
        self.entries = list(queue.entries)
        self.cursor = 0
        self.platform = platform
        self.sink = sink
        self.exec_kernels = exec_kernels
        self.registry = registry
        self.instances: dict[int, appmodel.ApplicationInstance] = {}
        self.live: set[int] = set()
        self.pending_preds: dict[int, dict[str, int]] = {}
        self.running_count: dict[int, int] = {}
        self.ready = ReadySet()
        self._pending_ready: list[ReadyTask] = []
        self.failed: list[int] = []

    # -- injection ------------------------------------------------------
    def inject_due(self, now: int) -> int:
        injected = 0
        while self.cursor < len(self.entries) and self.entries[self.cursor].arrival_ns <= now:
            entry = self.entries[self.cursor]
            self.cursor += 1
            spec = self.apps[entry.app_name]
            inst = appmodel.instantiate(spec, entry.instance_id, entry.arrival_ns)
            self.instances[entry.instance_id] = inst
            self.live.add(entry.instance_id)
            self.pending_preds[entry.instance_id] = inst.pending_predecessor_counts()
            self.running_count[entry.instance_id] = 0
            self.sink.emit(now, "inject", instance_id=entry.instance_id)
            for head in spec.head_nodes():
                self.mark_ready(entry.instance_id, head, now)
            injected += 1
        return injected

    def next_arrival(self) -> int | None:
        if self.cursor < len(self.entries):
            return self.entries[self.cursor].arrival_ns
        return None

    # -- ready list -----------------------------------------------------
    def mark_ready(self, instance_id: int, node_name: str, now: int) -> None:
        """Stage a task for the ready list; flush_ready() inserts the
        cycle's batch in (ready_time, instance_id, node) order so the
        FIFO iteration order equals the documented tie-break order."""
        inst = self.instances[instance_id]
        task = inst.tasks[node_name]
        task.advance(appmodel.READY)
        task.ready_time = now
        node = inst.spec.dag[node_name]
        comm_in = 0
        for pred in node.predecessors:
            comm_in += inst.spec.dag[pred].comm_bytes.get(node_name, 0)
        self._pending_ready.append(ReadyTask(
            instance_id=instance_id,
            node=node_name,
            ready_time=now,
            bindings=tuple((b.platform_name, b.est_exec_time) for b in node.platforms),
            comm_bytes_in=comm_in,
        ))
        self.sink.emit(now, "task_ready", instance_id=instance_id, node=node_name)

    def flush_ready(self) -> None:
        for task in sorted(self._pending_ready, key=lambda t: t.key):
            self.ready.add(task)
        self._pending_ready.clear()

    # -- completion bookkeeping ------------------------------------------
    def complete_task(self, instance_id: int, node_name: str, end: int, now: int,
                      ok: bool, error: str | None) -> None:
        inst = self.instances[instance_id]
        inst.tasks[node_name].advance(appmodel.COMPLETE)
        inst.tasks[node_name].end_time = end
        self.running_count[instance_id] -= 1
        if not ok:
            self.fail_instance(instance_id, error or "kernel failure", now)
        elif not inst.failed:
            newly = []
            for succ in inst.spec.dag[node_name].successors:
                self.pending_preds[instance_id][succ] -= 1
                if self.pending_preds[instance_id][succ] == 0:
                    newly.append(succ)
            for succ in sorted(newly):
                self.mark_ready(instance_id, succ, now)
        self._check_done(instance_id, now)

    def fail_instance(self, instance_id: int, reason: str, now: int) -> None:
        inst = self.instances[instance_id]
        if inst.failed:
            return
        inst.failed = True
        inst.failure_reason = reason
        self.failed.append(instance_id)
        for task in [t for t in self.ready if t.instance_id == instance_id]:
            self.ready.remove(task)
        self._pending_ready = [t for t in self._pending_ready if t.instance_id != instance_id]

    def _check_done(self, instance_id: int, now: int) -> None:
        inst = self.instances[instance_id]
        if inst.failed:
            if self.running_count[instance_id] == 0:
                self.live.discard(instance_id)
        elif inst.all_complete():
            self.live.discard(instance_id)
            self.sink.emit(now, "instance_complete", instance_id=instance_id)

    def finished(self) -> bool:
        return self.cursor >= len(self.entries) and not self.live

    # -- dispatch helpers -------------------------------------------------
    def build_descriptor(self, task: ReadyTask, pe, resolve_kernel: bool) -> TaskDescriptor:
        inst = self.instances[task.instance_id]
        node = inst.spec.dag[task.node]
        binding = node.binding_for(pe.pe_type)
        if binding is None:
            raise EngineError(f"PE type {pe.pe_type} not in bindings of {task.node}")
        handle = None
        if resolve_kernel:
            handle = self.registry.resolve(
                binding.run_func, binding.shared_object, inst.spec.shared_object
            )
        args = klib.bind_args(inst, task.node) if resolve_kernel else []
        nbytes = sum(inst.spec.variables[a].storage_bytes() for a in node.arguments)
        return TaskDescriptor(
            instance_id=task.instance_id,
            node=task.node,
            app_name=inst.spec.app_name,
            kernel=handle,
            args=args,
            est_ns=binding.est_exec_time,
            arg_bytes=nbytes,
            transfer_in_bytes=nbytes,
            transfer_out_bytes=nbytes,
        )

    def unschedulable_reason(self, task: ReadyTask) -> str | None:
        """Why a ready task can never be dispatched, if so."""
        types = {pe.pe_type for pe in self.platform.pes}
        if not any(t in types for t, _ in task.bindings):
            return f"no PE of any supported type {[t for t, _ in task.bindings]}"
        return "policy never selects it (missing est_exec_time?)"


def _instantiate_check(apps, queue):
    for entry in queue.entries:
        if entry.app_name not in apps:
            raise EngineError(f"workload references unknown app {entry.app_name!r}")
        report = appmodel.validate_dag(apps[entry.app_name])
        if not report.ok:
            raise EngineError(
                f"app {entry.app_name} fails validation: " + "; ".join(report.findings)
            )


def run(
    platform_config: PlatformConfig,
    apps: dict[str, appmodel.ApplicationSpec],
    queue: WorkloadQueue,
    policy: str = "frfs",
    mode: str = "wallclock",
    seed: int = 0,
    exec_kernels: bool = False,
    synthetic_overhead_ns: int = 0,
    monitor=None,
    registry: klib.KernelRegistry | None = None,
) -> EmulationResult:
    """Emulate a workload; returns the trace, report, and final instances.

    ``monitor`` is an optional callback(pe_id, old, new, actor) observing
    every handshake transition (wall-clock mode).
    """
    _instantiate_check(apps, queue)
    policy_fn = lookup_policy(policy)
    platform = build_platform(platform_config, monitor=monitor)
    sink = TraceSink()
    registry = registry or klib.KernelRegistry()
    state = _RunState(apps, queue, platform, sink, exec_kernels, registry)
    rng = random.Random(seed)

    if mode == "wallclock":
        _run_wallclock(state, platform, policy_fn, policy, rng, sink)
    elif mode == "virtual":
        _run_virtual(state, platform, policy_fn, policy, rng, sink, synthetic_overhead_ns)
    else:
        raise EngineError(f"unknown mode {mode!r}")

    meta = {
        "mode": mode,
        "policy": policy,
        "seed": seed,
        "pes": platform.describe(),
        "placement": {str(pe_id): core for pe_id, core in sorted(platform.placement.items())},
        "manager_core": platform.manager_core,
        "instances": [[e.instance_id, e.app_name, e.arrival_ns] for e in queue.entries],
        "failed_instances": sorted(state.failed),
        "config": {
            "policy": policy,
            "mode": mode,
            "seed": seed,
            "exec_kernels": exec_kernels,
            "pe_count": len(platform.pes),
            "warnings": platform.warnings,
        },
    }
    trace = Trace(meta=meta, events=sink.drain())
    report = compute_report(trace)
    return EmulationResult(trace=trace, report=report, instances=state.instances, platform=platform)


# ---------------------------------------------------------------------------
# Wall-clock mode
# ---------------------------------------------------------------------------


class _WallClock:
    def __init__(self):
        self.ref = time.perf_counter_ns()

    def now(self) -> int:
        return time.perf_counter_ns() - self.ref


def _run_wallclock(state: _RunState, platform: Platform, policy_fn, policy_name, rng, sink):
    state.exec_kernels = True  # wall-clock always executes kernels
    clock = _WallClock()
    stop = threading.Event()
    threads = []
    for pe, handler in zip(platform.pes, platform.handlers):
        t = threading.Thread(
            target=worker_loop,
            args=(pe, handler, clock, sink, stop),
            name=f"pe-{pe.pe_id}",
            daemon=True,
        )
        t.start()
        threads.append(t)

    try:
        while True:
            now = clock.now()
            state.inject_due(now)

            t0 = clock.now()
            # Phase 1: monitor completion status of the running tasks.
            done_handlers = [h for h in platform.handlers if h.status() == "complete"]
            # Phase 2: update the ready queue.
            for handler in done_handlers:
                harvested = handler.take_completion()
                if harvested is None:
                    continue
                task, record = harvested
                state.complete_task(
                    record.instance_id, record.node, record.end_ns, clock.now(),
                    record.ok, record.error,
                )
            state.flush_ready()
            # Phase 3: scheduling policy over a fresh snapshot.
            views = _snapshot_views(platform, clock.now())
            ready_len = len(state.ready)
            decision = policy_fn(state.ready, views, clock.now(), rng)
            # Phase 4: dispatch to resource handlers.
            for assignment in decision:
                _dispatch_wallclock(state, platform, assignment, clock, sink)
            t4 = clock.now()
            sink.emit(t0, "sched_decision", duration_ns=t4 - t0,
                      policy=policy_name, ready_len=ready_len)

            if state.finished():
                break
            if (
                not decision
                and state.cursor >= len(state.entries)
                and state.ready
                and not any(h.status() != IDLE for h in platform.handlers)
            ):
                _fail_stuck(state, clock.now())
                if state.finished():
                    break
            time.sleep(_YIELD_NS / 1e9)
    finally:
        stop.set()
        for t in threads:
            t.join(timeout=2.0)


def _snapshot_views(platform: Platform, now: int) -> list[PEView]:
    views = []
    for pe, handler in zip(platform.pes, platform.handlers):
        with handler.lock:
            status = handler._status
            task = handler.task_slot
            since = handler.run_since_ns
        est_available = now
        if status != IDLE and task is not None and since is not None:
            est = task.est_ns if task.est_ns is not None else 0
            est_available = max(now, since + est)
        views.append(PEView(
            pe_id=pe.pe_id,
            pe_type=pe.pe_type,
            status=status,
            est_available=est_available,
            transfer=(pe.accel.fixed_latency_ns, pe.accel.bytes_per_sec) if pe.accel else None,
        ))
    return views


def _dispatch_wallclock(state: _RunState, platform: Platform, assignment: Assignment, clock, sink):
    task = assignment.task
    pe = platform.pes[assignment.pe_id]
    inst = state.instances[task.instance_id]
    try:
        desc = state.build_descriptor(task, pe, resolve_kernel=True)
    except (klib.KernelError, EngineError, PlatformError) as exc:
        state.ready.remove(task)
        inst.tasks[task.node].advance(appmodel.RUNNING)
        state.running_count[task.instance_id] += 1
        state.complete_task(task.instance_id, task.node, clock.now(), clock.now(), False, str(exc))
        return
    state.ready.remove(task)
    tinst = inst.tasks[task.node]
    tinst.advance(appmodel.RUNNING)
    tinst.assigned_pe = assignment.pe_id
    tinst.start_time = clock.now()
    state.running_count[task.instance_id] += 1
    platform.handlers[assignment.pe_id].dispatch(desc, clock.now())
    sink.emit(clock.now(), "dispatch", instance_id=task.instance_id,
              node=task.node, pe_id=assignment.pe_id)


def _fail_stuck(state: _RunState, now: int):
    for task in list(state.ready):
        reason = state.unschedulable_reason(task)
        state.ready.remove(task)
        state.fail_instance(task.instance_id, f"task {task.node} unschedulable: {reason}", now)
        state._check_done(task.instance_id, now)


# ---------------------------------------------------------------------------
# Virtual (discrete-event) mode
# ---------------------------------------------------------------------------


@dataclass
class _RunningTask:
    desc: TaskDescriptor
    start_ns: int
    end_ns: int
    est_end_ns: int


def _run_virtual(state: _RunState, platform: Platform, policy_fn, policy_name, rng, sink,
                 synthetic_overhead_ns: int):
    now = 0
    running: dict[int, _RunningTask] = {}  # pe_id -> running task

    while True:
        state.inject_due(now)

        finished = sorted(
            (pe_id for pe_id, rt in running.items() if rt.end_ns <= now),
            key=lambda pe_id: (running[pe_id].end_ns, pe_id),
        )
        for pe_id in finished:
            rt = running.pop(pe_id)
            state.complete_task(rt.desc.instance_id, rt.desc.node, rt.end_ns, now, True, None)
        state.flush_ready()

        views = [
            PEView(
                pe_id=pe.pe_id,
                pe_type=pe.pe_type,
                status=("run" if pe.pe_id in running else IDLE),
                est_available=(max(now, running[pe.pe_id].est_end_ns) if pe.pe_id in running else now),
                transfer=(pe.accel.fixed_latency_ns, pe.accel.bytes_per_sec) if pe.accel else None,
            )
            for pe in platform.pes
        ]
        ready_len = len(state.ready)
        decision = policy_fn(state.ready, views, now, rng)
        sink.emit(now, "sched_decision", duration_ns=synthetic_overhead_ns,
                  policy=policy_name, ready_len=ready_len)
        for assignment in decision:
            _dispatch_virtual(state, platform, assignment, now + synthetic_overhead_ns, running, sink)

        if state.finished():
            break

        candidates = [rt.end_ns for rt in running.values()]
        arrival = state.next_arrival()
        if arrival is not None:
            candidates.append(max(arrival, now))
        if not candidates:
            _fail_stuck(state, now)
            if state.finished():
                break
            raise EngineError("virtual mode made no progress")  # pragma: no cover
        now = max(now, min(candidates))


def _dispatch_virtual(state: _RunState, platform: Platform, assignment: Assignment,
                      start: int, running: dict, sink):
    task = assignment.task
    pe = platform.pes[assignment.pe_id]
    inst = state.instances[task.instance_id]
    state.ready.remove(task)
    tinst = inst.tasks[task.node]
    tinst.advance(appmodel.RUNNING)
    tinst.assigned_pe = assignment.pe_id
    tinst.start_time = start
    state.running_count[task.instance_id] += 1
    sink.emit(start, "dispatch", instance_id=task.instance_id,
              node=task.node, pe_id=assignment.pe_id)

    try:
        if assignment.pe_id in running:
            raise EngineError(f"policy assigned busy PE {assignment.pe_id}")
        desc = state.build_descriptor(task, pe, resolve_kernel=state.exec_kernels)
        if pe.kind == "core":
            if desc.est_ns is None:
                raise EngineError(
                    f"virtual mode needs est_exec_time for {task.node} on {pe.pe_type}"
                )
            t_in = t_out = 0
            duration = desc.est_ns
        else:
            t_in = pe.accel.transfer(desc.transfer_in_bytes)
            t_out = pe.accel.transfer(desc.transfer_out_bytes)
            run_func = inst.spec.dag[task.node].binding_for(pe.pe_type).run_func
            process = pe.accel.process_ns(run_func)
            if desc.total_arg_bytes() > pe.accel.local_mem_bytes:
                raise PlatformError(
                    f"task arguments exceed accelerator local memory on PE {pe.pe_id}"
                )
            duration = t_in + process + t_out
        if state.exec_kernels:
            try:
                rc = klib.invoke(desc.kernel, desc.args)
            except Exception as exc:
                raise EngineError(f"kernel {desc.kernel.name} raised: {exc}") from exc
            if rc != 0:
                raise EngineError(f"kernel {desc.kernel.name} returned status {rc}")
    except (klib.KernelError, EngineError, PlatformError) as exc:
        state.complete_task(task.instance_id, task.node, start, start, False, str(exc))
        return

    end = start + duration
    est = desc.est_ns if desc.est_ns is not None else duration
    running[assignment.pe_id] = _RunningTask(desc=desc, start_ns=start, end_ns=end,
                                             est_end_ns=start + est)
    sink.emit(start, "task_start", instance_id=task.instance_id, node=task.node,
              pe_id=assignment.pe_id)
    if pe.kind != "core":
        sink.emit(start, "transfer_start", instance_id=task.instance_id, node=task.node,
                  pe_id=assignment.pe_id)
        sink.emit(start + t_in, "transfer_end", instance_id=task.instance_id,
                  node=task.node, pe_id=assignment.pe_id)
        sink.emit(end - t_out, "transfer_start", instance_id=task.instance_id,
                  node=task.node, pe_id=assignment.pe_id)
        sink.emit(end, "transfer_end", instance_id=task.instance_id, node=task.node,
                  pe_id=assignment.pe_id)
    sink.emit(end, "task_end", instance_id=task.instance_id, node=task.node,
              pe_id=assignment.pe_id)
