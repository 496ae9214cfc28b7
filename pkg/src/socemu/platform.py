"""Emulated processing elements and their resource-manager workers.

Core PEs execute kernels directly.  Accelerator PEs are latency-modeled:
the worker busy-copies arguments in (transfer time from the DMA model),
sleeps for the configured processing time while the functional result is
produced by the kernel's builtin reference, then busy-copies results out.

Each PE owns a ResourceHandler: a lock-protected cell carrying the
idle/run/complete handshake between the manager and the PE worker.  The
manager flips idle->run and complete->idle; only the worker flips
run->complete.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field

from . import kernels as klib

__all__ = [
    "PlatformError",
    "IDLE",
    "RUN",
    "COMPLETE",
    "AccelModel",
    "ProcessorElement",
    "ResourceHandler",
    "PlatformConfig",
    "Platform",
    "TaskDescriptor",
    "CompletionRecord",
    "transfer_time",
    "build_platform",
    "pe_run_core",
    "pe_run_accelerator",
    "load_platform",
    "platform_from_arg",
    "PRESETS",
]

log = logging.getLogger(__name__)

IDLE = "idle"
RUN = "run"
COMPLETE = "complete"

# (old, new) -> party allowed to perform the transition.
_LEGAL = {
    (IDLE, RUN): "manager",
    (RUN, COMPLETE): "worker",
    (COMPLETE, IDLE): "manager",
}

_POLL_MIN_NS = 1_000
_POLL_MAX_NS = 100_000


class PlatformError(RuntimeError):
    pass


def transfer_time(nbytes: int, fixed_latency_ns: int, bytes_per_sec: int) -> int:
    """Modeled DMA cost: fixed latency plus ceil(bytes / rate) in ns."""
    if nbytes == 0:
        return fixed_latency_ns
    return fixed_latency_ns + (nbytes * 1_000_000_000 + bytes_per_sec - 1) // bytes_per_sec


@dataclass
class AccelModel:
    fixed_latency_ns: int
    bytes_per_sec: int
    process_time: dict[str, int]  # kernel symbol -> ns, "*" as default
    local_mem_bytes: int

    def transfer(self, nbytes: int) -> int:
        return transfer_time(nbytes, self.fixed_latency_ns, self.bytes_per_sec)

    def process_ns(self, run_func: str) -> int:
        if run_func in self.process_time:
            return self.process_time[run_func]
        if "*" in self.process_time:
            return self.process_time["*"]
        raise PlatformError(f"no process_time configured for kernel {run_func!r}")


@dataclass
class ProcessorElement:
    pe_id: int
    pe_type: str
    kind: str  # "core" | "accelerator"
    accel: AccelModel | None = None
    host_core_hint: int | None = None

    def __post_init__(self):
        if self.kind == "accelerator" and self.accel is None:
            raise PlatformError(f"accelerator PE {self.pe_id} needs an accel model")


@dataclass
class TaskDescriptor:
    """Everything a PE worker needs to run one task."""

    instance_id: int
    node: str
    app_name: str
    kernel: klib.KernelHandle
    args: list
    est_ns: int | None
    process_ns: int | None = None  # accelerator path only
    arg_bytes: int = 0  # total argument storage, from the variable specs
    transfer_in_bytes: int = 0
    transfer_out_bytes: int = 0

    def total_arg_bytes(self) -> int:
        return self.arg_bytes


@dataclass
class CompletionRecord:
    instance_id: int
    node: str
    pe_id: int
    start_ns: int
    end_ns: int
    transfer_in_ns: int = 0
    transfer_out_ns: int = 0
    ok: bool = True
    error: str | None = None


class ResourceHandler:
    """The per-PE handshake cell; every status access happens under the lock."""

    def __init__(self, pe_id: int, monitor=None):
        self.pe_id = pe_id
        self.lock = threading.Lock()
        self._status = IDLE
        self.task_slot: TaskDescriptor | None = None
        self.record: CompletionRecord | None = None
        self.run_since_ns: int | None = None
        self.monitor = monitor  # callback(pe_id, old, new, actor)

    def status(self) -> str:
        with self.lock:
            return self._status

    def transition(self, new: str, actor: str) -> None:
        with self.lock:
            old = self._status
            party = _LEGAL.get((old, new))
            if party is None or party != actor:
                raise PlatformError(
                    f"illegal handshake transition {old}->{new} by {actor} on PE {self.pe_id}"
                )
            self._status = new
            if self.monitor is not None:
                self.monitor(self.pe_id, old, new, actor)

    def dispatch(self, task: TaskDescriptor, now_ns: int) -> None:
        """Manager-side: publish the task and flip idle->run atomically."""
        with self.lock:
            if self._status != IDLE:
                raise PlatformError(f"dispatch to non-idle PE {self.pe_id}")
            self.task_slot = task
            self.record = None
            self.run_since_ns = now_ns
            self._status = RUN
            if self.monitor is not None:
                self.monitor(self.pe_id, IDLE, RUN, "manager")

    def take_completion(self) -> tuple[TaskDescriptor, CompletionRecord] | None:
        """Manager-side: if complete, harvest the record and flip to idle."""
        with self.lock:
            if self._status != COMPLETE:
                return None
            task, record = self.task_slot, self.record
            self.task_slot = None
            self.record = None
            self.run_since_ns = None
            self._status = IDLE
            if self.monitor is not None:
                self.monitor(self.pe_id, COMPLETE, IDLE, "manager")
            return task, record

    def complete(self, record: CompletionRecord) -> None:
        """Worker-side: publish the result before flipping run->complete."""
        with self.lock:
            if self._status != RUN:
                raise PlatformError(f"completion on PE {self.pe_id} while {self._status}")
            self.record = record
            self._status = COMPLETE
            if self.monitor is not None:
                self.monitor(self.pe_id, RUN, COMPLETE, "worker")


@dataclass
class PlatformConfig:
    entries: list[dict]  # {type, kind, count, accel?}
    manager_core: int = 0
    host_cores: int | None = None

    def pe_count(self) -> int:
        return sum(e["count"] for e in self.entries)


@dataclass
class Platform:
    pes: list[ProcessorElement]
    handlers: list[ResourceHandler]
    placement: dict[int, int]  # pe_id -> host core
    manager_core: int
    warnings: list[str] = field(default_factory=list)
    config: PlatformConfig | None = None

    def handler(self, pe_id: int) -> ResourceHandler:
        return self.handlers[pe_id]

    def describe(self) -> list[dict]:
        return [
            {
                "pe_id": pe.pe_id,
                "pe_type": pe.pe_type,
                "kind": pe.kind,
                "host_core": self.placement.get(pe.pe_id),
            }
            for pe in self.pes
        ]


def build_platform(config: PlatformConfig, monitor=None) -> Platform:
    """Instantiate PEs, handlers, and the worker-to-host-core placement map.

    Core workers take distinct unused host cores first; accelerator workers
    fill the remaining unused cores, then round-robin across the pool.
    """
    if config.pe_count() == 0:
        raise PlatformError("platform has zero PEs")
    host_cores = config.host_cores or os.cpu_count() or 1
    pool = [c for c in range(host_cores) if c != config.manager_core]
    warnings: list[str] = []
    if not pool:
        pool = [config.manager_core]
        warnings.append("single host core: PE workers share the manager core")

    pes: list[ProcessorElement] = []
    pe_id = 0
    for entry in config.entries:
        accel = entry.get("accel")
        for _ in range(entry["count"]):
            pes.append(
                ProcessorElement(
                    pe_id=pe_id,
                    pe_type=entry["type"],
                    kind=entry["kind"],
                    accel=accel,
                )
            )
            pe_id += 1

    placement: dict[int, int] = {}
    unused = list(pool)
    for pe in pes:
        if pe.kind == "core":
            if unused:
                placement[pe.pe_id] = unused.pop(0)
            else:
                placement[pe.pe_id] = pool[pe.pe_id % len(pool)]
    rr = 0
    for pe in pes:
        if pe.kind != "core":
            if unused:
                placement[pe.pe_id] = unused.pop(0)
            else:
                placement[pe.pe_id] = pool[rr % len(pool)]
                rr += 1

    by_core: dict[int, list[int]] = {}
    for pid, core in placement.items():
        by_core.setdefault(core, []).append(pid)
    for core, ids in sorted(by_core.items()):
        if len(ids) > 1:
            warnings.append(
                f"host core {core} shared by PE workers {sorted(ids)}; "
                "expect preemption noise"
            )
        if core == config.manager_core and config.pe_count() <= len(pool):
            warnings.append(f"PE workers {sorted(ids)} share the manager core {core}")
    for w in warnings:
        log.warning("%s", w)

    handlers = [ResourceHandler(pe.pe_id, monitor=monitor) for pe in pes]
    for pe in pes:
        pe.host_core_hint = placement[pe.pe_id]
    return Platform(
        pes=pes,
        handlers=handlers,
        placement=placement,
        manager_core=config.manager_core,
        warnings=warnings,
        config=config,
    )


# ---------------------------------------------------------------------------
# Worker execution paths (wall-clock mode)
# ---------------------------------------------------------------------------


def _spin_until(clock, target_ns: int) -> None:
    while clock.now() < target_ns:
        pass


def pe_run_core(task: TaskDescriptor, handler: ResourceHandler, clock, sink=None) -> CompletionRecord:
    """Execute a task on a core PE: invoke the kernel, no modeled transfers."""
    start = clock.now()
    _emit(sink, start, "task_start", task, handler.pe_id)
    ok, err = True, None
    try:
        rc = klib.invoke(task.kernel, task.args)
        if rc != 0:
            ok, err = False, f"kernel {task.kernel.name} returned status {rc}"
    except Exception as exc:  # kernel failures surface in the record
        ok, err = False, f"kernel {task.kernel.name} raised: {exc}"
    end = clock.now()
    _emit(sink, end, "task_end", task, handler.pe_id)
    record = CompletionRecord(
        instance_id=task.instance_id,
        node=task.node,
        pe_id=handler.pe_id,
        start_ns=start,
        end_ns=end,
        ok=ok,
        error=err,
    )
    handler.complete(record)
    return record


def pe_run_accelerator(
    task: TaskDescriptor,
    handler: ResourceHandler,
    clock,
    accel: AccelModel,
    sink=None,
) -> CompletionRecord:
    """Latency-modeled accelerator run: transfer in, sleep through
    processing, transfer out.  The functional result comes from the bound
    kernel's reference implementation."""
    pe_id = handler.pe_id
    start = clock.now()
    if task.total_arg_bytes() > accel.local_mem_bytes:
        record = CompletionRecord(
            instance_id=task.instance_id,
            node=task.node,
            pe_id=pe_id,
            start_ns=start,
            end_ns=clock.now(),
            ok=False,
            error=(
                f"task arguments ({task.total_arg_bytes()} B) exceed accelerator "
                f"local memory ({accel.local_mem_bytes} B)"
            ),
        )
        handler.complete(record)
        return record

    t_in = accel.transfer(task.transfer_in_bytes)
    t_out = accel.transfer(task.transfer_out_bytes)
    process = task.process_ns if task.process_ns is not None else accel.process_ns(task.kernel.name)

    _emit(sink, start, "task_start", task, pe_id)
    _emit(sink, start, "transfer_start", task, pe_id)
    # Busy-copy into "local memory": the worker owns the host core during
    # the transfer, exactly like a DMA setup + drain loop would.
    scratch = b"".join(bytes(v.buf) for v in task.args)  # noqa: F841
    _spin_until(clock, start + t_in)
    _emit(sink, clock.now(), "transfer_end", task, pe_id)

    ok, err = True, None
    try:
        rc = klib.invoke(task.kernel, task.args)
        if rc != 0:
            ok, err = False, f"kernel {task.kernel.name} returned status {rc}"
    except Exception as exc:
        ok, err = False, f"kernel {task.kernel.name} raised: {exc}"

    # The worker sleeps while the modeled accelerator processes.
    time.sleep(process / 1e9)

    out_start = clock.now()
    _emit(sink, out_start, "transfer_start", task, pe_id)
    _spin_until(clock, out_start + t_out)
    end = clock.now()
    _emit(sink, end, "transfer_end", task, pe_id)
    _emit(sink, end, "task_end", task, pe_id)

    record = CompletionRecord(
        instance_id=task.instance_id,
        node=task.node,
        pe_id=pe_id,
        start_ns=start,
        end_ns=end,
        transfer_in_ns=t_in,
        transfer_out_ns=t_out,
        ok=ok,
        error=err,
    )
    handler.complete(record)
    return record


def _emit(sink, t, kind, task, pe_id):
    if sink is not None:
        sink.emit(t, kind, instance_id=task.instance_id, node=task.node, pe_id=pe_id)


def worker_loop(pe: ProcessorElement, handler: ResourceHandler, clock, sink, stop: threading.Event):
    """Dedicated per-PE worker: pin affinity, then poll the handshake cell
    with bounded exponential backoff."""
    if pe.host_core_hint is not None:
        try:
            os.sched_setaffinity(0, {pe.host_core_hint})
        except (AttributeError, OSError):
            pass
    backoff = _POLL_MIN_NS
    while not stop.is_set():
        task = None
        with handler.lock:
            if handler._status == RUN and handler.task_slot is not None:
                task = handler.task_slot
        if task is None:
            time.sleep(backoff / 1e9)
            backoff = min(backoff * 2, _POLL_MAX_NS)
            continue
        backoff = _POLL_MIN_NS
        if pe.kind == "core":
            pe_run_core(task, handler, clock, sink)
        else:
            pe_run_accelerator(task, handler, clock, pe.accel, sink)


# ---------------------------------------------------------------------------
# Platform files and presets
# ---------------------------------------------------------------------------


def _parse_accel(obj: dict) -> AccelModel:
    return AccelModel(
        fixed_latency_ns=int(obj["fixed_latency_ns"]),
        bytes_per_sec=int(obj["bytes_per_sec"]),
        process_time={k: int(v) for k, v in obj.get("process_time", {}).items()},
        local_mem_bytes=int(obj.get("local_mem_bytes", 1 << 20)),
    )


def parse_platform(doc: dict) -> PlatformConfig:
    entries = []
    for item in doc.get("pes", []):
        entry = {
            "type": str(item["type"]),
            "kind": str(item.get("kind", "core")),
            "count": int(item.get("count", 1)),
        }
        if entry["kind"] == "accelerator":
            entry["accel"] = _parse_accel(item["accel"])
        entries.append(entry)
    if not entries:
        raise PlatformError("platform file declares no PEs")
    return PlatformConfig(
        entries=entries,
        manager_core=int(doc.get("manager_core", 0)),
        host_cores=doc.get("host_cores"),
    )


def load_platform(path) -> PlatformConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_platform(json.load(fh))


def _zcu102_like(cpu: int = 3, fft: int = 2) -> PlatformConfig:
    # Transfer-dominated FFT accelerator: at small sample counts the CPU
    # wins end-to-end, which is the behavior the preset is tuned to show.
    accel = AccelModel(
        fixed_latency_ns=5_000,
        bytes_per_sec=400_000_000,
        process_time={"*": 30_000},
        local_mem_bytes=1 << 22,
    )
    entries = []
    if cpu:
        entries.append({"type": "cpu", "kind": "core", "count": cpu})
    if fft:
        entries.append({"type": "fft", "kind": "accelerator", "count": fft, "accel": accel})
    return PlatformConfig(entries=entries, manager_core=0)


def _odroid_like(big: int = 4, little: int = 3) -> PlatformConfig:
    entries = []
    if big:
        entries.append({"type": "big", "kind": "core", "count": big})
    if little:
        entries.append({"type": "little", "kind": "core", "count": little})
    return PlatformConfig(entries=entries, manager_core=0)


PRESETS = {
    "zcu102-like": _zcu102_like,
    "odroid-like": _odroid_like,
}


def platform_from_arg(arg: str) -> PlatformConfig:
    """Resolve ``--platform``: a preset name with overrides, or a file path.

    Preset syntax: ``zcu102-like[,fft=2,cpu=3]``.
    """
    name, _, rest = arg.partition(",")
    if name in PRESETS:
        overrides = {}
        if rest:
            for pair in rest.split(","):
                key, _, value = pair.partition("=")
                if not value:
                    raise PlatformError(f"bad preset override {pair!r}")
                overrides[key.strip()] = int(value)
        return PRESETS[name](**overrides)
    if os.path.exists(arg):
        return load_platform(arg)
    raise PlatformError(
        f"unknown platform {arg!r}; presets: {', '.join(sorted(PRESETS))}"
    )
