"""Dynamic scheduling policies: FRFS, MET, EFT, RANDOM, plus a registry.

Policies are pure functions over a snapshot: the ready set (FIFO by
(ready_time, instance_id, node)), the PE views, and the current time.
They return assignments; the engine performs the actual dispatch.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

from .platform import IDLE, transfer_time

__all__ = [
    "ReadyTask",
    "PEView",
    "Assignment",
    "ReadySet",
    "schedule_frfs",
    "schedule_met",
    "schedule_eft",
    "schedule_random",
    "register_policy",
    "lookup_policy",
    "available_policies",
]

log = logging.getLogger(__name__)

# MET/EFT skip tasks lacking cost estimates; warn once per node name.
_warned_missing_est: set[str] = set()


@dataclass(frozen=True)
class ReadyTask:
    instance_id: int
    node: str
    ready_time: int
    bindings: tuple[tuple[str, int | None], ...]  # (pe_type, est_exec_time_ns)
    comm_bytes_in: int = 0

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.ready_time, self.instance_id, self.node)

    def supports(self, pe_type: str) -> bool:
        return any(t == pe_type for t, _ in self.bindings)

    def est_for(self, pe_type: str) -> int | None:
        for t, est in self.bindings:
            if t == pe_type:
                return est
        return None

    def has_all_ests(self) -> bool:
        return all(est is not None for _, est in self.bindings)


@dataclass(frozen=True)
class PEView:
    pe_id: int
    pe_type: str
    status: str
    est_available: int = 0
    # (fixed_latency_ns, bytes_per_sec) for accelerator types, else None.
    transfer: tuple[int, int] | None = None

    @property
    def idle(self) -> bool:
        return self.status == IDLE


@dataclass(frozen=True)
class Assignment:
    task: ReadyTask
    pe_id: int


class ReadySet:
    """FIFO ready list with per-PE-type head queues.

    The master dict preserves arrival order (callers insert in key order),
    so iteration is FIFO.  Per-type deques let FRFS find the oldest task
    supporting a PE type without scanning the whole list; stale keys are
    skipped lazily.
    """

    def __init__(self):
        self._tasks: dict[tuple, ReadyTask] = {}
        self._by_type: dict[str, deque] = {}

    def __len__(self) -> int:
        return len(self._tasks)

    def __iter__(self):
        return iter(self._tasks.values())

    def __contains__(self, key) -> bool:
        return key in self._tasks

    def add(self, task: ReadyTask) -> None:
        if task.key in self._tasks:
            raise ValueError(f"task {task.key} already in ready set")
        self._tasks[task.key] = task
        for pe_type, _ in task.bindings:
            self._by_type.setdefault(pe_type, deque()).append(task.key)

    def remove(self, task: ReadyTask) -> None:
        del self._tasks[task.key]  # type-queue entries are dropped lazily

    def oldest_for_type(self, pe_type: str, skip: set) -> ReadyTask | None:
        queue = self._by_type.get(pe_type)
        if not queue:
            return None
        while queue and queue[0] not in self._tasks:
            queue.popleft()
        # Keys assigned earlier this cycle stay queued (the engine removes
        # them after dispatch); scan past them and any mid-queue stale keys.
        for key in queue:
            task = self._tasks.get(key)
            if task is not None and key not in skip:
                return task
        return None

    @classmethod
    def from_tasks(cls, tasks) -> "ReadySet":
        rs = cls()
        for task in sorted(tasks, key=lambda t: t.key):
            rs.add(task)
        return rs


def _idle_views(pes) -> list[PEView]:
    return [pe for pe in pes if pe.idle]


def schedule_frfs(ready: ReadySet, pes, now: int, rng=None) -> list[Assignment]:
    """First ready-first start: walk idle PEs in id order, give each the
    oldest unassigned ready task its type supports."""
    out: list[Assignment] = []
    taken: set = set()
    for pe in sorted(_idle_views(pes), key=lambda p: p.pe_id):
        task = ready.oldest_for_type(pe.pe_type, taken)
        if task is not None:
            out.append(Assignment(task, pe.pe_id))
            taken.add(task.key)
    return out


def schedule_met(ready: ReadySet, pes, now: int, rng=None) -> list[Assignment]:
    """Minimum execution time: each task goes to its fastest PE type or
    waits for it; it is never diverted to a slower type."""
    out: list[Assignment] = []
    idle_by_type: dict[str, list[PEView]] = {}
    for pe in _idle_views(pes):
        idle_by_type.setdefault(pe.pe_type, []).append(pe)
    for pe_list in idle_by_type.values():
        pe_list.sort(key=lambda p: p.pe_id)
    for task in ready:
        if not task.has_all_ests():
            if task.node not in _warned_missing_est:
                _warned_missing_est.add(task.node)
                log.warning("MET: task %s has bindings without est_exec_time; skipping", task.node)
            continue
        best_type = min(task.bindings, key=lambda b: (b[1], b[0]))[0]
        candidates = idle_by_type.get(best_type)
        if candidates:
            pe = candidates.pop(0)
            out.append(Assignment(task, pe.pe_id))
    return out


def schedule_eft(ready: ReadySet, pes, now: int, rng=None) -> list[Assignment]:
    """Earliest finish time over all supporting PEs (idle or busy):

        EFT(task, pe) = max(now, est_available) + transfer(in_bytes) + est

    The argmin PE wins (ties to the lower pe_id); the task dispatches only
    if that PE is idle, otherwise it waits for it.
    """
    out: list[Assignment] = []
    avail: dict[int, int] = {pe.pe_id: max(now, pe.est_available) for pe in pes}
    busy_now: set[int] = {pe.pe_id for pe in pes if not pe.idle}
    for task in ready:
        if not task.has_all_ests():
            if task.node not in _warned_missing_est:
                _warned_missing_est.add(task.node)
                log.warning("EFT: task %s has bindings without est_exec_time; skipping", task.node)
            continue
        best: tuple[int, int] | None = None  # (eft, pe_id)
        for pe in pes:
            est = task.est_for(pe.pe_type)
            if est is None:
                continue
            xfer = 0
            if pe.transfer is not None:
                xfer = transfer_time(task.comm_bytes_in, pe.transfer[0], pe.transfer[1])
            eft = avail[pe.pe_id] + xfer + est
            if best is None or (eft, pe.pe_id) < best:
                best = (eft, pe.pe_id)
        if best is None:
            continue
        eft, pe_id = best
        if pe_id in busy_now:
            continue  # waits for the projected-fastest PE
        out.append(Assignment(task, pe_id))
        busy_now.add(pe_id)
        avail[pe_id] = eft
    return out


def schedule_random(ready: ReadySet, pes, now: int, rng=None) -> list[Assignment]:
    """Uniform pick among idle supporting PEs, per task in FIFO order."""
    if rng is None:
        raise ValueError("RANDOM policy requires a seeded rng")
    out: list[Assignment] = []
    free = {pe.pe_id: pe for pe in _idle_views(pes)}
    for task in ready:
        options = [pe_id for pe_id, pe in free.items() if task.supports(pe.pe_type)]
        if not options:
            continue
        pick = rng.choice(sorted(options))
        out.append(Assignment(task, pick))
        del free[pick]
    return out


# ---------------------------------------------------------------------------
# Policy registry
# ---------------------------------------------------------------------------

_POLICIES = {
    "frfs": schedule_frfs,
    "met": schedule_met,
    "eft": schedule_eft,
    "random": schedule_random,
}


def register_policy(name: str, policy) -> None:
    _POLICIES[name] = policy


def lookup_policy(name: str):
    try:
        return _POLICIES[name]
    except KeyError:
        raise KeyError(
            f"unknown policy {name!r}; available: {', '.join(sorted(_POLICIES))}"
        ) from None


def available_policies() -> list[str]:
    return sorted(_POLICIES)
