"""Workload queues: validation (everything at t=0) and performance mode.

Performance mode injects each application on a periodic tick train with a
per-tick inclusion probability.  Ticks for period P fall at k*P for
k = 1..floor(t_end/P); a tick landing exactly on t_end is kept, which is
what makes floor-derived periods reproduce their target instance counts.
Each application draws from its own seeded stream so adding one app never
perturbs another's draws.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .kernels import fnv1a64

__all__ = [
    "WorkloadError",
    "InjectionSpec",
    "WorkloadSpec",
    "QueueEntry",
    "WorkloadQueue",
    "generate_validation",
    "generate_performance",
    "merge",
    "build_queue",
    "load_workload",
    "parse_workload",
]


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class InjectionSpec:
    app_name: str
    period_ns: int
    probability: float

    def __post_init__(self):
        if self.period_ns <= 0:
            raise WorkloadError(f"injection period must be positive, got {self.period_ns}")
        if not 0.0 <= self.probability <= 1.0:
            raise WorkloadError(f"probability out of [0,1]: {self.probability}")


@dataclass
class WorkloadSpec:
    mode: str  # "validation" | "performance"
    validation_counts: dict[str, int] = field(default_factory=dict)
    injections: list[InjectionSpec] = field(default_factory=list)
    t_end_ns: int = 0
    seed: int = 0


@dataclass(frozen=True)
class QueueEntry:
    arrival_ns: int
    app_name: str
    instance_id: int


@dataclass
class WorkloadQueue:
    entries: list[QueueEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def count_for(self, app_name: str) -> int:
        return sum(1 for e in self.entries if e.app_name == app_name)


def _renumber(pairs: list[tuple[int, str]]) -> WorkloadQueue:
    """Assign dense instance ids in queue order."""
    return WorkloadQueue(
        entries=[QueueEntry(t, app, i) for i, (t, app) in enumerate(pairs)]
    )


def generate_validation(counts: dict[str, int], known_apps=None) -> WorkloadQueue:
    """All instances at t=0, ordered app-name-sorted then instance index."""
    _check_known(counts.keys(), known_apps)
    pairs = []
    for app in sorted(counts):
        if counts[app] < 0:
            raise WorkloadError(f"negative instance count for {app}")
        pairs.extend((0, app) for _ in range(counts[app]))
    return _renumber(pairs)


def generate_performance(
    injections: list[InjectionSpec], t_end_ns: int, seed: int, known_apps=None
) -> WorkloadQueue:
    """Seeded periodic-probabilistic arrivals over (0, t_end]."""
    if t_end_ns <= 0:
        raise WorkloadError(f"t_end must be positive, got {t_end_ns}")
    if not injections:
        raise WorkloadError("performance mode requires at least one injection spec")
    _check_known((i.app_name for i in injections), known_apps)
    pairs: list[tuple[int, str]] = []
    for spec in injections:
        rng = random.Random((seed ^ fnv1a64(spec.app_name)) & 0xFFFFFFFFFFFFFFFF)
        for k in range(1, t_end_ns // spec.period_ns + 1):
            if rng.random() < spec.probability:
                pairs.append((k * spec.period_ns, spec.app_name))
    pairs.sort(key=lambda p: (p[0], p[1]))
    return _renumber(pairs)


def merge(*queues: WorkloadQueue) -> WorkloadQueue:
    """Stable sorted merge; instance ids reassigned densely."""
    pairs = [(e.arrival_ns, e.app_name) for q in queues for e in q.entries]
    pairs.sort(key=lambda p: p[0])
    return _renumber(pairs)


def _check_known(names, known_apps) -> None:
    if known_apps is None:
        return
    for name in names:
        if name not in known_apps:
            raise WorkloadError(f"unknown app name {name!r}")


# ---------------------------------------------------------------------------
# Workload files (.wl.json)
# ---------------------------------------------------------------------------


def parse_workload(doc: dict) -> WorkloadSpec:
    mode = doc.get("mode")
    if mode == "validation":
        counts = doc.get("counts")
        if not isinstance(counts, dict) or not counts:
            raise WorkloadError("validation workload requires a non-empty 'counts' map")
        return WorkloadSpec(mode=mode, validation_counts={k: int(v) for k, v in counts.items()})
    if mode == "performance":
        raw = doc.get("injections")
        if not isinstance(raw, list) or not raw:
            raise WorkloadError("performance workload requires a non-empty 'injections' list")
        injections = [
            InjectionSpec(
                app_name=str(item["app"]),
                period_ns=int(item["period_ns"]),
                probability=float(item["probability"]),
            )
            for item in raw
        ]
        t_end = int(doc.get("t_end_ns", 0))
        if t_end <= 0:
            raise WorkloadError("performance workload requires t_end_ns > 0")
        return WorkloadSpec(
            mode=mode,
            injections=injections,
            t_end_ns=t_end,
            seed=int(doc.get("seed", 0)),
        )
    raise WorkloadError(f"unknown workload mode {mode!r}")


def load_workload(path) -> WorkloadSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_workload(json.load(fh))


def build_queue(spec: WorkloadSpec, known_apps=None) -> WorkloadQueue:
    if spec.mode == "validation":
        return generate_validation(spec.validation_counts, known_apps)
    return generate_performance(spec.injections, spec.t_end_ns, spec.seed, known_apps)
