"""DAG application model: parse, validate, instantiate, and re-emit JSON apps.

An application file (``*.app.json``) declares a name, a default kernel
plugin, a variable table (storage sizes plus byte initializers), and a DAG
of task nodes.  Each node lists its argument variables, its predecessor and
successor edges, and one or more platform bindings naming the kernel symbol
to run per PE type.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

__all__ = [
    "ApplicationError",
    "VariableSpec",
    "PlatformBinding",
    "TaskNodeSpec",
    "ApplicationSpec",
    "ValidationReport",
    "TaskInstance",
    "ApplicationInstance",
    "parse_application",
    "validate_dag",
    "instantiate",
    "emit_application",
    "emit_json",
]

# Task lifecycle states.
PENDING = "pending"
READY = "ready"
RUNNING = "running"
COMPLETE = "complete"

_STATE_ORDER = {PENDING: 0, READY: 1, RUNNING: 2, COMPLETE: 3}


class ApplicationError(ValueError):
    """Raised for malformed or inconsistent application documents."""


@dataclass(frozen=True)
class VariableSpec:
    """Storage plan for one program variable.

    ``bytes`` is the size of the variable's own slot.  Pointer variables
    additionally get a heap buffer of ``ptr_alloc_bytes``; ``val`` seeds the
    start of whichever buffer the variable's data lives in.
    """

    name: str
    bytes: int
    is_ptr: bool
    ptr_alloc_bytes: int
    val: tuple[int, ...] = ()

    def storage_bytes(self) -> int:
        return self.ptr_alloc_bytes if self.is_ptr else self.bytes


@dataclass(frozen=True)
class PlatformBinding:
    """One (PE type, kernel symbol) execution option for a task node."""

    platform_name: str
    run_func: str
    shared_object: str | None = None
    est_exec_time: int | None = None  # ns


@dataclass
class TaskNodeSpec:
    name: str
    arguments: tuple[str, ...]
    predecessors: tuple[str, ...]
    successors: tuple[str, ...]
    platforms: tuple[PlatformBinding, ...]
    comm_bytes: dict[str, int] = field(default_factory=dict)
    # Set by the DAG-extraction tool on recognized hot kernels; never
    # serialized, so it does not participate in equality or round-trips.
    fingerprint: int | None = field(default=None, compare=False, repr=False)

    def binding_for(self, pe_type: str) -> PlatformBinding | None:
        for b in self.platforms:
            if b.platform_name == pe_type:
                return b
        return None


@dataclass
class ApplicationSpec:
    app_name: str
    shared_object: str
    variables: dict[str, VariableSpec]
    dag: dict[str, TaskNodeSpec]

    def head_nodes(self) -> list[str]:
        return [n for n, node in self.dag.items() if not node.predecessors]


@dataclass
class ValidationReport:
    app_name: str
    findings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings


class TaskInstance:
    """Per-run lifecycle record of one DAG node."""

    __slots__ = ("name", "state", "assigned_pe", "ready_time", "start_time", "end_time")

    def __init__(self, name: str):
        self.name = name
        self.state = PENDING
        self.assigned_pe: int | None = None
        self.ready_time: int | None = None
        self.start_time: int | None = None
        self.end_time: int | None = None

    def advance(self, new_state: str) -> None:
        if _STATE_ORDER[new_state] != _STATE_ORDER[self.state] + 1:
            raise RuntimeError(
                f"illegal task state transition {self.state}->{new_state} for {self.name}"
            )
        self.state = new_state

    def __repr__(self) -> str:  # pragma: no cover
        return f"TaskInstance({self.name!r}, {self.state})"


class ApplicationInstance:
    """A runnable copy of a spec: allocated buffers plus per-task state."""

    def __init__(self, spec: ApplicationSpec, instance_id: int, arrival_time: int):
        self.spec = spec
        self.instance_id = instance_id
        self.arrival_time = arrival_time
        self.store: dict[str, bytearray] = {}
        for name, var in spec.variables.items():
            buf = bytearray(var.storage_bytes())
            buf[: len(var.val)] = bytes(var.val)
            self.store[name] = buf
        self.tasks = {name: TaskInstance(name) for name in spec.dag}
        self.failed = False
        self.failure_reason: str | None = None

    @property
    def app_name(self) -> str:
        return self.spec.app_name

    def pending_predecessor_counts(self) -> dict[str, int]:
        return {n: len(node.predecessors) for n, node in self.spec.dag.items()}

    def all_complete(self) -> bool:
        return all(t.state == COMPLETE for t in self.tasks.values())


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOP_KEYS = {"AppName", "SharedObject", "Variables", "DAG"}
_VAR_KEYS = {"bytes", "is_ptr", "ptr_alloc_bytes", "val"}
_NODE_KEYS = {"arguments", "predecessors", "successors", "platforms", "comm_bytes"}
_PLATFORM_KEYS = {"name", "runfunc", "shared_object", "est_exec_time"}


def _reject_duplicate_keys(pairs):
    obj = {}
    for key, value in pairs:
        if key in obj:
            raise ApplicationError(f"duplicate node/variable name {key!r}")
        obj[key] = value
    return obj


def _require(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise ApplicationError(f"missing required key {key!r} in {ctx}")
    return obj[key]


def _check_keys(obj: dict, allowed: set[str], ctx: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ApplicationError(f"unknown key {key!r} in {ctx}")


def _expect(value, types, ctx: str):
    if not isinstance(value, types) or isinstance(value, bool) and bool not in _as_tuple(types):
        names = "/".join(t.__name__ for t in _as_tuple(types))
        raise ApplicationError(f"type mismatch in {ctx}: expected {names}, got {type(value).__name__}")
    return value


def _as_tuple(types):
    return types if isinstance(types, tuple) else (types,)


def _parse_variable(name: str, obj) -> VariableSpec:
    ctx = f"variable {name!r}"
    _expect(obj, dict, ctx)
    _check_keys(obj, _VAR_KEYS, ctx)
    nbytes = _expect(_require(obj, "bytes", ctx), int, f"{ctx}.bytes")
    is_ptr = _expect(_require(obj, "is_ptr", ctx), bool, f"{ctx}.is_ptr")
    alloc = _expect(_require(obj, "ptr_alloc_bytes", ctx), int, f"{ctx}.ptr_alloc_bytes")
    raw_val = _expect(obj.get("val", []), list, f"{ctx}.val")
    val = []
    for i, b in enumerate(raw_val):
        _expect(b, int, f"{ctx}.val[{i}]")
        if not 0 <= b <= 255:
            raise ApplicationError(f"type mismatch in {ctx}.val[{i}]: byte out of range: {b}")
        val.append(b)
    return VariableSpec(name=name, bytes=nbytes, is_ptr=is_ptr, ptr_alloc_bytes=alloc, val=tuple(val))


def _parse_binding(node: str, idx: int, obj) -> PlatformBinding:
    ctx = f"node {node!r} platforms[{idx}]"
    _expect(obj, dict, ctx)
    _check_keys(obj, _PLATFORM_KEYS, ctx)
    name = _expect(_require(obj, "name", ctx), str, f"{ctx}.name")
    run_func = _expect(_require(obj, "runfunc", ctx), str, f"{ctx}.runfunc")
    shared = obj.get("shared_object")
    if shared is not None:
        _expect(shared, str, f"{ctx}.shared_object")
    est = obj.get("est_exec_time")
    if est is not None:
        _expect(est, int, f"{ctx}.est_exec_time")
    return PlatformBinding(platform_name=name, run_func=run_func, shared_object=shared, est_exec_time=est)


def _parse_node(name: str, obj) -> TaskNodeSpec:
    ctx = f"node {name!r}"
    _expect(obj, dict, ctx)
    _check_keys(obj, _NODE_KEYS, ctx)
    args = [_expect(a, str, f"{ctx}.arguments") for a in _expect(_require(obj, "arguments", ctx), list, f"{ctx}.arguments")]
    preds = [_expect(p, str, f"{ctx}.predecessors") for p in _expect(_require(obj, "predecessors", ctx), list, f"{ctx}.predecessors")]
    succs = [_expect(s, str, f"{ctx}.successors") for s in _expect(_require(obj, "successors", ctx), list, f"{ctx}.successors")]
    raw_platforms = _expect(_require(obj, "platforms", ctx), list, f"{ctx}.platforms")
    platforms = tuple(_parse_binding(name, i, p) for i, p in enumerate(raw_platforms))
    comm = {}
    for succ, nbytes in _expect(obj.get("comm_bytes", {}), dict, f"{ctx}.comm_bytes").items():
        comm[succ] = _expect(nbytes, int, f"{ctx}.comm_bytes[{succ!r}]")
    return TaskNodeSpec(
        name=name,
        arguments=tuple(args),
        predecessors=tuple(preds),
        successors=tuple(succs),
        platforms=platforms,
        comm_bytes=comm,
    )


def parse_application(text: str) -> ApplicationSpec:
    """Parse an application JSON document into an :class:`ApplicationSpec`.

    Unknown keys, missing keys, type mismatches, duplicate names, and
    asymmetric edges are all rejected with a diagnostic naming the problem.
    """
    try:
        doc = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ApplicationError(f"malformed JSON: {exc}") from exc
    _expect(doc, dict, "document")
    _check_keys(doc, _TOP_KEYS, "document")
    app_name = _expect(_require(doc, "AppName", "document"), str, "AppName")
    shared = _expect(_require(doc, "SharedObject", "document"), str, "SharedObject")
    raw_vars = _expect(_require(doc, "Variables", "document"), dict, "Variables")
    raw_dag = _expect(_require(doc, "DAG", "document"), dict, "DAG")

    variables = {name: _parse_variable(name, obj) for name, obj in raw_vars.items()}
    dag = {name: _parse_node(name, obj) for name, obj in raw_dag.items()}
    spec = ApplicationSpec(app_name=app_name, shared_object=shared, variables=variables, dag=dag)

    for a, b in _asymmetric_edges(dag):
        raise ApplicationError(f"asymmetric edge {a}->{b}")
    return spec


def _asymmetric_edges(dag: dict[str, TaskNodeSpec]):
    """Yield (a, b) pairs where the edge a->b is declared on only one side."""
    for name, node in dag.items():
        for succ in node.successors:
            if succ not in dag or name not in dag[succ].predecessors:
                yield name, succ
        for pred in node.predecessors:
            if pred not in dag or name not in dag[pred].successors:
                yield pred, name


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def topological_order(dag: dict[str, TaskNodeSpec]) -> list[str] | None:
    """Kahn topological order with name tie-breaking, or None on a cycle."""
    indeg = {n: 0 for n in dag}
    for node in dag.values():
        for succ in node.successors:
            if succ in indeg:
                indeg[succ] += 1
    frontier = sorted(n for n, d in indeg.items() if d == 0)
    order: list[str] = []
    while frontier:
        n = frontier.pop(0)
        order.append(n)
        changed = False
        for succ in dag[n].successors:
            if succ in indeg:
                indeg[succ] -= 1
                if indeg[succ] == 0:
                    frontier.append(succ)
                    changed = True
        if changed:
            frontier.sort()
    if len(order) != len(dag):
        return None
    return order


def validate_dag(spec: ApplicationSpec) -> ValidationReport:
    """Check every structural invariant; findings are data, not exceptions."""
    findings: list[str] = []

    for name, var in spec.variables.items():
        if var.bytes <= 0:
            findings.append(f"variable {name}: bytes must be positive, got {var.bytes}")
        if var.is_ptr:
            if var.ptr_alloc_bytes <= 0:
                findings.append(f"variable {name}: pointer with ptr_alloc_bytes {var.ptr_alloc_bytes}")
            if len(var.val) > var.ptr_alloc_bytes:
                findings.append(f"variable {name}: initializer longer than ptr_alloc_bytes")
        else:
            if var.ptr_alloc_bytes != 0:
                findings.append(f"variable {name}: non-pointer with ptr_alloc_bytes {var.ptr_alloc_bytes}")
            if len(var.val) > var.bytes:
                findings.append(f"variable {name}: initializer longer than {var.bytes} bytes")

    for name, node in spec.dag.items():
        for arg in node.arguments:
            if arg not in spec.variables:
                findings.append(f"unknown variable {arg} in node {name}")
        if not node.platforms:
            findings.append(f"node {name}: empty platform list")
        for b in node.platforms:
            if not b.platform_name:
                findings.append(f"node {name}: empty platform name")
            if not b.run_func:
                findings.append(f"node {name}: empty runfunc")
            if b.est_exec_time is not None and b.est_exec_time < 0:
                findings.append(f"node {name}: negative est_exec_time")
        for succ, nbytes in node.comm_bytes.items():
            if succ not in node.successors:
                findings.append(f"node {name}: comm_bytes names non-successor {succ}")
            if nbytes < 0:
                findings.append(f"node {name}: negative comm_bytes to {succ}")

    for a, b in _asymmetric_edges(spec.dag):
        findings.append(f"asymmetric edge {a}->{b}")

    if spec.dag and topological_order(spec.dag) is None:
        on_cycle = _cycle_members(spec.dag)
        findings.append("cycle: " + ",".join(sorted(on_cycle)))
    if not spec.head_nodes():
        findings.append("no head nodes (every node has predecessors)")

    return ValidationReport(app_name=spec.app_name, findings=findings)


def _cycle_members(dag: dict[str, TaskNodeSpec]) -> set[str]:
    """Nodes that sit on at least one cycle."""
    indeg = {n: 0 for n in dag}
    for node in dag.values():
        for succ in node.successors:
            if succ in indeg:
                indeg[succ] += 1
    queue = [n for n, d in indeg.items() if d == 0]
    remaining = set(dag)
    while queue:
        n = queue.pop()
        remaining.discard(n)
        for succ in dag[n].successors:
            if succ in indeg:
                indeg[succ] -= 1
                if indeg[succ] == 0:
                    queue.append(succ)
    # Kahn leftovers include pure descendants of cycles; keep only nodes
    # that can reach themselves.
    return {n for n in remaining if _in_own_cycle(dag, n, remaining)}


def _in_own_cycle(dag, start: str, universe: set[str]) -> bool:
    seen = set()
    stack = [s for s in dag[start].successors if s in universe]
    while stack:
        n = stack.pop()
        if n == start:
            return True
        if n in seen:
            continue
        seen.add(n)
        stack.extend(s for s in dag[n].successors if s in universe)
    return False


# ---------------------------------------------------------------------------
# Instantiation
# ---------------------------------------------------------------------------


def instantiate(spec: ApplicationSpec, instance_id: int, arrival_time: int) -> ApplicationInstance:
    """Allocate and initialize a runnable copy of ``spec``.

    Initializer bytes are copied verbatim; the remainder of each buffer is
    zero-filled.  Buffers are private to the instance.
    """
    report = validate_dag(spec)
    if not report.ok:
        raise ApplicationError(
            f"cannot instantiate {spec.app_name}: " + "; ".join(report.findings)
        )
    return ApplicationInstance(spec, instance_id, arrival_time)


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def emit_application(spec: ApplicationSpec) -> dict:
    """Canonical JSON-ready form: variables name-sorted, DAG topological."""
    order = topological_order(spec.dag)
    if order is None:
        raise ApplicationError(f"cannot emit cyclic application {spec.app_name}")
    doc: dict = {"AppName": spec.app_name, "SharedObject": spec.shared_object}
    doc["Variables"] = {
        name: _emit_variable(spec.variables[name]) for name in sorted(spec.variables)
    }
    doc["DAG"] = {name: _emit_node(spec.dag[name]) for name in order}
    return doc


def _emit_variable(var: VariableSpec) -> dict:
    return {
        "bytes": var.bytes,
        "is_ptr": var.is_ptr,
        "ptr_alloc_bytes": var.ptr_alloc_bytes,
        "val": list(var.val),
    }


def _emit_node(node: TaskNodeSpec) -> dict:
    out: dict = {
        "arguments": list(node.arguments),
        "predecessors": list(node.predecessors),
        "successors": list(node.successors),
        "platforms": [],
    }
    for b in node.platforms:
        entry = {"name": b.platform_name, "runfunc": b.run_func}
        if b.shared_object is not None:
            entry["shared_object"] = b.shared_object
        if b.est_exec_time is not None:
            entry["est_exec_time"] = b.est_exec_time
        out["platforms"].append(entry)
    if node.comm_bytes:
        out["comm_bytes"] = {k: node.comm_bytes[k] for k in sorted(node.comm_bytes)}
    return out


def emit_json(spec: ApplicationSpec) -> str:
    return json.dumps(emit_application(spec), indent=2) + "\n"
