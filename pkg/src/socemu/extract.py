"""Trace-based DAG extraction with recognition-driven kernel substitution.

Input is a basic-block execution trace (one block id per record, text or
binary) plus a sidecar metadata file describing each block (function, a
normalized operation multiset, variables read/written) and each variable
(element size, count, allocation kind).  The tool finds hot kernels by
temporal-affinity clustering, partitions the run into alternating
kernel/non-kernel nodes, infers a variable table, and emits an application
spec whose nodes form a conservative serial chain.  Nodes whose kernel
fingerprint hits a recognition table get that table's optimized platform
bindings.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .appmodel import (
    ApplicationSpec,
    PlatformBinding,
    TaskNodeSpec,
    VariableSpec,
    validate_dag,
)
from .kernels import fingerprint

__all__ = [
    "ExtractError",
    "BlockMeta",
    "VariableMeta",
    "TraceMeta",
    "KernelGroup",
    "ProgramNode",
    "RecognitionTable",
    "read_block_trace",
    "read_meta",
    "detect_kernels",
    "partition_program",
    "infer_memory",
    "emit_dag",
    "substitute_optimized",
    "extract_application",
]

DEFAULT_HOT_THRESHOLD = 128
DEFAULT_WINDOW = 32
DEFAULT_AFFINITY = 0.9


class ExtractError(ValueError):
    pass


@dataclass
class BlockMeta:
    block_id: int
    function: str
    ops: dict[str, int]
    reads: tuple[str, ...]
    writes: tuple[str, ...]


@dataclass
class VariableMeta:
    name: str
    element_bytes: int
    count: int
    alloc: str  # "static" | "dynamic"
    size_expr: str | None = None


@dataclass
class TraceMeta:
    blocks: dict[int, BlockMeta]
    variables: dict[str, VariableMeta]


@dataclass
class KernelGroup:
    members: frozenset[int]
    count: int
    fingerprint: int
    live_in: tuple[str, ...]
    live_out: tuple[str, ...]
    label: str = "kernel"


@dataclass
class ProgramNode:
    index: int
    label: str  # "kernel" | "non-kernel"
    blocks: tuple[int, ...]  # unique member ids, first-use order
    span: tuple[int, int]  # [start, end) trace positions
    kernel: KernelGroup | None = None


# ---------------------------------------------------------------------------
# Input files
# ---------------------------------------------------------------------------


def read_block_trace(path) -> list[int]:
    """Block-id sequence from a text (ASCII integers) or binary (u32 LE)
    trace file."""
    raw = Path(path).read_bytes()
    if not raw:
        return []
    sample = raw[:4096]
    if all(b in b"0123456789 \t\r\n" for b in sample):
        return [int(tok) for tok in raw.split()]
    if len(raw) % 4:
        raise ExtractError(f"binary trace length {len(raw)} is not a multiple of 4")
    return list(struct.unpack(f"<{len(raw) // 4}I", raw))


def read_meta(path) -> TraceMeta:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    blocks = {}
    for key, obj in doc.get("blocks", {}).items():
        bid = int(key)
        blocks[bid] = BlockMeta(
            block_id=bid,
            function=str(obj.get("function", "?")),
            ops={str(k): int(v) for k, v in obj.get("ops", {}).items()},
            reads=tuple(obj.get("reads", [])),
            writes=tuple(obj.get("writes", [])),
        )
    variables = {}
    for name, obj in doc.get("variables", {}).items():
        variables[name] = VariableMeta(
            name=name,
            element_bytes=int(obj.get("element_bytes", 0)),
            count=int(obj.get("count", 1)),
            alloc=str(obj.get("alloc", "static")),
            size_expr=obj.get("size_expr"),
        )
    return TraceMeta(blocks=blocks, variables=variables)


def _check_trace(trace: list[int], meta: TraceMeta) -> None:
    missing = {bid for bid in trace if bid not in meta.blocks}
    if missing:
        raise ExtractError(f"trace references blocks missing from metadata: {sorted(missing)[:8]}")
    for block in meta.blocks.values():
        for var in block.reads + block.writes:
            if var not in meta.variables:
                raise ExtractError(f"block {block.block_id} references unknown variable {var!r}")


# ---------------------------------------------------------------------------
# Kernel detection
# ---------------------------------------------------------------------------


def detect_kernels(
    trace: list[int],
    meta: TraceMeta,
    hot_threshold: int = DEFAULT_HOT_THRESHOLD,
    window: int = DEFAULT_WINDOW,
    affinity: float = DEFAULT_AFFINITY,
) -> list[KernelGroup]:
    """Temporal-affinity clustering of hot blocks.

    A block is hot when it executes at least ``hot_threshold`` times.  Two
    hot blocks join a kernel when each appears within ``window`` trace
    positions of the other in at least an ``affinity`` fraction of its own
    occurrences; kernels are the transitive closure of that relation.
    """
    if not trace:
        raise ExtractError("empty block trace")
    _check_trace(trace, meta)

    positions: dict[int, list[int]] = {}
    for pos, bid in enumerate(trace):
        positions.setdefault(bid, []).append(pos)
    hot = sorted(bid for bid, occ in positions.items() if len(occ) >= hot_threshold)
    if not hot:
        return []

    parent = {bid: bid for bid in hot}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for i, a in enumerate(hot):
        for b in hot[i + 1 :]:
            if _mutual_affinity(positions[a], positions[b], window, affinity):
                union(a, b)

    clusters: dict[int, list[int]] = {}
    for bid in hot:
        clusters.setdefault(find(bid), []).append(bid)

    groups = []
    for members in clusters.values():
        groups.append(_make_group(sorted(members), positions, meta))
    groups.sort(key=lambda g: min(positions[m][0] for m in g.members))
    return groups


def _mutual_affinity(pos_a: list[int], pos_b: list[int], window: int, affinity: float) -> bool:
    return (
        _near_fraction(pos_a, pos_b, window) >= affinity
        and _near_fraction(pos_b, pos_a, window) >= affinity
    )


def _near_fraction(pos_a: list[int], pos_b: list[int], window: int) -> float:
    """Fraction of a's occurrences with some b occurrence within the window."""
    hits = 0
    j = 0
    for p in pos_a:
        while j < len(pos_b) and pos_b[j] < p - window:
            j += 1
        if j < len(pos_b) and pos_b[j] <= p + window:
            hits += 1
    return hits / len(pos_a)


def _make_group(members: list[int], positions, meta: TraceMeta) -> KernelGroup:
    ops: dict[str, int] = {}
    reads: list[str] = []
    writes: list[str] = []
    for bid in members:
        block = meta.blocks[bid]
        for op, count in block.ops.items():
            ops[op] = ops.get(op, 0) + count
        for var in block.reads:
            if var not in reads:
                reads.append(var)
        for var in block.writes:
            if var not in writes:
                writes.append(var)
    return KernelGroup(
        members=frozenset(members),
        count=min(len(positions[m]) for m in members),
        fingerprint=fingerprint(ops),
        live_in=tuple(reads),
        live_out=tuple(writes),
    )


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------


def partition_program(trace: list[int], kernels: list[KernelGroup]) -> list[ProgramNode]:
    """Split the trace into maximal contiguous runs of one label, in
    first-appearance order; the emitted DAG chains them serially."""
    if not trace:
        raise ExtractError("empty block trace")
    owner: dict[int, int] = {}
    for k, group in enumerate(kernels):
        for bid in group.members:
            owner[bid] = k

    nodes: list[ProgramNode] = []
    run_start = 0
    run_label = owner.get(trace[0], -1)
    for pos in range(1, len(trace) + 1):
        label = owner.get(trace[pos], -1) if pos < len(trace) else None
        if pos == len(trace) or label != run_label:
            blocks: list[int] = []
            for bid in trace[run_start:pos]:
                if bid not in blocks:
                    blocks.append(bid)
            nodes.append(ProgramNode(
                index=len(nodes),
                label="kernel" if run_label >= 0 else "non-kernel",
                blocks=tuple(blocks),
                span=(run_start, pos),
                kernel=kernels[run_label] if run_label >= 0 else None,
            ))
            run_start, run_label = pos, label
    return nodes


# ---------------------------------------------------------------------------
# Memory inference
# ---------------------------------------------------------------------------

_SIZE_EXPR = re.compile(r"^\s*\d+(\s*\*\s*\d+)*\s*$")


def infer_memory(meta: TraceMeta) -> tuple[dict[str, VariableSpec], list[str]]:
    """Variable table plus the names whose sizes could not be resolved."""
    out: dict[str, VariableSpec] = {}
    unresolved: list[str] = []
    for name, var in meta.variables.items():
        if var.alloc == "static":
            if var.count == 1:
                out[name] = VariableSpec(name=name, bytes=var.element_bytes,
                                         is_ptr=False, ptr_alloc_bytes=0)
            else:
                out[name] = VariableSpec(name=name, bytes=8, is_ptr=True,
                                         ptr_alloc_bytes=var.element_bytes * var.count)
        else:
            expr = var.size_expr or ""
            if _SIZE_EXPR.match(expr):
                total = 1
                for factor in expr.split("*"):
                    total *= int(factor)
                out[name] = VariableSpec(name=name, bytes=8, is_ptr=True,
                                         ptr_alloc_bytes=total)
            else:
                unresolved.append(name)
    return out, sorted(unresolved)


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def emit_dag(
    nodes: list[ProgramNode],
    variables: dict[str, VariableSpec],
    unresolved: list[str],
    meta: TraceMeta,
    app_name: str,
    default_est_ns: int = 10_000,
) -> ApplicationSpec:
    """Serial-chain spec over the partitioned nodes.

    Node arguments are the variables its blocks touch, in first-use order.
    Generated symbols are ``<app>_node<k>``; bodies are not synthesized, so
    emitted apps run under the virtual clock or get real kernels through
    recognition-based substitution.
    """
    dag: dict[str, TaskNodeSpec] = {}
    names = [f"{app_name}_node{k}" for k in range(len(nodes))]
    used_vars: dict[str, VariableSpec] = {}
    for k, pnode in enumerate(nodes):
        args: list[str] = []
        for bid in pnode.blocks:
            block = meta.blocks[bid]
            for var in block.reads + block.writes:
                if var in args:
                    continue
                if var in unresolved:
                    raise ExtractError(
                        f"node {names[k]} references unresolved variable {var!r}"
                    )
                args.append(var)
                used_vars[var] = variables[var]
        spec_node = TaskNodeSpec(
            name=names[k],
            arguments=tuple(args),
            predecessors=(names[k - 1],) if k > 0 else (),
            successors=(names[k + 1],) if k < len(nodes) - 1 else (),
            platforms=(PlatformBinding(platform_name="cpu", run_func=names[k],
                                       est_exec_time=default_est_ns),),
        )
        if pnode.kernel is not None:
            spec_node.fingerprint = pnode.kernel.fingerprint
        dag[names[k]] = spec_node
    spec = ApplicationSpec(app_name=app_name, shared_object=f"{app_name}.so",
                           variables=used_vars, dag=dag)
    report = validate_dag(spec)
    if not report.ok:
        raise ExtractError(f"emitted spec fails validation: {'; '.join(report.findings)}")
    return spec


# ---------------------------------------------------------------------------
# Recognition-based substitution
# ---------------------------------------------------------------------------


@dataclass
class RecognitionTable:
    entries: dict[int, tuple[PlatformBinding, ...]]
    mode: str = "replace"  # or "append"

    @classmethod
    def load(cls, path) -> "RecognitionTable":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        entries = {}
        for key, bindings in doc.get("entries", {}).items():
            fp = int(key, 16) if isinstance(key, str) else int(key)
            entries[fp] = tuple(
                PlatformBinding(
                    platform_name=str(b["name"]),
                    run_func=str(b["runfunc"]),
                    shared_object=b.get("shared_object"),
                    est_exec_time=b.get("est_exec_time"),
                )
                for b in bindings
            )
        mode = doc.get("mode", "replace")
        if mode not in ("replace", "append"):
            raise ExtractError(f"unknown substitution mode {mode!r}")
        return cls(entries=entries, mode=mode)


def substitute_optimized(spec: ApplicationSpec, table: RecognitionTable) -> ApplicationSpec:
    """Swap in optimized bindings on nodes whose fingerprint hits the table.

    Misses are silent; hits replace (or append to) the node's platform
    list.  Untouched nodes are shared with the input spec.
    """
    new_dag: dict[str, TaskNodeSpec] = {}
    hits = []
    for name, node in spec.dag.items():
        if node.fingerprint is not None and node.fingerprint in table.entries:
            bindings = table.entries[node.fingerprint]
            platforms = node.platforms + bindings if table.mode == "append" else bindings
            replacement = TaskNodeSpec(
                name=node.name,
                arguments=node.arguments,
                predecessors=node.predecessors,
                successors=node.successors,
                platforms=platforms,
                comm_bytes=dict(node.comm_bytes),
            )
            replacement.fingerprint = node.fingerprint
            new_dag[name] = replacement
            hits.append(name)
        else:
            new_dag[name] = node
    out = ApplicationSpec(
        app_name=spec.app_name,
        shared_object=spec.shared_object,
        variables=dict(spec.variables),
        dag=new_dag,
    )
    report = validate_dag(out)
    if not report.ok:
        raise ExtractError(f"substituted spec fails validation: {'; '.join(report.findings)}")
    return out


# ---------------------------------------------------------------------------
# One-call pipeline
# ---------------------------------------------------------------------------


@dataclass
class ExtractionResult:
    spec: ApplicationSpec
    kernels: list[KernelGroup]
    nodes: list[ProgramNode]
    unresolved: list[str]
    substituted_nodes: list[str] = field(default_factory=list)


def extract_application(
    trace_path,
    meta_path,
    app_name: str,
    hot_threshold: int = DEFAULT_HOT_THRESHOLD,
    window: int = DEFAULT_WINDOW,
    affinity: float = DEFAULT_AFFINITY,
    recognition: RecognitionTable | None = None,
) -> ExtractionResult:
    trace = read_block_trace(trace_path)
    meta = read_meta(meta_path)
    kernels = detect_kernels(trace, meta, hot_threshold, window, affinity)
    nodes = partition_program(trace, kernels)
    variables, unresolved = infer_memory(meta)
    spec = emit_dag(nodes, variables, unresolved, meta, app_name)
    substituted = []
    if recognition is not None:
        before = {n: tuple(node.platforms) for n, node in spec.dag.items()}
        spec = substitute_optimized(spec, recognition)
        substituted = [n for n, node in spec.dag.items() if tuple(node.platforms) != before[n]]
    return ExtractionResult(spec=spec, kernels=kernels, nodes=nodes,
                            unresolved=unresolved, substituted_nodes=substituted)
