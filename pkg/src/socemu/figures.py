"""Quick-look matplotlib renders for the report path.

`emu report --figures DIR` drops a Gantt chart and a per-PE utilization
bar chart next to the CSV exports.  Deterministic output: fixed figure
geometry, no timestamps embedded in the files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import Trace, compute_report

__all__ = ["render_gantt", "render_utilization", "render_report_figures"]


def _pe_labels(trace: Trace) -> dict[int, str]:
    return {
        pe["pe_id"]: f'{pe["pe_type"]}{pe["pe_id"]}'
        for pe in trace.meta.get("pes", [])
    }


def render_gantt(trace: Trace, path) -> None:
    labels = _pe_labels(trace)
    spans: dict[int, list[tuple[int, int]]] = {}
    open_tasks: dict[tuple, int] = {}
    for event in trace.events:
        key = (event.instance_id, event.node)
        if event.kind == "task_start":
            open_tasks[key] = event.t
        elif event.kind == "task_end" and key in open_tasks:
            spans.setdefault(event.pe_id, []).append((open_tasks.pop(key), event.t))

    fig, ax = plt.subplots(figsize=(9, 0.6 * max(4, len(labels) or len(spans))))
    pe_ids = sorted(labels) or sorted(spans)
    for row, pe_id in enumerate(pe_ids):
        bars = [(start / 1e6, (end - start) / 1e6) for start, end in spans.get(pe_id, [])]
        if bars:
            ax.broken_barh(bars, (row - 0.35, 0.7))
    ax.set_yticks(range(len(pe_ids)))
    ax.set_yticklabels([labels.get(pe_id, str(pe_id)) for pe_id in pe_ids])
    ax.set_xlabel("time (ms)")
    ax.set_title("task execution per PE")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def render_utilization(trace: Trace, path) -> None:
    report = compute_report(trace)
    labels = _pe_labels(trace)
    pe_ids = sorted(report.utilization)
    fracs = [report.utilization[pe_id] for pe_id in pe_ids]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(pe_ids)), fracs)
    ax.set_xticks(range(len(pe_ids)))
    ax.set_xticklabels([labels.get(pe_id, str(pe_id)) for pe_id in pe_ids])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("busy fraction")
    ax.set_title("PE utilization")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def render_report_figures(trace: Trace, outdir) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    gantt = outdir / "gantt.png"
    util = outdir / "utilization.png"
    render_gantt(trace, gantt)
    render_utilization(trace, util)
    return [gantt, util]
