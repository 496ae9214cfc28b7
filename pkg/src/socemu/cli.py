"""The ``emu`` command line: run, validate, report, extract-dag, fixtures."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import appmodel, engine, extract, fixtures, metrics
from .platform import platform_from_arg
from .schedulers import available_policies
from .workload import build_queue, load_workload


def _load_apps(paths) -> dict[str, appmodel.ApplicationSpec]:
    apps = {}
    for path in paths:
        spec = appmodel.parse_application(Path(path).read_text(encoding="utf-8"))
        if spec.app_name in apps:
            raise appmodel.ApplicationError(f"duplicate app name {spec.app_name!r}")
        apps[spec.app_name] = spec
    return apps


def _cmd_run(args) -> int:
    platform_config = platform_from_arg(args.platform)
    apps = _load_apps(args.app)
    workload = load_workload(args.workload)
    queue = build_queue(workload, known_apps=apps)
    result = engine.run(
        platform_config,
        apps,
        queue,
        policy=args.scheduler,
        mode=args.mode,
        seed=args.seed,
        exec_kernels=args.exec_kernels,
    )
    if args.trace:
        metrics.write_trace(result.trace, args.trace)
    if args.report:
        result.report.write(args.report)
    failed = result.report.failed_instances
    print(
        f"makespan {result.report.makespan_ns / 1e6:.3f} ms, "
        f"{len(result.trace.of_kind('task_end'))} tasks, "
        f"{len(failed)} failed instance(s)"
    )
    return 0 if not failed else 1


def _cmd_validate(args) -> int:
    status = 0
    for path in args.app:
        try:
            spec = appmodel.parse_application(Path(path).read_text(encoding="utf-8"))
        except appmodel.ApplicationError as exc:
            print(f"{path}: PARSE ERROR: {exc}")
            status = 1
            continue
        report = appmodel.validate_dag(spec)
        if report.ok:
            print(f"{path}: ok ({len(spec.dag)} nodes, {len(spec.variables)} variables)")
        else:
            status = 1
            print(f"{path}: {len(report.findings)} finding(s)")
            for finding in report.findings:
                print(f"  - {finding}")
    return status


def _cmd_report(args) -> int:
    trace = metrics.read_trace(args.trace)
    report = metrics.compute_report(trace)
    if args.report:
        report.write(args.report)
    for item in (args.export or "").split(","):
        if not item:
            continue
        kind, _, path = item.partition("=")
        if not path:
            raise metrics.TraceError(f"bad --export entry {item!r}; use kind=path")
        rows = metrics.export_csv(trace, kind.strip(), path.strip())
        print(f"wrote {rows} {kind.strip()} rows to {path.strip()}")
    if args.figures:
        from .figures import render_report_figures

        for path in render_report_figures(trace, args.figures):
            print(f"wrote {path}")
    print(json.dumps(report.to_obj(), indent=2))
    return 0


def _cmd_extract(args) -> int:
    table = extract.RecognitionTable.load(args.recognize) if args.recognize else None
    result = extract.extract_application(
        args.trace,
        args.meta,
        app_name=args.app_name,
        hot_threshold=args.hot,
        window=args.window,
        affinity=args.affinity,
        recognition=table,
    )
    Path(args.output).write_text(appmodel.emit_json(result.spec), encoding="utf-8")
    print(f"{len(result.kernels)} kernel(s), {len(result.nodes)} node(s) -> {args.output}")
    for group in result.kernels:
        print(f"  kernel blocks {sorted(group.members)} x{group.count} "
              f"fingerprint 0x{group.fingerprint:016x}")
    if result.unresolved:
        print(f"  unresolved variable sizes: {', '.join(result.unresolved)}")
    if result.substituted_nodes:
        print(f"  substituted bindings on: {', '.join(result.substituted_nodes)}")
    return 0


def _cmd_fixtures(args) -> int:
    for path in fixtures.write_fixtures(args.output):
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emu", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="emulate a workload")
    p_run.add_argument("--platform", required=True,
                       help="preset (e.g. zcu102-like,fft=2,cpu=3) or .plat.json path")
    p_run.add_argument("--app", action="append", required=True,
                       help=".app.json file (repeatable)")
    p_run.add_argument("--workload", required=True, help=".wl.json file")
    p_run.add_argument("--scheduler", default="frfs",
                       help=f"policy: {', '.join(available_policies())}")
    p_run.add_argument("--mode", choices=("wallclock", "virtual"), default="wallclock")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--exec-kernels", action="store_true",
                       help="execute kernels functionally in virtual mode")
    p_run.add_argument("--trace", help="write trace NDJSON here")
    p_run.add_argument("--report", help="write report JSON here")
    p_run.set_defaults(fn=_cmd_run)

    p_val = sub.add_parser("validate", help="parse and validate applications")
    p_val.add_argument("app", nargs="+", help=".app.json files")
    p_val.set_defaults(fn=_cmd_validate)

    p_rep = sub.add_parser("report", help="recompute stats and exports from a trace")
    p_rep.add_argument("--trace", required=True)
    p_rep.add_argument("--report", help="write report JSON here")
    p_rep.add_argument("--export",
                       help="comma-separated kind=path pairs; kinds: "
                            + ", ".join(metrics.EXPORT_KINDS))
    p_rep.add_argument("--figures", help="directory for gantt/utilization PNGs")
    p_rep.set_defaults(fn=_cmd_report)

    p_ext = sub.add_parser("extract-dag", help="convert a block trace to an application")
    p_ext.add_argument("--trace", required=True, help="block trace (.blk text or binary)")
    p_ext.add_argument("--meta", required=True, help="sidecar .meta.json")
    p_ext.add_argument("--app-name", default="extracted")
    p_ext.add_argument("--hot", type=int, default=extract.DEFAULT_HOT_THRESHOLD)
    p_ext.add_argument("--window", type=int, default=extract.DEFAULT_WINDOW)
    p_ext.add_argument("--affinity", type=float, default=extract.DEFAULT_AFFINITY)
    p_ext.add_argument("--recognize", help="recognition table JSON")
    p_ext.add_argument("-o", "--output", required=True, help="output .app.json")
    p_ext.set_defaults(fn=_cmd_extract)

    p_fix = sub.add_parser("fixtures", help="write the bundled app/workload/platform files")
    p_fix.add_argument("-o", "--output", default="fixtures")
    p_fix.set_defaults(fn=_cmd_fixtures)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (appmodel.ApplicationError, metrics.TraceError, extract.ExtractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
