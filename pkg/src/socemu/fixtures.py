"""Shipped application fixtures and canned workload/platform files.

The radar and WiFi applications are functional or calibrated stand-ins:
range detection runs a real matched-filter pipeline end to end, while the
WiFi chains and pulse Doppler bind FFT/scrambler/busy kernels with
durations chosen to land on realistic standalone-runtime ratios.  Task
counts are exact: range detection 6, WiFi TX 7, WiFi RX 9, pulse Doppler
2 + 3 * pulses (770 at the default 256 pulses).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .appmodel import ApplicationSpec, PlatformBinding, TaskNodeSpec, VariableSpec, emit_json
from .kernels import DFT_OPS, IDFT_OPS, fingerprint, lfm_chirp
from .workload import InjectionSpec

__all__ = [
    "range_detection",
    "wifi_tx",
    "wifi_rx",
    "pulse_doppler",
    "fft_stress",
    "default_apps",
    "TABLE2_ROWS",
    "TABLE2_APP_ORDER",
    "T_END_NS",
    "table2_injections",
    "write_fixtures",
]

US = 1_000


def _u32(value: int) -> tuple[int, ...]:
    return tuple(struct.pack("<I", value))


def _u64(value: int) -> tuple[int, ...]:
    return tuple(struct.pack("<Q", value))


def _f32(value: float) -> tuple[int, ...]:
    return tuple(struct.pack("<f", value))


def _scalar(name: str, val=()) -> VariableSpec:
    return VariableSpec(name=name, bytes=max(4, len(val)), is_ptr=False,
                        ptr_alloc_bytes=0, val=tuple(val))


def _buf(name: str, nbytes: int, val=()) -> VariableSpec:
    return VariableSpec(name=name, bytes=8, is_ptr=True, ptr_alloc_bytes=nbytes,
                        val=tuple(val))


def _dur(name: str, ns: int) -> VariableSpec:
    return VariableSpec(name=name, bytes=8, is_ptr=False, ptr_alloc_bytes=0, val=_u64(ns))


def _node(name, args, preds, succs, platforms) -> TaskNodeSpec:
    return TaskNodeSpec(
        name=name,
        arguments=tuple(args),
        predecessors=tuple(preds),
        successors=tuple(succs),
        platforms=tuple(platforms),
    )


def _cpu(run_func: str, est: int) -> PlatformBinding:
    return PlatformBinding(platform_name="cpu", run_func=run_func, est_exec_time=est)


def _fft_pe(run_func: str, est: int) -> PlatformBinding:
    return PlatformBinding(platform_name="fft", run_func=run_func, est_exec_time=est)


def _busy_node(name, dur_var, est, preds, succs, extra_args=()) -> TaskNodeSpec:
    return _node(name, (dur_var, *extra_args), preds, succs, [_cpu("busy", est)])


# ---------------------------------------------------------------------------
# Range detection (6 tasks, functional)
# ---------------------------------------------------------------------------


def range_detection(n: int = 256, delay: int = 10, naive: bool = False,
                    app_name: str | None = None) -> ApplicationSpec:
    """Matched-filter range detection; the received signal is the chirp
    delayed by ``delay`` samples, baked into the rx initializer."""
    chirp = lfm_chirp(n).astype(np.complex64)
    rx = np.zeros(n, dtype=np.complex64)
    rx[delay:] = chirp[: n - delay]

    if naive:
        est_fft_cpu = max(1, (n * n) // 13) * US  # O(n^2) reference transform
    else:
        est_fft_cpu = max(1, 60 * n // 256) * US
    est_fft_accel = 50 * US
    fft_func = "range_detect_fft_naive" if naive else "range_detect_fft"
    ifft_func = "range_detect_ifft_naive" if naive else "range_detect_ifft"

    variables = {
        "n_samples": _scalar("n_samples", _u32(n)),
        "lfm_waveform": _buf("lfm_waveform", 8 * n),
        "rx": _buf("rx", 8 * n, tuple(rx.tobytes())),
        "X1": _buf("X1", 16 * n),
        "X2": _buf("X2", 16 * n),
        "corr_freq": _buf("corr_freq", 16 * n),
        "corr": _buf("corr", 16 * n),
        "index": _scalar("index"),
        "max_corr": _scalar("max_corr"),
        "lag": _scalar("lag"),
        "sampling_rate": _scalar("sampling_rate", _f32(1e6)),
    }
    fft_platforms = [_cpu(fft_func, est_fft_cpu)] + ([] if naive else [_fft_pe(fft_func, est_fft_accel)])
    dag = {
        "LFM": _node("LFM", ["n_samples", "lfm_waveform"], [], ["FFT_1"],
                     [_cpu("range_detect_lfm", 20 * US)]),
        "FFT_0": _node("FFT_0", ["n_samples", "rx", "X1"], [], ["MUL"], fft_platforms),
        "FFT_1": _node("FFT_1", ["n_samples", "lfm_waveform", "X2"], ["LFM"], ["MUL"],
                       fft_platforms),
        "MUL": _node("MUL", ["n_samples", "X1", "X2", "corr_freq"], ["FFT_0", "FFT_1"],
                     ["IFFT"], [_cpu("range_detect_mul", 10 * US)]),
        "IFFT": _node("IFFT", ["n_samples", "corr_freq", "corr"], ["MUL"], ["MAX"],
                      [_cpu(ifft_func, est_fft_cpu)] + ([] if naive else [_fft_pe(ifft_func, est_fft_accel)])),
        "MAX": _node("MAX", ["n_samples", "corr", "index", "max_corr", "lag", "sampling_rate"],
                     ["IFFT"], [], [_cpu("range_detect_max", 15 * US)]),
    }
    if naive:
        dag["FFT_0"].fingerprint = fingerprint(DFT_OPS)
        dag["FFT_1"].fingerprint = fingerprint(DFT_OPS)
        dag["IFFT"].fingerprint = fingerprint(IDFT_OPS)
    name = app_name or ("range_detection_naive" if naive else "range_detection")
    return ApplicationSpec(app_name=name, shared_object="builtin",
                           variables=variables, dag=dag)


# ---------------------------------------------------------------------------
# WiFi stand-ins (7 / 9 tasks)
# ---------------------------------------------------------------------------


def wifi_tx() -> ApplicationSpec:
    variables = {
        "frame": _buf("frame", 64),
        "n_fft": _scalar("n_fft", _u32(64)),
        "symbols": _buf("symbols", 512),
        "spectrum": _buf("spectrum", 512),
        "dur_small": _dur("dur_small", 15 * US),
    }
    chain = ["SCRAMBLER", "ENCODER", "INTERLEAVER", "QPSK", "PILOT_INSERT", "IFFT_64", "CRC"]
    dag = {}
    for i, name in enumerate(chain):
        preds = [chain[i - 1]] if i > 0 else []
        succs = [chain[i + 1]] if i < len(chain) - 1 else []
        if name == "SCRAMBLER":
            dag[name] = _node(name, ["frame"], preds, succs, [_cpu("scramble", 15 * US)])
        elif name == "IFFT_64":
            dag[name] = _node(name, ["n_fft", "symbols", "spectrum"], preds, succs,
                              [_cpu("ifft", 25 * US), _fft_pe("ifft", 45 * US)])
        else:
            dag[name] = _busy_node(name, "dur_small", 15 * US, preds, succs)
    return ApplicationSpec(app_name="wifi_tx", shared_object="builtin",
                           variables=variables, dag=dag)


def wifi_rx() -> ApplicationSpec:
    variables = {
        "frame": _buf("frame", 64),
        "n_fft": _scalar("n_fft", _u32(64)),
        "symbols": _buf("symbols", 512),
        "spectrum": _buf("spectrum", 512),
        "dur_small": _dur("dur_small", 15 * US),
        "dur_viterbi": _dur("dur_viterbi", 2_000 * US),
    }
    chain = ["MATCH_FILTER", "PAYLOAD_EXTRACT", "FFT_64", "PILOT_REMOVE", "DEMOD",
             "DEINTERLEAVE", "VITERBI", "DESCRAMBLE", "ERR_CHECK"]
    dag = {}
    for i, name in enumerate(chain):
        preds = [chain[i - 1]] if i > 0 else []
        succs = [chain[i + 1]] if i < len(chain) - 1 else []
        if name == "FFT_64":
            dag[name] = _node(name, ["n_fft", "symbols", "spectrum"], preds, succs,
                              [_cpu("fft_radix2", 25 * US), _fft_pe("fft_radix2", 45 * US)])
        elif name == "VITERBI":
            dag[name] = _busy_node(name, "dur_viterbi", 2_000 * US, preds, succs)
        elif name == "DESCRAMBLE":
            dag[name] = _node(name, ["frame"], preds, succs, [_cpu("scramble", 15 * US)])
        else:
            dag[name] = _busy_node(name, "dur_small", 15 * US, preds, succs)
    return ApplicationSpec(app_name="wifi_rx", shared_object="builtin",
                           variables=variables, dag=dag)


# ---------------------------------------------------------------------------
# Pulse Doppler stand-in (2 + 3 * pulses tasks; 770 at 256 pulses)
# ---------------------------------------------------------------------------


def pulse_doppler(pulses: int = 256, app_name: str = "pulse_doppler") -> ApplicationSpec:
    variables = {
        "dur_gen": _dur("dur_gen", 20 * US),
        "dur_fft": _dur("dur_fft", 12 * US),
        "dur_mul": _dur("dur_mul", 5 * US),
        "dur_ifft": _dur("dur_ifft", 12 * US),
        "dur_max": _dur("dur_max", 20 * US),
    }
    dag = {}
    fft_names = [f"FFT_p{p:03d}" for p in range(pulses)]
    mul_names = [f"MUL_p{p:03d}" for p in range(pulses)]
    ifft_names = [f"IFFT_p{p:03d}" for p in range(pulses)]
    dag["PD_GEN"] = _busy_node("PD_GEN", "dur_gen", 20 * US, [], fft_names)
    for p in range(pulses):
        dag[fft_names[p]] = _busy_node(fft_names[p], "dur_fft", 12 * US,
                                       ["PD_GEN"], [mul_names[p]])
        dag[mul_names[p]] = _busy_node(mul_names[p], "dur_mul", 5 * US,
                                       [fft_names[p]], [ifft_names[p]])
        dag[ifft_names[p]] = _busy_node(ifft_names[p], "dur_ifft", 12 * US,
                                        [mul_names[p]], ["PD_MAX"])
    dag["PD_MAX"] = _busy_node("PD_MAX", "dur_max", 20 * US, ifft_names, [])
    return ApplicationSpec(app_name=app_name, shared_object="builtin",
                           variables=variables, dag=dag)


# ---------------------------------------------------------------------------
# FFT-heavy stress fixture for platform-configuration studies
# ---------------------------------------------------------------------------


def fft_stress(n_tasks: int = 20, n: int = 128) -> ApplicationSpec:
    """Parallel FFT fan-out; at n=128 the preset accelerator's transfer
    overhead makes a CPU core the faster end-to-end choice."""
    variables = {
        "n_fft": _scalar("n_fft", _u32(n)),
        "src": _buf("src", 8 * n),
        "dur_tiny": _dur("dur_tiny", 5 * US),
    }
    fft_names = [f"FFT_{k:02d}" for k in range(n_tasks)]
    for k in range(n_tasks):
        variables[f"out_{k:02d}"] = _buf(f"out_{k:02d}", 8 * n)
    dag = {"GEN": _busy_node("GEN", "dur_tiny", 5 * US, [], fft_names)}
    for k, name in enumerate(fft_names):
        dag[name] = _node(name, ["n_fft", "src", f"out_{k:02d}"], ["GEN"], ["COLLECT"],
                          [_cpu("fft_radix2", 25 * US), _fft_pe("fft_radix2", 25 * US)])
    dag["COLLECT"] = _busy_node("COLLECT", "dur_tiny", 5 * US, fft_names, [])
    return ApplicationSpec(app_name="fft_stress", shared_object="builtin",
                           variables=variables, dag=dag)


def default_apps(pd_pulses: int = 256) -> dict[str, ApplicationSpec]:
    apps = [
        range_detection(),
        wifi_tx(),
        wifi_rx(),
        pulse_doppler(pulses=pd_pulses),
        fft_stress(),
    ]
    return {app.app_name: app for app in apps}


# ---------------------------------------------------------------------------
# Workload rows: per-app instance counts at each average injection rate
# ---------------------------------------------------------------------------

T_END_NS = 100_000_000  # 100 ms test time-frame

TABLE2_APP_ORDER = ("pulse_doppler", "range_detection", "wifi_tx", "wifi_rx")

TABLE2_ROWS: dict[str, tuple[int, int, int, int]] = {
    "1.71": (8, 123, 20, 20),
    "2.28": (10, 164, 27, 27),
    "3.42": (15, 245, 41, 41),
    "4.57": (18, 329, 55, 55),
    "6.92": (32, 495, 82, 83),
}


def table2_injections(rate: str, t_end_ns: int = T_END_NS) -> list[InjectionSpec]:
    """Injection specs whose floor-derived periods reproduce the row counts
    exactly at probability 1."""
    counts = TABLE2_ROWS[rate]
    return [
        InjectionSpec(app_name=app, period_ns=t_end_ns // count, probability=1.0)
        for app, count in zip(TABLE2_APP_ORDER, counts)
    ]


# ---------------------------------------------------------------------------
# Fixture files
# ---------------------------------------------------------------------------


def write_fixtures(outdir) -> list[Path]:
    """Write the shipped .app.json / .wl.json / .plat.json files."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for app in default_apps().values():
        path = outdir / f"{app.app_name}.app.json"
        path.write_text(emit_json(app), encoding="utf-8")
        written.append(path)

    validation = {"mode": "validation",
                  "counts": {"range_detection": 1, "wifi_tx": 1, "wifi_rx": 1, "pulse_doppler": 1}}
    path = outdir / "validation.wl.json"
    path.write_text(json.dumps(validation, indent=2) + "\n", encoding="utf-8")
    written.append(path)

    for rate in TABLE2_ROWS:
        doc = {
            "mode": "performance",
            "injections": [
                {"app": spec.app_name, "period_ns": spec.period_ns, "probability": spec.probability}
                for spec in table2_injections(rate)
            ],
            "t_end_ns": T_END_NS,
            "seed": 1,
        }
        path = outdir / f"perf_{rate}.wl.json"
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        written.append(path)

    zcu = {
        "manager_core": 0,
        "pes": [
            {"type": "cpu", "kind": "core", "count": 3},
            {"type": "fft", "kind": "accelerator", "count": 2,
             "accel": {"fixed_latency_ns": 5000, "bytes_per_sec": 400000000,
                       "process_time": {"*": 30000}, "local_mem_bytes": 4194304}},
        ],
    }
    path = outdir / "zcu102.plat.json"
    path.write_text(json.dumps(zcu, indent=2) + "\n", encoding="utf-8")
    written.append(path)

    odroid = {
        "manager_core": 0,
        "pes": [
            {"type": "big", "kind": "core", "count": 4},
            {"type": "little", "kind": "core", "count": 3},
        ],
    }
    path = outdir / "odroid.plat.json"
    path.write_text(json.dumps(odroid, indent=2) + "\n", encoding="utf-8")
    written.append(path)
    return written
