"""Kernel registry and the built-in signal-processing kernel set.

Kernels are the functions DAG nodes execute.  Complex sample buffers are
interleaved 32-bit float (re, im) pairs, so a buffer of n complex samples
occupies 8n bytes.  Kernel math runs in float64 and is quantized back to
the float32 buffers at the boundary.

A kernel callable receives the node's argument views in declaration order
and returns an integer status (0 = success).  Python plugin modules export
one callable per kernel symbol with the same contract.
"""

from __future__ import annotations

import importlib
import importlib.util
import struct
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "KernelError",
    "ArgView",
    "KernelHandle",
    "KernelRegistry",
    "builtin_suite",
    "fnv1a64",
    "canonical_summary",
    "fingerprint",
    "invoke",
    "BUILTIN_PLUGIN",
    "SCHED_NOISE_NS",
]

BUILTIN_PLUGIN = "builtin"

# Upper bound on scheduling noise added to busy-wait kernels; the busy(d)
# contract is wall time in [d, d + SCHED_NOISE_NS].
SCHED_NOISE_NS = 50_000_000


class KernelError(RuntimeError):
    """Unknown symbols, unloadable plugins, and argument contract breaks."""


# ---------------------------------------------------------------------------
# Fingerprints
# ---------------------------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: str | bytes) -> int:
    """FNV-1a 64-bit hash; stable across runs and platforms."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_summary(ops: dict[str, int]) -> str:
    """Canonical string form of a normalized operation multiset."""
    return ",".join(f"{name}:{ops[name]}" for name in sorted(ops))


def fingerprint(ops: dict[str, int]) -> int:
    return fnv1a64(canonical_summary(ops))


# ---------------------------------------------------------------------------
# Argument views
# ---------------------------------------------------------------------------


class ArgView:
    """A kernel-visible window onto one variable's buffer.

    Non-pointer variables expose their own slot; pointer variables expose
    the pointed-to heap buffer.  Scalar accessors read/write little-endian
    at offset 0.
    """

    __slots__ = ("name", "buf", "is_ptr")

    def __init__(self, name: str, buf, is_ptr: bool = False):
        self.name = name
        self.buf = memoryview(buf)
        self.is_ptr = is_ptr

    def __len__(self) -> int:
        return len(self.buf)

    # Scalar accessors --------------------------------------------------
    @property
    def u32(self) -> int:
        return struct.unpack_from("<I", self.buf)[0]

    @u32.setter
    def u32(self, value: int) -> None:
        struct.pack_into("<I", self.buf, 0, value)

    @property
    def i32(self) -> int:
        return struct.unpack_from("<i", self.buf)[0]

    @i32.setter
    def i32(self, value: int) -> None:
        struct.pack_into("<i", self.buf, 0, value)

    @property
    def u64(self) -> int:
        return struct.unpack_from("<Q", self.buf)[0]

    @u64.setter
    def u64(self, value: int) -> None:
        struct.pack_into("<Q", self.buf, 0, value)

    @property
    def f32(self) -> float:
        return struct.unpack_from("<f", self.buf)[0]

    @f32.setter
    def f32(self, value: float) -> None:
        struct.pack_into("<f", self.buf, 0, value)

    def read_duration_ns(self) -> int:
        """Duration scalars may be 4 or 8 bytes wide."""
        return self.u64 if len(self.buf) >= 8 else self.u32

    # Array accessors ---------------------------------------------------
    def as_bytes(self) -> np.ndarray:
        return np.frombuffer(self.buf, dtype=np.uint8)

    def as_f32(self) -> np.ndarray:
        return np.frombuffer(self.buf, dtype=np.float32)

    def as_complex(self) -> np.ndarray:
        """Interleaved (re, im) float32 pairs viewed as complex64."""
        return np.frombuffer(self.buf, dtype=np.complex64)

    def complex_len(self) -> int:
        return len(self.buf) // 8

    def write_complex(self, values: np.ndarray) -> None:
        out = self.as_complex()
        out[: len(values)] = values.astype(np.complex64)


def bind_args(instance, node_name: str):
    """Build the argument view list for one task of an instance."""
    node = instance.spec.dag[node_name]
    views = []
    for arg in node.arguments:
        var = instance.spec.variables[arg]
        views.append(ArgView(arg, instance.store[arg], is_ptr=var.is_ptr))
    return views


# ---------------------------------------------------------------------------
# Transform cores (float64)
# ---------------------------------------------------------------------------


def dft_naive_core(x: np.ndarray) -> np.ndarray:
    """Direct O(n^2) DFT: X[k] = sum_m x[m] * exp(-2*pi*i*k*m/n)."""
    x = np.asarray(x, dtype=np.complex128)
    n = len(x)
    m = np.arange(n)
    out = np.empty(n, dtype=np.complex128)
    for k in range(n):
        out[k] = np.sum(x * np.exp(-2j * np.pi * k * m / n))
    return out


def idft_naive_core(x: np.ndarray) -> np.ndarray:
    """Direct inverse DFT with 1/n normalization."""
    x = np.asarray(x, dtype=np.complex128)
    n = len(x)
    m = np.arange(n)
    out = np.empty(n, dtype=np.complex128)
    for k in range(n):
        out[k] = np.sum(x * np.exp(2j * np.pi * k * m / n)) / n
    return out


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_radix2_core(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT; n must be a power of two."""
    x = np.asarray(x, dtype=np.complex128)
    n = len(x)
    if n == 0 or n & (n - 1):
        raise KernelError(f"fft_radix2 requires power-of-two length, got {n}")
    out = x[_bit_reverse_indices(n)].copy()
    half = 1
    while half < n:
        step = half * 2
        twiddle = np.exp(-1j * np.pi * np.arange(half) / half)
        blocks = out.reshape(n // step, step)
        even = blocks[:, :half]
        odd = blocks[:, half:] * twiddle
        upper = even + odd
        lower = even - odd
        blocks[:, :half] = upper
        blocks[:, half:] = lower
        half = step
    return out


def ifft_core(x: np.ndarray) -> np.ndarray:
    """Inverse FFT via conjugation; same power-of-two constraint."""
    x = np.asarray(x, dtype=np.complex128)
    return np.conj(fft_radix2_core(np.conj(x))) / len(x)


def lfm_chirp(n: int) -> np.ndarray:
    """Unit-amplitude linear-FM chirp, n complex samples."""
    k = np.arange(n)
    return np.exp(1j * np.pi * (k * k / n - k)).astype(np.complex128)


def crosscorr_argmax(rx: np.ndarray, ref: np.ndarray) -> int:
    """Direct time-domain cross-correlation lag (oracle-grade, O(n^2))."""
    n = len(ref)
    best_lag, best_mag = 0, -1.0
    for lag in range(-n + 1, n):
        lo = max(0, lag)
        hi = min(n, n + lag)
        acc = np.sum(rx[lo:hi] * np.conj(ref[lo - lag : hi - lag]))
        mag = abs(acc)
        if mag > best_mag:
            best_mag, best_lag = mag, lag
    return best_lag


# ---------------------------------------------------------------------------
# Built-in kernels (ArgView calling convention)
# ---------------------------------------------------------------------------


def _k_lfm_gen(args) -> int:
    n = args[0].u32
    args[1].write_complex(lfm_chirp(n))
    return 0


def _k_delay_channel(args) -> int:
    # (n_samples, delay, src, dst): dst = src shifted right by delay samples.
    n = args[0].u32
    delay = args[1].u32
    src = args[2].as_complex()[:n]
    shifted = np.zeros(n, dtype=np.complex64)
    shifted[delay:] = src[: n - delay]
    args[3].write_complex(shifted)
    return 0


def _k_dft_naive(args) -> int:
    n = args[0].u32
    args[2].write_complex(dft_naive_core(args[1].as_complex()[:n]))
    return 0


def _k_idft_naive(args) -> int:
    n = args[0].u32
    args[2].write_complex(idft_naive_core(args[1].as_complex()[:n]))
    return 0


def _k_fft_radix2(args) -> int:
    n = args[0].u32
    args[2].write_complex(fft_radix2_core(args[1].as_complex()[:n]))
    return 0


def _k_ifft(args) -> int:
    n = args[0].u32
    args[2].write_complex(ifft_core(args[1].as_complex()[:n]))
    return 0


def _k_cmul(args) -> int:
    # (n, a, b, out): elementwise complex multiply.
    n = args[0].u32
    a = args[1].as_complex()[:n].astype(np.complex128)
    b = args[2].as_complex()[:n].astype(np.complex128)
    args[3].write_complex(a * b)
    return 0


def _k_cmul_conj(args) -> int:
    # (n, a, b, out): out = a * conj(b); the matched-filter product.
    n = args[0].u32
    a = args[1].as_complex()[:n].astype(np.complex128)
    b = args[2].as_complex()[:n].astype(np.complex128)
    args[3].write_complex(a * np.conj(b))
    return 0


def _k_max_corr(args) -> int:
    # (n_samples, corr, index, max_corr, lag, sampling_rate)
    # corr holds the circular correlation over 2n bins; bins past n wrap to
    # negative lags.
    corr = args[1].as_complex()
    mags = np.abs(corr)
    idx = int(np.argmax(mags))
    total = len(corr)
    args[2].u32 = idx
    args[3].f32 = float(mags[idx])
    args[4].i32 = idx if idx < total // 2 else idx - total
    return 0


def _k_scramble(args) -> int:
    """Self-inverse LFSR byte scrambler (x^7 + x^4 + 1, seed 0x7F)."""
    data = args[-1]
    buf = data.buf
    state = 0x7F
    for i in range(len(buf)):
        feedback = ((state >> 6) ^ (state >> 3)) & 1
        state = ((state << 1) | feedback) & 0x7F
        buf[i] ^= state
    return 0


def _k_busy(args) -> int:
    """Spin/sleep for the duration (ns) read from the first argument."""
    duration_ns = args[0].read_duration_ns()
    deadline = time.perf_counter_ns() + duration_ns
    slack = duration_ns - 2_000_000
    if slack > 0:
        time.sleep(slack / 1e9)
    while time.perf_counter_ns() < deadline:
        pass
    return 0


def _zero_pad(x: np.ndarray, total: int) -> np.ndarray:
    out = np.zeros(total, dtype=np.complex128)
    out[: len(x)] = x
    return out


def _k_range_fft(args) -> int:
    # (n, src, dst): dst = FFT_{2n}(zero-padded src); padding keeps the
    # later correlation linear rather than circular.
    n = args[0].u32
    args[2].write_complex(fft_radix2_core(_zero_pad(args[1].as_complex()[:n], 2 * n)))
    return 0


def _k_range_mul(args) -> int:
    # (n, X1, X2, out): matched-filter product over all 2n padded bins.
    n = args[0].u32
    a = args[1].as_complex()[: 2 * n].astype(np.complex128)
    b = args[2].as_complex()[: 2 * n].astype(np.complex128)
    args[3].write_complex(a * np.conj(b))
    return 0


def _k_range_fft_naive(args) -> int:
    n = args[0].u32
    args[2].write_complex(dft_naive_core(_zero_pad(args[1].as_complex()[:n], 2 * n)))
    return 0


def _k_range_ifft(args) -> int:
    n = args[0].u32
    args[2].write_complex(ifft_core(args[1].as_complex()[: 2 * n]))
    return 0


def _k_range_ifft_naive(args) -> int:
    n = args[0].u32
    args[2].write_complex(idft_naive_core(args[1].as_complex()[: 2 * n]))
    return 0


# Normalized operation multisets, used for recognition fingerprints.  The
# DFT summary is the shape a loop-nest tracer reports for a direct
# transform: two nested loops around a complex multiply-accumulate with
# twiddle evaluation.
DFT_OPS = {"loop": 2, "trig": 2, "fmul": 4, "fadd": 4, "store": 1}
IDFT_OPS = {"loop": 2, "trig": 2, "fmul": 4, "fadd": 4, "store": 1, "fdiv": 1}
CMUL_OPS = {"loop": 1, "fmul": 4, "fadd": 2, "store": 1}
SCRAMBLE_OPS = {"loop": 1, "xor": 2, "shift": 2, "store": 1}


@dataclass
class KernelHandle:
    """A resolved, invokable kernel."""

    name: str
    provider: str
    fn: object
    fingerprint: int | None = None
    declared_cost: dict[str, int] = field(default_factory=dict)

    def __call__(self, args) -> int:
        return self.fn(args)


def invoke(handle: KernelHandle, args) -> int:
    """Run a kernel; non-int results are treated as status 0."""
    rc = handle.fn(args)
    return 0 if rc is None else int(rc)


def builtin_suite() -> dict[str, KernelHandle]:
    """All built-in kernels, keyed by symbol name."""

    def h(name, fn, ops=None):
        return KernelHandle(
            name=name,
            provider=BUILTIN_PLUGIN,
            fn=fn,
            fingerprint=fingerprint(ops) if ops else None,
        )

    handles = [
        h("lfm_gen", _k_lfm_gen),
        h("delay_channel", _k_delay_channel),
        h("dft_naive", _k_dft_naive, DFT_OPS),
        h("idft_naive", _k_idft_naive, IDFT_OPS),
        h("fft_radix2", _k_fft_radix2),
        h("ifft", _k_ifft),
        h("cmul", _k_cmul, CMUL_OPS),
        h("cmul_conj", _k_cmul_conj),
        h("max_corr", _k_max_corr),
        h("scramble", _k_scramble, SCRAMBLE_OPS),
        h("busy", _k_busy),
        h("range_detect_lfm", _k_lfm_gen),
        h("range_detect_fft", _k_range_fft),
        h("range_detect_fft_naive", _k_range_fft_naive, DFT_OPS),
        h("range_detect_mul", _k_range_mul),
        h("range_detect_ifft", _k_range_ifft),
        h("range_detect_ifft_naive", _k_range_ifft_naive, IDFT_OPS),
        h("range_detect_max", _k_max_corr),
    ]
    return {handle.name: handle for handle in handles}


# ---------------------------------------------------------------------------
# Plugin loading and resolution
# ---------------------------------------------------------------------------


class PythonPluginLoader:
    """Loads kernel plugins via importlib.

    A plugin id ending in ``.py`` is loaded from that file path; any other
    id is imported as a module name.  Native shared objects are not
    supported in this runtime and produce a clear error.
    """

    def __init__(self, search_paths: list[str] | None = None):
        self.search_paths = [Path(p) for p in (search_paths or ["."])]
        self._cache: dict[str, object] = {}

    def load(self, plugin_id: str):
        if plugin_id in self._cache:
            return self._cache[plugin_id]
        if plugin_id.endswith(".so"):
            raise KernelError(
                f"plugin {plugin_id!r} not loadable: native shared objects are not "
                "supported; provide a Python module exporting the kernel symbols"
            )
        if plugin_id.endswith(".py"):
            path = Path(plugin_id)
            if not path.exists():
                for base in self.search_paths:
                    candidate = base / plugin_id
                    if candidate.exists():
                        path = candidate
                        break
            if not path.exists():
                raise KernelError(f"plugin {plugin_id!r} not loadable: file not found")
            spec = importlib.util.spec_from_file_location(
                f"socemu_plugin_{path.stem}", path
            )
            module = importlib.util.module_from_spec(spec)
            sys.modules[spec.name] = module
            spec.loader.exec_module(module)
        else:
            try:
                module = importlib.import_module(plugin_id)
            except ImportError as exc:
                raise KernelError(f"plugin {plugin_id!r} not loadable: {exc}") from exc
        self._cache[plugin_id] = module
        return module


class KernelRegistry:
    """Symbol resolution across the builtin set and loaded plugins."""

    def __init__(self, plugin_loader=None):
        self.builtins = builtin_suite()
        self.plugin_loader = plugin_loader or PythonPluginLoader()
        self._resolved: dict[tuple[str, str], KernelHandle] = {}

    def register_builtin(self, handle: KernelHandle) -> None:
        self.builtins[handle.name] = handle

    def resolve(
        self, run_func: str, plugin: str | None, default_plugin: str
    ) -> KernelHandle:
        """Per-binding plugin overrides the application default."""
        provider = plugin or default_plugin
        key = (provider, run_func)
        if key in self._resolved:
            return self._resolved[key]
        if provider == BUILTIN_PLUGIN:
            if run_func not in self.builtins:
                raise KernelError(f"unknown symbol {run_func}")
            handle = self.builtins[run_func]
        else:
            module = self.plugin_loader.load(provider)
            exported = getattr(module, "KERNELS", None)
            fn = exported.get(run_func) if isinstance(exported, dict) else getattr(module, run_func, None)
            if fn is None or not callable(fn):
                raise KernelError(f"unknown symbol {run_func} in plugin {provider!r}")
            handle = KernelHandle(name=run_func, provider=provider, fn=fn)
        self._resolved[key] = handle
        return handle
