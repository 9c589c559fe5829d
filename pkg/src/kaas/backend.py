"""Simulated kernel-execution engine.

Builtin kernels run over a logical thread grid on simulated device memory
(little-endian f32, row-major). Semantics are defined by a sequential
model: threads cover global ids ``g = 0 .. total-1`` ascending, ids past
the kernel's logical element count are no-ops, and any inner accumulation
uses a single f32 accumulator in ascending index order. Inputs are read in
full before outputs are written, so results never depend on the grid/block
factorization. The implementations below vectorize over threads but are
bit-identical to that model.

Costs are charged to a virtual clock held in integer nanoseconds; nothing
ever sleeps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    ArityMismatchError,
    BackendFaultError,
    DuplicateKernelError,
    UnknownKernelError,
)
from .protocol import LaunchDims, ScalarLiteral

F32 = np.dtype("<f4")

NS_PER_S = 1_000_000_000


def _ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


@dataclass(frozen=True)
class TimingModel:
    """Simulated device cost parameters, all strictly positive."""

    h2d_bandwidth: float = 12 * 2**30  # bytes per virtual second
    d2h_bandwidth: float = 12 * 2**30
    fetch_latency: float = 200e-6  # virtual seconds per store get
    launch_overhead: float = 10e-6  # virtual seconds per kernel launch
    flop_rate: float = 1e12  # fused multiply-adds per virtual second

    def __post_init__(self):
        for name in ("h2d_bandwidth", "d2h_bandwidth", "fetch_latency",
                     "launch_overhead", "flop_rate"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ValueError(f"timing parameter {name} must be > 0, got {v!r}")

    def fetch_time_ns(self, nbytes: int) -> int:
        return _ns(self.fetch_latency) + _ns(nbytes / self.h2d_bandwidth)

    def flush_time_ns(self, nbytes: int) -> int:
        return _ns(nbytes / self.d2h_bandwidth)

    def launch_overhead_ns(self) -> int:
        return _ns(self.launch_overhead)

    def compute_time_ns(self, fma_count: int) -> int:
        return _ns(fma_count / self.flop_rate)

    def to_dict(self) -> dict:
        return {
            "h2d_bandwidth": self.h2d_bandwidth,
            "d2h_bandwidth": self.d2h_bandwidth,
            "fetch_latency": self.fetch_latency,
            "launch_overhead": self.launch_overhead,
            "flop_rate": self.flop_rate,
        }

    @staticmethod
    def from_dict(doc: dict) -> "TimingModel":
        known = {"h2d_bandwidth", "d2h_bandwidth", "fetch_latency",
                 "launch_overhead", "flop_rate"}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown timing fields {sorted(extra)}")
        return TimingModel(**doc)

    @staticmethod
    def from_file(path: str) -> "TimingModel":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError("timing config must be a JSON object")
        return TimingModel.from_dict(doc)


class VirtualClock:
    """Monotone simulated time in integer nanoseconds."""

    def __init__(self):
        self.now_ns = 0

    def advance_ns(self, delta: int) -> None:
        if delta < 0:
            raise ValueError("virtual clock cannot move backwards")
        self.now_ns += delta

    @property
    def now_seconds(self) -> float:
        return self.now_ns / NS_PER_S


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class BuiltinKernel:
    kernel_id: str
    literal_types: tuple[str, ...]
    arg_count: int
    writes: tuple[int, ...]  # indices of buffer params the kernel writes
    fn: Callable[[LaunchDims, tuple[ScalarLiteral, ...], list[np.ndarray]], int]

    def check_arity(self, literals: tuple[ScalarLiteral, ...], n_args: int) -> None:
        if n_args != self.arg_count:
            raise ArityMismatchError(
                f"{self.kernel_id}: expected {self.arg_count} buffer args, got {n_args}"
            )
        tags = tuple(l.type for l in literals)
        if tags != self.literal_types:
            raise ArityMismatchError(
                f"{self.kernel_id}: expected literals {self.literal_types}, got {tags}"
            )


def _extent(lit: ScalarLiteral, kernel_id: str, what: str) -> int:
    n = lit.value
    if not isinstance(n, int) or n < 0:
        raise BackendFaultError(f"{kernel_id}: {what} must be a non-negative integer")
    return n


def _f32_view(view: np.ndarray, count: int, kernel_id: str, arg_idx: int) -> np.ndarray:
    if 4 * count > view.nbytes:
        raise BackendFaultError(
            f"{kernel_id}: arg {arg_idx} needs {4 * count} bytes, "
            f"buffer holds {view.nbytes}"
        )
    return view[: 4 * count].view(F32)


def _k_vector_add(dims, literals, views):
    n = _extent(literals[0], "vector_add", "n")
    x = _f32_view(views[0], n, "vector_add", 0)
    y = _f32_view(views[1], n, "vector_add", 1)
    out = _f32_view(views[2], n, "vector_add", 2)
    cov = min(dims.total_threads, n)
    out[:cov] = x[:cov] + y[:cov]
    return n


def _k_saxpy(dims, literals, views):
    n = _extent(literals[0], "saxpy", "n")
    a = np.float32(literals[1].value)
    x = _f32_view(views[0], n, "saxpy", 0)
    y = _f32_view(views[1], n, "saxpy", 1)
    out = _f32_view(views[2], n, "saxpy", 2)
    cov = min(dims.total_threads, n)
    out[:cov] = a * x[:cov] + y[:cov]
    return n


def _k_matmul(dims, literals, views):
    n = _extent(literals[0], "matmul", "n")
    m = _extent(literals[1], "matmul", "m")
    k = _extent(literals[2], "matmul", "k")
    a = _f32_view(views[0], n * k, "matmul", 0).reshape(n, k)
    b = _f32_view(views[1], k * m, "matmul", 1).reshape(k, m)
    out = _f32_view(views[2], n * m, "matmul", 2)
    # Thread g covers output cell (g // m, g % m); per cell a single f32
    # accumulator runs over the inner index ascending. The k-loop below is
    # bit-identical to that per-cell loop.
    acc = np.zeros((n, m), dtype=F32)
    for kk in range(k):
        acc += a[:, kk : kk + 1] * b[kk : kk + 1, :]
    cov = min(dims.total_threads, n * m)
    out[:cov] = acc.reshape(-1)[:cov]
    return n * m * k


def _k_reduce_sum(dims, literals, views):
    n = _extent(literals[0], "reduce_sum", "n")
    x = _f32_view(views[0], n, "reduce_sum", 0)
    out = _f32_view(views[1], 1, "reduce_sum", 1)
    # Single logical pass, ascending index, one f32 accumulator; a parallel
    # tree reduction is deliberately not simulated.
    if n == 0:
        out[0] = np.float32(0.0)
    else:
        out[0] = np.add.accumulate(x)[-1]
    return n


def _k_fill(dims, literals, views):
    n = _extent(literals[0], "fill", "n")
    v = np.float32(literals[1].value)
    out = _f32_view(views[0], n, "fill", 0)
    cov = min(dims.total_threads, n)
    out[:cov] = v
    return n


class KernelRegistry:
    """Maps kernel ids to builtin implementations. Immutable once the
    server is up; tests may register extra kernels before use."""

    def __init__(self):
        self._kernels: dict[str, BuiltinKernel] = {}

    def register(self, kernel: BuiltinKernel) -> None:
        if kernel.kernel_id in self._kernels:
            raise DuplicateKernelError(f"kernel {kernel.kernel_id!r} already registered")
        self._kernels[kernel.kernel_id] = kernel

    def get(self, kernel_id: str) -> BuiltinKernel:
        try:
            return self._kernels[kernel_id]
        except KeyError:
            raise UnknownKernelError(f"no kernel registered as {kernel_id!r}") from None

    def kernel_ids(self) -> list[str]:
        return sorted(self._kernels)


def default_registry() -> KernelRegistry:
    reg = KernelRegistry()
    reg.register(BuiltinKernel("vector_add", ("i32",), 3, (2,), _k_vector_add))
    reg.register(BuiltinKernel("saxpy", ("i32", "f32"), 3, (2,), _k_saxpy))
    reg.register(BuiltinKernel("matmul", ("i32", "i32", "i32"), 3, (2,), _k_matmul))
    reg.register(BuiltinKernel("reduce_sum", ("i32",), 2, (1,), _k_reduce_sum))
    reg.register(BuiltinKernel("fill", ("i32", "f32"), 1, (0,), _k_fill))
    return reg


class SimulatedBackend:
    """Deterministic stand-in for a real device: applies kernel semantics
    to buffer views and prices the work via the timing model."""

    def __init__(self, registry: KernelRegistry | None = None,
                 timing: TimingModel | None = None):
        self.registry = registry if registry is not None else default_registry()
        self.timing = timing if timing is not None else TimingModel()

    def kernel(self, kernel_id: str) -> BuiltinKernel:
        return self.registry.get(kernel_id)

    def launch(self, kernel_id: str, dims: LaunchDims,
               literals: tuple[ScalarLiteral, ...], views: list[np.ndarray]) -> int:
        """Run one kernel; returns the simulated compute time in virtual ns."""
        kernel = self.kernel(kernel_id)
        kernel.check_arity(literals, len(views))
        # IEEE special values propagate bit-deterministically; nothing traps.
        with np.errstate(all="ignore"):
            fma = kernel.fn(dims, literals, views)
        return self.timing.compute_time_ns(fma)
