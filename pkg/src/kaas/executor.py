"""Single-device request executor with a byte-capacity buffer cache.

One executor owns one simulated device. Per request it resolves every
referenced buffer through the cache (LRU over clean unpinned entries),
runs the invocations in order on the backend, and writes dirty outputs
back to the store exactly once at request end. Intermediates declared
ephemeral never touch the store; that write-back-at-end policy is what
keeps intra-request dataflow on-device and makes failures atomic: the
store is untouched unless every invocation succeeded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import SimulatedBackend, TimingModel, VirtualClock
from .errors import (
    BackendFaultError,
    BufferBusyError,
    InvalidRequestError,
    KaasError,
    OutOfDeviceMemoryError,
    SizeMismatchError,
)
from .protocol import (
    BufferArg,
    InvocationStats,
    IoStats,
    KaasRequest,
    KaasResponse,
    Status,
    validate_request,
)
from .store import ObjectStore

CANARY = b"\xa5" * 8  # guard bytes framing every simulated allocation


@dataclass(frozen=True)
class ExecutorConfig:
    capacity: int  # device memory bytes
    timing: TimingModel = field(default_factory=TimingModel)
    executor_id: int = 0
    debug: bool = False  # canary + ledger checks after every internal step

    def __post_init__(self):
        if not isinstance(self.capacity, int) or self.capacity <= 0:
            raise ValueError(f"capacity must be a positive byte count, got {self.capacity!r}")


class DeviceBuffer:
    """A simulated device-resident allocation.

    ``pinned`` holds the buffer against eviction while a request uses it;
    ``dirty`` means device contents are newer than the store. Ephemerals
    carry no key, are never dirty, and never enter the keyed cache.
    """

    __slots__ = ("key", "size", "is_const", "pinned", "dirty", "last_use", "_backing")

    def __init__(self, key: str | None, size: int, is_const: bool):
        self.key = key
        self.size = size
        self.is_const = is_const
        self.pinned = 0
        self.dirty = False
        self.last_use = 0
        self._backing = bytearray(len(CANARY) + size + len(CANARY))
        self._backing[: len(CANARY)] = CANARY
        self._backing[len(CANARY) + size :] = CANARY

    def data_view(self) -> np.ndarray:
        return np.frombuffer(self._backing, dtype=np.uint8,
                             count=self.size, offset=len(CANARY))

    def load(self, payload: bytes) -> None:
        self._backing[len(CANARY) : len(CANARY) + self.size] = payload

    def snapshot(self) -> bytes:
        return bytes(self._backing[len(CANARY) : len(CANARY) + self.size])

    def canaries_intact(self) -> bool:
        return (
            bytes(self._backing[: len(CANARY)]) == CANARY
            and bytes(self._backing[len(CANARY) + self.size :]) == CANARY
        )


class CacheState:
    """Keyed device-buffer cache plus the accounting ledger.

    ``used_bytes`` is maintained incrementally and must equal the sum of
    entry sizes at all times; live ephemeral allocations count against
    capacity but live outside the keyed table. Ticks are unique, so LRU
    order is total and eviction is deterministic.
    """

    def __init__(self, capacity: int, debug: bool = False):
        self.capacity = capacity
        self.debug = debug
        self.entries: dict[str, DeviceBuffer] = {}
        self.used_bytes = 0
        self.ephemeral_bytes = 0
        self.tick = 0

    # -- ledger -------------------------------------------------------

    def check_accounting(self) -> None:
        """Assert the ledger invariants; raised AssertionError means a bug."""
        total = sum(b.size for b in self.entries.values())
        assert self.used_bytes == total, (
            f"ledger drift: used_bytes={self.used_bytes} actual={total}")
        assert self.used_bytes + self.ephemeral_bytes <= self.capacity, (
            f"capacity exceeded: {self.used_bytes}+{self.ephemeral_bytes}"
            f" > {self.capacity}")
        assert self.ephemeral_bytes >= 0
        for key, buf in self.entries.items():
            assert buf.key == key
            assert buf.pinned >= 0
            assert not (buf.dirty and buf.key is None)

    def _after_step(self) -> None:
        if self.debug:
            self.check_accounting()

    # -- mutations ----------------------------------------------------

    def next_tick(self) -> int:
        self.tick += 1
        return self.tick

    def touch(self, buf: DeviceBuffer) -> None:
        buf.last_use = self.next_tick()
        self._after_step()

    def pin(self, buf: DeviceBuffer) -> None:
        buf.pinned += 1
        self._after_step()

    def unpin(self, buf: DeviceBuffer) -> None:
        assert buf.pinned > 0, "unbalanced unpin"
        buf.pinned -= 1
        self._after_step()

    def insert(self, buf: DeviceBuffer) -> None:
        assert buf.key is not None and buf.key not in self.entries
        self.entries[buf.key] = buf
        self.used_bytes += buf.size
        buf.last_use = self.next_tick()
        self._after_step()

    def remove(self, key: str) -> DeviceBuffer:
        buf = self.entries.pop(key)
        self.used_bytes -= buf.size
        self._after_step()
        return buf

    def alloc_ephemeral(self, size: int) -> DeviceBuffer:
        buf = DeviceBuffer(key=None, size=size, is_const=False)
        self.ephemeral_bytes += size
        buf.pinned = 1
        self._after_step()
        return buf

    def free_ephemeral(self, buf: DeviceBuffer) -> None:
        assert buf.key is None
        self.ephemeral_bytes -= buf.size
        buf.pinned = 0
        self._after_step()

    # -- eviction -----------------------------------------------------

    def free_space(self) -> int:
        return self.capacity - self.used_bytes - self.ephemeral_bytes

    def evict_until(self, needed: int) -> int:
        """Evict clean unpinned entries, oldest tick first, until ``needed``
        bytes fit. Removes nothing if space already suffices."""
        assert needed >= 0
        freed = 0
        while self.free_space() < needed:
            victim = None
            for buf in self.entries.values():
                if buf.pinned == 0 and not buf.dirty:
                    if victim is None or buf.last_use < victim.last_use:
                        victim = buf
            if victim is None:
                raise OutOfDeviceMemoryError(
                    f"need {needed} bytes, {self.free_space()} free and no"
                    " evictable entries")
            self.remove(victim.key)
            freed += victim.size
        return freed


class _ReqStats:
    __slots__ = ("store_gets", "store_puts", "bytes_fetched", "bytes_flushed",
                 "cache_hits", "cache_misses")

    def __init__(self):
        self.store_gets = 0
        self.store_puts = 0
        self.bytes_fetched = 0
        self.bytes_flushed = 0
        self.cache_hits = 0
        self.cache_misses = 0

    def freeze(self) -> IoStats:
        return IoStats(self.store_gets, self.store_puts, self.bytes_fetched,
                       self.bytes_flushed, self.cache_hits, self.cache_misses)


class Executor:
    """Owns one device cache and runs requests one at a time."""

    def __init__(self, config: ExecutorConfig, store: ObjectStore,
                 backend: SimulatedBackend | None = None):
        self.config = config
        self.executor_id = config.executor_id
        self.store = store
        self.backend = backend if backend is not None else SimulatedBackend(
            timing=config.timing)
        self.cache = CacheState(config.capacity, debug=config.debug)
        self.clock = VirtualClock()
        self.total_hits = 0
        self.total_misses = 0
        self.requests_served = 0

    # -- buffer resolution ---------------------------------------------

    def resolve_buffer(self, arg: BufferArg, stats: _ReqStats | None = None) -> DeviceBuffer:
        """Materialize one buffer argument on-device and pin it.

        Ephemerals get a fresh zero-filled allocation. Const inputs are
        served from cache when present; everything else non-ephemeral is
        fetched fresh from the store (inputs) or allocated zeroed
        (outputs). The caller owns exactly one pin on the result.
        """
        if stats is None:
            stats = _ReqStats()
        cache = self.cache

        if arg.is_ephemeral:
            cache.evict_until(arg.size)
            return cache.alloc_ephemeral(arg.size)

        cached = cache.entries.get(arg.key)

        if arg.is_const:
            if cached is not None:
                if cached.size != arg.size:
                    raise SizeMismatchError(
                        f"buffer {arg.name!r}: cached object under {arg.key!r} is"
                        f" {cached.size} bytes, request declares {arg.size}")
                stats.cache_hits += 1
                cache.pin(cached)
                cache.touch(cached)
                cached.is_const = True
                return cached
            cache.evict_until(arg.size)
            buf = DeviceBuffer(arg.key, arg.size, is_const=True)
            self._fetch_into(buf, arg, stats)
            cache.insert(buf)
            cache.pin(buf)
            return buf

        if arg.direction == "output":
            # Allocation only; never fetched. Entered in the cache so a
            # later request can consume the flushed result warm.
            if cached is not None:
                if cached.pinned > 0:
                    raise BufferBusyError(
                        f"buffer {arg.name!r}: key {arg.key!r} pinned elsewhere")
                cache.remove(arg.key)
            cache.evict_until(arg.size)
            buf = DeviceBuffer(arg.key, arg.size, is_const=False)
            stats.cache_misses += 1
            cache.insert(buf)
            cache.pin(buf)
            return buf

        # non-const input / inout: always re-fetched (no store versioning,
        # so a cached copy could be stale).
        if cached is not None and cached.pinned > 0:
            raise BufferBusyError(
                f"buffer {arg.name!r}: key {arg.key!r} pinned elsewhere")
        if cached is not None and cached.size == arg.size:
            # same-size entry: overwrite contents in place
            self._fetch_into(cached, arg, stats)
            cached.is_const = False
            cache.pin(cached)
            cache.touch(cached)
            return cached
        if cached is not None:
            cache.remove(arg.key)
        cache.evict_until(arg.size)
        buf = DeviceBuffer(arg.key, arg.size, is_const=False)
        self._fetch_into(buf, arg, stats)
        cache.insert(buf)
        cache.pin(buf)
        return buf

    def _fetch_into(self, buf: DeviceBuffer, arg: BufferArg, stats: _ReqStats) -> None:
        payload = self.store.get(arg.key)  # NotFoundError propagates
        if len(payload) != arg.size:
            raise SizeMismatchError(
                f"buffer {arg.name!r}: store object {arg.key!r} is"
                f" {len(payload)} bytes, request declares {arg.size}")
        buf.load(payload)
        buf.dirty = False
        self.clock.advance_ns(self.backend.timing.fetch_time_ns(arg.size))
        stats.store_gets += 1
        stats.bytes_fetched += arg.size
        stats.cache_misses += 1

    # -- request lifecycle ----------------------------------------------

    def execute(self, req: KaasRequest) -> KaasResponse:
        """Run one request to completion; never raises for request-level
        failures -- they come back as an error response."""
        t0 = self.clock.now_ns
        stats = _ReqStats()

        violations = validate_request(req)
        if violations:
            return self._finish(req, stats, t0,
                                Status.make_error("InvalidRequest", "; ".join(violations)))

        # Static checks before any cache or store side effect.
        try:
            kernels = []
            for inv in req.invocations:
                kernel = self.backend.kernel(inv.kernel_id)
                kernel.check_arity(inv.literals, len(inv.args))
                for idx in kernel.writes:
                    arg = req.by_name[inv.args[idx]]
                    if not arg.is_ephemeral and arg.direction == "input":
                        raise InvalidRequestError(
                            f"kernel {inv.kernel_id!r} writes to read-only"
                            f" buffer {arg.name!r}")
                kernels.append(kernel)
        except KaasError as exc:
            return self._finish(req, stats, t0, Status.make_error(exc.kind, exc.message))

        resolved: dict[str, DeviceBuffer] = {}
        ephemerals: list[DeviceBuffer] = []
        try:
            for arg in req.referenced_buffers():
                buf = self.resolve_buffer(arg, stats)
                resolved[arg.name] = buf
                if arg.is_ephemeral:
                    ephemerals.append(buf)

            per_inv = []
            for inv, kernel in zip(req.invocations, kernels):
                views = [resolved[name].data_view() for name in inv.args]
                compute_ns = self.backend.launch(inv.kernel_id, inv.dims,
                                                 inv.literals, views)
                overhead_ns = self.backend.timing.launch_overhead_ns()
                self.clock.advance_ns(overhead_ns + compute_ns)
                if self.config.debug:
                    self._check_canaries(inv.args, resolved)
                for idx in kernel.writes:
                    buf = resolved[inv.args[idx]]
                    if buf.key is not None:
                        buf.dirty = True
                per_inv.append(InvocationStats(inv.kernel_id, compute_ns, overhead_ns))

            # Write-back happens only here, after every invocation
            # succeeded: no partial puts, ever.
            for arg in req.referenced_buffers():
                buf = resolved[arg.name]
                if buf.dirty:
                    self.store.put(buf.key, buf.snapshot())
                    self.clock.advance_ns(self.backend.timing.flush_time_ns(buf.size))
                    stats.store_puts += 1
                    stats.bytes_flushed += buf.size
                    buf.dirty = False
            status = Status.make_ok()
        except KaasError as exc:
            self._release(resolved, ephemerals, drop_dirty=True)
            return self._finish(req, stats, t0, Status.make_error(exc.kind, exc.message))

        self._release(resolved, ephemerals, drop_dirty=False)
        return self._finish(req, stats, t0, status, per_inv)

    def _check_canaries(self, names, resolved) -> None:
        for name in names:
            if not resolved[name].canaries_intact():
                raise BackendFaultError(f"kernel wrote outside buffer {name!r}")

    def _release(self, resolved: dict[str, DeviceBuffer],
                 ephemerals: list[DeviceBuffer], drop_dirty: bool) -> None:
        for buf in ephemerals:
            self.cache.free_ephemeral(buf)
        # Duplicate const keys alias one DeviceBuffer under two names; each
        # resolution took a pin, so unpin once per name.
        for buf in resolved.values():
            if buf.key is None:
                continue
            self.cache.unpin(buf)
        if drop_dirty:
            # A dirty entry holds partial results from a failed request;
            # it must never survive to be observed or evicted.
            for buf in resolved.values():
                if buf.key is not None and buf.dirty and buf.key in self.cache.entries:
                    self.cache.remove(buf.key)
                    buf.dirty = False

    def _finish(self, req: KaasRequest, stats: _ReqStats, t0: int, status: Status,
                per_inv: list[InvocationStats] | None = None) -> KaasResponse:
        self.total_hits += stats.cache_hits
        self.total_misses += stats.cache_misses
        self.requests_served += 1
        if self.config.debug:
            self.cache.check_accounting()
        return KaasResponse(
            request_id=req.request_id,
            status=status,
            per_invocation=tuple(per_inv or ()),
            io_stats=stats.freeze(),
            simulated_total_time=self.clock.now_ns - t0,
        )

    def stats(self) -> dict:
        return {
            "executor_id": self.executor_id,
            "used_bytes": self.cache.used_bytes,
            "entries": len(self.cache.entries),
            "cache_hits": self.total_hits,
            "cache_misses": self.total_misses,
            "requests": self.requests_served,
            "clock_ns": self.clock.now_ns,
        }
