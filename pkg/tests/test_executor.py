import random

import numpy as np
import pytest

from kaas.backend import SimulatedBackend, TimingModel
from kaas.errors import (
    NotFoundError,
    OutOfDeviceMemoryError,
    SizeMismatchError,
)
from kaas.executor import CacheState, DeviceBuffer, Executor, ExecutorConfig
from kaas.protocol import (
    BufferArg,
    KaasRequest,
    KernelInvocation,
    LaunchDims,
    f32,
    i32,
)
from kaas.store import MemoryStore

from genreq import fuzz_request
from oracles import ModelCache, ref_matmul

F32 = np.dtype("<f4")


def make_executor(capacity=1 << 20, debug=True, store=None):
    store = store if store is not None else MemoryStore()
    cfg = ExecutorConfig(capacity=capacity, executor_id=0, debug=debug)
    return Executor(cfg, store, SimulatedBackend(timing=cfg.timing)), store


def chain_request(dim=4, rid="req-1"):
    size = dim * dim * 4
    dims = LaunchDims(grid_x=1, block_x=max(1, dim * dim))
    lits = (i32(dim), i32(dim), i32(dim))
    return KaasRequest(
        rid,
        buffers=(
            BufferArg("A", size, "input", key="A", is_const=True),
            BufferArg("B", size, "input", key="B", is_const=True),
            BufferArg("C", size, "inout", is_ephemeral=True),
            BufferArg("D", size, "output", key="D"),
        ),
        invocations=(
            KernelInvocation("matmul", dims, lits, ("A", "B", "C")),
            KernelInvocation("matmul", dims, lits, ("C", "C", "D")),
        ),
    )


def seed_chain_inputs(store, dim=4, seed=3):
    rng = np.random.default_rng(seed)
    a = (rng.standard_normal(dim * dim) * 2).astype(F32)
    b = (rng.standard_normal(dim * dim) * 2).astype(F32)
    store.put("A", a.tobytes())
    store.put("B", b.tobytes())
    return a, b


class TestResolveBuffer:
    def test_ephemeral_is_zero_filled(self):
        ex, _ = make_executor()
        buf = ex.resolve_buffer(BufferArg("tmp", 32, "inout", is_ephemeral=True))
        assert buf.key is None and buf.pinned == 1
        assert buf.snapshot() == b"\x00" * 32
        ex.cache.free_ephemeral(buf)

    def test_missing_input_key(self):
        ex, _ = make_executor()
        with pytest.raises(NotFoundError):
            ex.resolve_buffer(BufferArg("x", 8, "input", key="absent"))

    def test_const_second_resolution_hits(self):
        from kaas.executor import _ReqStats

        ex, store = make_executor(capacity=1024)
        store.put("w", bytes(64))
        arg = BufferArg("w", 64, "input", key="w", is_const=True)
        first = _ReqStats()
        b1 = ex.resolve_buffer(arg, first)
        ex.cache.unpin(b1)
        assert first.store_gets == 1
        second = _ReqStats()
        b2 = ex.resolve_buffer(arg, second)
        assert b2 is b1
        assert second.store_gets == 0 and second.cache_hits == 1
        ex.cache.unpin(b2)

    def test_store_size_mismatch(self):
        ex, store = make_executor()
        store.put("w", bytes(60))
        with pytest.raises(SizeMismatchError):
            ex.resolve_buffer(BufferArg("w", 64, "input", key="w", is_const=True))

    def test_non_const_always_refetched(self):
        ex, store = make_executor()
        store.put("k", b"\x01" * 8)
        arg = BufferArg("x", 8, "inout", key="k")
        b1 = ex.resolve_buffer(arg)
        ex.cache.unpin(b1)
        store.put("k", b"\x02" * 8)
        b2 = ex.resolve_buffer(arg)
        assert b2.snapshot() == b"\x02" * 8  # fresh bytes, not the stale cache
        ex.cache.unpin(b2)


class TestEviction:
    def test_hand_simulated_lru(self):
        cache = CacheState(capacity=64, debug=True)
        a = DeviceBuffer("a", 32, False)
        b = DeviceBuffer("b", 32, False)
        cache.insert(a)
        cache.insert(b)
        cache.touch(a)
        cache.touch(b)
        freed = cache.evict_until(32)
        assert freed == 32 and set(cache.entries) == {"b"}
        c = DeviceBuffer("c", 32, False)
        cache.insert(c)
        assert set(cache.entries) == {"b", "c"}

    def test_needed_zero_is_noop(self):
        cache = CacheState(capacity=64, debug=True)
        cache.insert(DeviceBuffer("a", 64, False))
        assert cache.evict_until(0) == 0
        assert set(cache.entries) == {"a"}

    def test_all_pinned_raises(self):
        cache = CacheState(capacity=64, debug=True)
        for key in ("a", "b"):
            buf = DeviceBuffer(key, 32, False)
            cache.insert(buf)
            cache.pin(buf)
        with pytest.raises(OutOfDeviceMemoryError):
            cache.evict_until(32)

    def test_dirty_entries_are_not_candidates(self):
        cache = CacheState(capacity=64, debug=True)
        dirty = DeviceBuffer("d", 64, False)
        cache.insert(dirty)
        dirty.dirty = True
        with pytest.raises(OutOfDeviceMemoryError):
            cache.evict_until(32)

    def test_model_replay(self):
        """200 random steps against the hand oracle of the tick/evict rules."""
        rng = random.Random(2024)
        cache = CacheState(capacity=4096, debug=True)
        model = ModelCache(4096)
        live: dict[str, DeviceBuffer] = {}
        counter = 0
        for step in range(200):
            op = rng.random()
            if op < 0.45 or not live:
                size = rng.choice((256, 512, 1024))
                key = f"k{counter}"
                counter += 1
                try:
                    expect_victims = model.evict_until(size)
                    model_ok = True
                except RuntimeError:
                    model_ok = False
                if not model_ok:
                    with pytest.raises(OutOfDeviceMemoryError):
                        cache.evict_until(size)
                    # both sides partially evicted before failing; resync
                    live = {k: b for k, b in live.items() if k in model.entries}
                    assert set(cache.entries) == set(model.entries)
                    continue
                before = set(cache.entries)
                cache.evict_until(size)
                assert before - set(cache.entries) == set(expect_victims)
                for victim in expect_victims:
                    live.pop(victim)
                buf = DeviceBuffer(key, size, False)
                cache.insert(buf)
                model.insert(key, size)
                live[key] = buf
            elif op < 0.70:
                key = rng.choice(sorted(live))
                cache.touch(live[key])
                model.touch(key)
            elif op < 0.85:
                key = rng.choice(sorted(live))
                cache.pin(live[key])
                model.pin(key)
            else:
                key = rng.choice(sorted(live))
                if live[key].pinned > 0:
                    cache.unpin(live[key])
                    model.unpin(key)
            assert {k: b.size for k, b in cache.entries.items()} == {
                k: e["size"] for k, e in model.entries.items()
            }
            assert {k: b.last_use for k, b in cache.entries.items()} == {
                k: e["last_use"] for k, e in model.entries.items()
            }
            assert cache.used_bytes == model.used


class TestExecuteRequest:
    def test_matmul_chain_counts_and_bits(self):
        ex, store = make_executor()
        a, b = seed_chain_inputs(store)
        resp = ex.execute(chain_request())
        assert resp.status.ok
        assert resp.io_stats.store_gets == 2
        assert resp.io_stats.store_puts == 1
        ab = np.zeros(16, dtype=F32)
        ref_matmul(a, b, 4, 4, 4, 16, ab)
        expect = np.zeros(16, dtype=F32)
        ref_matmul(ab, ab, 4, 4, 4, 16, expect)
        assert store.get("D") == expect.tobytes()

    def test_empty_invocations_zero_stats(self):
        ex, _ = make_executor()
        resp = ex.execute(KaasRequest("empty"))
        assert resp.status.ok
        st = resp.io_stats
        assert (st.store_gets, st.store_puts, st.bytes_fetched, st.bytes_flushed,
                st.cache_hits, st.cache_misses) == (0, 0, 0, 0, 0, 0)
        assert resp.simulated_total_time == 0

    def test_unreferenced_buffers_never_fetched(self):
        ex, store = make_executor()
        store.put("u", bytes(16))
        req = KaasRequest(
            "r", buffers=(BufferArg("u", 16, "input", key="u", is_const=True),)
        )
        resp = ex.execute(req)
        assert resp.status.ok and resp.io_stats.store_gets == 0

    def test_warm_const_second_run(self):
        ex, store = make_executor()
        seed_chain_inputs(store)
        cold = ex.execute(chain_request(rid="cold"))
        warm = ex.execute(chain_request(rid="warm"))
        assert warm.io_stats.store_gets == 0
        assert warm.io_stats.store_puts == 1
        assert warm.io_stats.cache_hits == 2
        fetch = ex.backend.timing.fetch_time_ns(64)
        assert cold.simulated_total_time - warm.simulated_total_time == 2 * fetch

    def test_stats_arithmetic_invariant(self):
        ex, store = make_executor()
        seed_chain_inputs(store)
        resp = ex.execute(chain_request())
        non_eph = [b for b in chain_request().referenced_buffers() if not b.is_ephemeral]
        assert resp.io_stats.cache_hits + resp.io_stats.cache_misses == len(non_eph)

    def test_invalid_request_has_no_side_effects(self):
        ex, store = make_executor()
        req = KaasRequest(
            "bad",
            buffers=(BufferArg("a", 8, "input", is_const=True, is_ephemeral=True),),
            invocations=(KernelInvocation("fill", LaunchDims(), (i32(2), f32(0.0)),
                                          ("a",)),),
        )
        resp = ex.execute(req)
        assert resp.status.error_kind == "InvalidRequest"
        assert store.keys() == []
        assert ex.cache.entries == {} and ex.cache.used_bytes == 0

    def test_write_to_const_rejected(self):
        ex, store = make_executor()
        store.put("w", bytes(8))
        req = KaasRequest(
            "r",
            buffers=(BufferArg("w", 8, "input", key="w", is_const=True),),
            invocations=(KernelInvocation("fill", LaunchDims(block_x=2),
                                          (i32(2), f32(1.0)), ("w",)),),
        )
        resp = ex.execute(req)
        assert resp.status.error_kind == "InvalidRequest"
        assert resp.io_stats.store_gets == 0  # rejected before any fetch

    def test_unknown_kernel_before_side_effects(self):
        ex, store = make_executor()
        store.put("x", bytes(8))
        req = KaasRequest(
            "r",
            buffers=(BufferArg("x", 8, "input", key="x", is_const=True),),
            invocations=(KernelInvocation("warp", LaunchDims(), (), ("x",)),),
        )
        resp = ex.execute(req)
        assert resp.status.error_kind == "UnknownKernel"
        assert resp.io_stats.store_gets == 0

    def test_failure_atomicity_no_partial_puts(self):
        ex, store = make_executor()
        store.put("in", bytes(16))
        before = {k: store.get(k) for k in store.keys()}
        # first invocation succeeds and writes "out"; second faults on bounds
        req = KaasRequest(
            "r",
            buffers=(
                BufferArg("x", 16, "input", key="in"),
                BufferArg("out", 16, "output", key="out"),
            ),
            invocations=(
                KernelInvocation("fill", LaunchDims(block_x=4), (i32(4), f32(1.0)),
                                 ("out",)),
                KernelInvocation("vector_add", LaunchDims(block_x=64),
                                 (i32(64),), ("x", "x", "out")),
            ),
        )
        resp = ex.execute(req)
        assert resp.status.error_kind == "BackendFault"
        assert {k: store.get(k) for k in store.keys()} == before
        assert all(b.pinned == 0 for b in ex.cache.entries.values())
        assert not any(b.dirty for b in ex.cache.entries.values())
        assert ex.cache.ephemeral_bytes == 0

    def test_oom_when_working_set_exceeds_capacity(self):
        ex, store = make_executor(capacity=64)
        store.put("big", bytes(48))
        req = KaasRequest(
            "r",
            buffers=(
                BufferArg("x", 48, "input", key="big", is_const=True),
                BufferArg("t", 48, "inout", is_ephemeral=True),
            ),
            invocations=(
                KernelInvocation("vector_add", LaunchDims(block_x=12), (i32(12),),
                                 ("x", "x", "t")),
            ),
        )
        resp = ex.execute(req)
        assert resp.status.error_kind == "OutOfDeviceMemory"
        assert ex.cache.ephemeral_bytes == 0
        assert all(b.pinned == 0 for b in ex.cache.entries.values())

    def test_flushed_output_stays_cached_clean(self):
        ex, store = make_executor()
        req = KaasRequest(
            "r",
            buffers=(BufferArg("out", 16, "output", key="o"),),
            invocations=(KernelInvocation("fill", LaunchDims(block_x=4),
                                          (i32(4), f32(3.0)), ("out",)),),
        )
        assert ex.execute(req).status.ok
        entry = ex.cache.entries["o"]
        assert not entry.dirty and entry.pinned == 0
        assert store.get("o") == np.full(4, 3.0, dtype=F32).tobytes()

    def test_intra_request_dataflow_reads_prior_write(self):
        ex, store = make_executor()
        req = KaasRequest(
            "r",
            buffers=(
                BufferArg("t", 16, "inout", is_ephemeral=True),
                BufferArg("acc", 4, "output", key="acc"),
            ),
            invocations=(
                KernelInvocation("fill", LaunchDims(block_x=4), (i32(4), f32(2.0)),
                                 ("t",)),
                KernelInvocation("reduce_sum", LaunchDims(), (i32(4),), ("t", "acc")),
            ),
        )
        assert ex.execute(req).status.ok
        assert np.frombuffer(store.get("acc"), F32)[0] == 8.0

    def test_duplicate_const_keys_share_one_entry(self):
        ex, store = make_executor()
        store.put("w", np.arange(4, dtype=F32).tobytes())
        req = KaasRequest(
            "r",
            buffers=(
                BufferArg("p", 16, "input", key="w", is_const=True),
                BufferArg("q", 16, "input", key="w", is_const=True),
                BufferArg("out", 16, "output", is_ephemeral=True),
            ),
            invocations=(
                KernelInvocation("vector_add", LaunchDims(block_x=4), (i32(4),),
                                 ("p", "q", "out")),
            ),
        )
        resp = ex.execute(req)
        assert resp.status.ok
        assert resp.io_stats.store_gets == 1
        assert resp.io_stats.cache_hits == 1 and resp.io_stats.cache_misses == 1
        assert len(ex.cache.entries) == 1

    def test_determinism_across_fresh_executors(self):
        def run():
            ex, store = make_executor()
            seed_chain_inputs(store, seed=11)
            responses = [ex.execute(chain_request(rid=f"r{i}")) for i in range(5)]
            return responses, {k: store.get(k) for k in store.keys()}

        r1, s1 = run()
        r2, s2 = run()
        assert r1 == r2 and s1 == s2


class TestPinBalanceFuzz:
    def test_fuzz_stream_is_deterministic(self):
        """Same store contents + same request sequence: byte-identical
        outputs and identical responses, end to end."""

        def run():
            rng = random.Random(31337)
            store = MemoryStore()
            pool = []
            for i in range(8):
                size = rng.choice((16, 64, 256, 1024))
                store.put(f"k{i}", rng.randbytes(size))
                pool.append((f"k{i}", size))
            ex, _ = make_executor(capacity=1 << 18, store=store)
            responses = [ex.execute(fuzz_request(rng, pool, i)[0])
                         for i in range(300)]
            return responses, {k: store.get(k) for k in store.keys()}

        r1, s1 = run()
        r2, s2 = run()
        assert r1 == r2
        assert s1 == s2

    def test_small_fuzz_run(self):
        """500 mixed requests; the full 10k version lives in acceptance."""
        rng = random.Random(77)
        store = MemoryStore()
        pool = []
        for i in range(12):
            size = rng.choice((16, 64, 256, 1024, 4096))
            key = f"k{i}"
            store.put(key, rng.randbytes(size))
            pool.append((key, size))
        ex, _ = make_executor(capacity=1 << 20, store=store)
        kinds = set()
        for i in range(500):
            req, fault = fuzz_request(rng, pool, i)
            before = dict(store._objects)
            resp = ex.execute(req)
            ex.cache.check_accounting()
            assert ex.cache.ephemeral_bytes == 0
            assert all(b.pinned == 0 for b in ex.cache.entries.values())
            assert not any(b.dirty for b in ex.cache.entries.values())
            if resp.status.ok:
                written = {
                    b.key for b in req.referenced_buffers()
                    if not b.is_ephemeral and b.direction in ("output", "inout")
                }
                assert set(store._objects) <= set(before) | written
            else:
                kinds.add(resp.status.error_kind)
                assert store._objects == before
        # the generator's targeted faults should all have fired at least once
        assert {"NotFound", "OutOfDeviceMemory", "UnknownKernel",
                "ArityMismatch", "BackendFault", "InvalidRequest"} <= kinds
