"""Benchmark harness: canned workloads run against an in-process service
per policy, with identical seeds, reporting hit rates, store traffic,
simulated latency and device utilization.

Everything is derived from the workload seed, so a report is byte-stable
across runs (for a single submitter; with --clients > 1 arrival order is
up to the scheduler and the report records that).
"""

from __future__ import annotations

import bisect
import json
import math
import random
import statistics
from dataclasses import asdict, dataclass

import numpy as np

from .backend import TimingModel
from .protocol import (
    BufferArg,
    KaasRequest,
    KernelInvocation,
    LaunchDims,
    encode_request,
    decode_response,
    i32,
)
from .service import KaasService
from .store import MemoryStore, ObjectStore

REPORT_VERSION = 1

WORKLOAD_KINDS = ("matmul_chain", "zipf_const", "mixed")

ZIPF_BLOB_BYTES = 64 * 1024  # fixed const blob size for zipf_const
MIXED_DIM = 128  # 128x128 f32 = exactly one 64 KiB blob


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    request_count: int
    matrix_dim: int = 4
    zipf_s: float = 1.0
    key_universe: int = 100
    seed: int = 0

    def validate(self) -> list[str]:
        out = []
        if self.kind not in WORKLOAD_KINDS:
            out.append(f"unknown workload kind {self.kind!r}")
        if self.request_count < 1:
            out.append("request_count must be >= 1")
        if self.matrix_dim < 1:
            out.append("matrix_dim must be >= 1")
        if not self.zipf_s > 0:
            out.append("zipf_s must be > 0")
        if self.key_universe < 1:
            out.append("key_universe must be >= 1")
        return out


class InvalidWorkload(ValueError):
    pass


def _checked(spec: WorkloadSpec) -> WorkloadSpec:
    problems = spec.validate()
    if problems:
        raise InvalidWorkload("; ".join(problems))
    return spec


class ZipfSampler:
    """Draws from {0..n-1} with p(k) proportional to (k+1)^-s."""

    def __init__(self, s: float, n: int, rng: random.Random):
        self._rng = rng
        weights = [(k + 1) ** -s for k in range(n)]
        total = sum(weights)
        acc, cum = 0.0, []
        for w in weights:
            acc += w / total
            cum.append(acc)
        self._cum = cum
        self._n = n

    def draw(self) -> int:
        # float cumsum can fall a hair short of 1.0; clamp the tail
        return min(bisect.bisect_left(self._cum, self._rng.random()), self._n - 1)


def _blob_key(i: int) -> str:
    return f"blob/{i:04d}"


def _random_f32_bytes(rng: np.random.Generator, n_bytes: int) -> bytes:
    return rng.random(n_bytes // 4, dtype=np.float32).tobytes()


def gen_data(spec: WorkloadSpec, store: ObjectStore) -> None:
    """Populate the store with every key the workload references,
    deterministically from the seed."""
    _checked(spec)
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "matmul_chain":
        n_bytes = spec.matrix_dim * spec.matrix_dim * 4
        store.put("A", _random_f32_bytes(rng, n_bytes))
        store.put("B", _random_f32_bytes(rng, n_bytes))
    else:
        for i in range(spec.key_universe):
            store.put(_blob_key(i), _random_f32_bytes(rng, ZIPF_BLOB_BYTES))


def _grid_for(cells: int) -> LaunchDims:
    block = min(256, max(1, cells))
    grid = max(1, -(-cells // block))
    return LaunchDims(grid_x=grid, block_x=block)


def matmul_chain_request(request_id: str, dim: int,
                         a_key: str = "A", b_key: str = "B",
                         out_key: str = "D") -> KaasRequest:
    """(A.B).(A.B) with the intermediate held on-device as an ephemeral."""
    size = dim * dim * 4
    dims = _grid_for(dim * dim)
    lits = (i32(dim), i32(dim), i32(dim))
    return KaasRequest(
        request_id=request_id,
        buffers=(
            BufferArg("A", size, "input", key=a_key, is_const=True),
            BufferArg("B", size, "input", key=b_key, is_const=True),
            BufferArg("C", size, "inout", is_ephemeral=True),
            BufferArg("D", size, "output", key=out_key),
        ),
        invocations=(
            KernelInvocation("matmul", dims, lits, ("A", "B", "C")),
            KernelInvocation("matmul", dims, lits, ("C", "C", "D")),
        ),
    )


def zipf_read_request(request_id: str, key: str) -> KaasRequest:
    """Reduce one 64 KiB const blob into an ephemeral scalar: a pure
    cache-read probe with no store writes."""
    n = ZIPF_BLOB_BYTES // 4
    return KaasRequest(
        request_id=request_id,
        buffers=(
            BufferArg("x", ZIPF_BLOB_BYTES, "input", key=key, is_const=True),
            BufferArg("acc", 4, "output", is_ephemeral=True),
        ),
        invocations=(
            KernelInvocation("reduce_sum", _grid_for(n), (i32(n),), ("x", "acc")),
        ),
    )


def build_requests(spec: WorkloadSpec) -> list[KaasRequest]:
    _checked(spec)
    rng = random.Random(spec.seed + 1)  # distinct stream from gen_data
    reqs: list[KaasRequest] = []
    if spec.kind == "matmul_chain":
        for i in range(spec.request_count):
            reqs.append(matmul_chain_request(f"mm-{i:06d}", spec.matrix_dim))
        return reqs
    zipf = ZipfSampler(spec.zipf_s, spec.key_universe, rng)
    for i in range(spec.request_count):
        if spec.kind == "zipf_const" or rng.random() < 0.5:
            reqs.append(zipf_read_request(f"rd-{i:06d}", _blob_key(zipf.draw())))
        else:
            a, b = _blob_key(zipf.draw()), _blob_key(zipf.draw())
            reqs.append(
                matmul_chain_request(f"mm-{i:06d}", MIXED_DIM, a_key=a, b_key=b,
                                     out_key=f"out/{i:06d}")
            )
    return reqs


def default_capacity(spec: WorkloadSpec) -> int:
    if spec.kind == "matmul_chain":
        # Whole working set plus slack; warmth is the point, not pressure.
        return max(64 * 1024, 8 * spec.matrix_dim * spec.matrix_dim * 4)
    return 30 * ZIPF_BLOB_BYTES


# ---------------------------------------------------------------------------
# drivers


class _InProcessClient:
    def __init__(self, service: KaasService):
        self.service = service

    def invoke(self, req: KaasRequest):
        return self.service.submit(req)

    def close(self):
        pass


class _HttpClient:
    """Drives the same service through real sockets (--over-http)."""

    def __init__(self, service: KaasService, host: str, port: int):
        from .server import start_server

        self.server, self.port = start_server(service, host, port)
        self.host = host

    def invoke(self, req: KaasRequest):
        import http.client

        conn = http.client.HTTPConnection(self.host, self.port, timeout=30)
        try:
            conn.request("POST", "/v1/invoke", body=encode_request(req),
                         headers={"Content-Type": "application/json"})
            http_resp = conn.getresponse()
            body = http_resp.read()
            if http_resp.status != 200:
                raise RuntimeError(f"invoke failed: {http_resp.status} {body!r}")
            return decode_response(body)
        finally:
            conn.close()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


def _percentile_95(values: list[int]) -> int:
    ordered = sorted(values)
    rank = math.ceil(0.95 * len(ordered))
    return ordered[max(0, rank - 1)]


def _run_stream(client, requests: list[KaasRequest], clients: int) -> list:
    if clients <= 1:
        return [client.invoke(r) for r in requests]
    import concurrent.futures as cf

    with cf.ThreadPoolExecutor(max_workers=clients) as pool:
        return list(pool.map(client.invoke, requests))


def _aggregate(responses, service: KaasService, compute_ns_total: int) -> dict:
    hits = sum(r.io_stats.cache_hits for r in responses)
    misses = sum(r.io_stats.cache_misses for r in responses)
    latencies = [r.simulated_total_time for r in responses]
    makespan = max((e.clock.now_ns for e in service.executors), default=0)
    busy = compute_ns_total / (len(service.executors) * makespan) if makespan else 0.0
    return {
        "requests": len(responses),
        "errors": sum(0 if r.status.ok else 1 for r in responses),
        "hit_rate": hits / (hits + misses) if hits + misses else 0.0,
        "cache_hits": hits,
        "cache_misses": misses,
        "store_gets": sum(r.io_stats.store_gets for r in responses),
        "store_puts": sum(r.io_stats.store_puts for r in responses),
        "mean_latency_ns": statistics.fmean(latencies) if latencies else 0.0,
        "p95_latency_ns": _percentile_95(latencies) if latencies else 0,
        "per_executor_requests": [e.requests_served for e in service.executors],
        "gpu_busy_fraction": busy,
        "simulated_makespan_ns": makespan,
    }


def run_bench(
    spec: WorkloadSpec,
    policies: list[str],
    n_executors: int = 4,
    capacity: int | None = None,
    timing: TimingModel | None = None,
    clients: int = 1,
    warm_repeat: bool = False,
    over_http: str | None = None,
    digest_cap: int = 1024,
) -> dict:
    """Run the workload once per policy against a fresh service and return
    the versioned report document."""
    _checked(spec)
    cap = capacity if capacity is not None else default_capacity(spec)
    report: dict = {
        "report_version": REPORT_VERSION,
        "workload": asdict(spec),
        "executors": n_executors,
        "capacity": cap,
        "clients": clients,
        "warm_repeat": warm_repeat,
        "over_http": over_http is not None,
        "policies": {},
    }
    for policy in policies:
        store = MemoryStore()
        gen_data(spec, store)
        requests = build_requests(spec)
        service = KaasService(store, n_executors=n_executors, capacity=cap,
                              policy=policy, timing=timing, digest_cap=digest_cap)
        if over_http:
            host, _, port = over_http.partition(":")
            client = _HttpClient(service, host or "127.0.0.1", int(port or 0))
        else:
            client = _InProcessClient(service)
        try:
            responses = _run_stream(client, requests, clients)
            compute = sum(s.simulated_compute_time
                          for r in responses for s in r.per_invocation)
            entry = _aggregate(responses, service, compute)
            if warm_repeat:
                baseline = [e.requests_served for e in service.executors]
                repeat = _run_stream(client, requests, clients)
                compute2 = sum(s.simulated_compute_time
                               for r in repeat for s in r.per_invocation)
                entry["repeat"] = _aggregate(repeat, service, compute + compute2)
                entry["repeat"]["per_executor_requests"] = [
                    e.requests_served - b
                    for e, b in zip(service.executors, baseline)
                ]
                entry["repeat"]["requests"] = len(repeat)
            report["policies"][policy] = entry
        finally:
            client.close()
            service.close()
    return report


def render_table(report: dict) -> str:
    cols = ["policy", "hit_rate", "gets", "puts", "mean_lat_ms", "p95_lat_ms",
            "busy", "errors"]
    rows = [cols]
    for policy, e in report["policies"].items():
        rows.append([
            policy,
            f"{e['hit_rate']:.4f}",
            str(e["store_gets"]),
            str(e["store_puts"]),
            f"{e['mean_latency_ns'] / 1e6:.3f}",
            f"{e['p95_latency_ns'] / 1e6:.3f}",
            f"{e['gpu_busy_fraction']:.4f}",
            str(e["errors"]),
        ])
    widths = [max(len(r[i]) for r in rows) for i in range(len(cols))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
