"""Command-line entry points: ``kaasd`` (server) and ``kaas-bench`` (harness)."""

from __future__ import annotations

import argparse
import sys

from .backend import TimingModel
from .bench import WorkloadSpec, run_bench, render_table, report_json
from .router import parse_policy
from .server import serve_forever
from .service import KaasService
from .store import open_store

_SUFFIXES = {"KiB": 2**10, "MiB": 2**20, "GiB": 2**30}


def parse_capacity(text: str) -> int:
    """Byte count, optionally with a KiB/MiB/GiB suffix."""
    s = text.strip()
    factor = 1
    for suffix, mult in _SUFFIXES.items():
        if s.endswith(suffix):
            s, factor = s[: -len(suffix)].strip(), mult
            break
    try:
        value = int(s)
    except ValueError:
        raise ValueError(f"bad capacity {text!r}") from None
    n = value * factor
    if n <= 0:
        raise ValueError(f"capacity must be positive, got {text!r}")
    return n


def _load_timing(args) -> TimingModel:
    timing = TimingModel.from_file(args.timing) if args.timing else TimingModel()
    overrides = {
        name: getattr(args, name)
        for name in ("h2d_bandwidth", "d2h_bandwidth", "fetch_latency",
                     "launch_overhead", "flop_rate")
        if getattr(args, name, None) is not None
    }
    if overrides:
        timing = TimingModel(**{**timing.to_dict(), **overrides})
    return timing


def _add_timing_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--timing", metavar="PATH",
                   help="JSON file with the five timing model fields")
    p.add_argument("--h2d-bandwidth", type=float, dest="h2d_bandwidth")
    p.add_argument("--d2h-bandwidth", type=float, dest="d2h_bandwidth")
    p.add_argument("--fetch-latency", type=float, dest="fetch_latency")
    p.add_argument("--launch-overhead", type=float, dest="launch_overhead")
    p.add_argument("--flop-rate", type=float, dest="flop_rate")


def kaasd_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kaasd", description="KaaS server")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("serve", help="run the HTTP server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--store", default="mem", help="mem | dir:<path>")
    p.add_argument("--executors", type=int, default=1)
    p.add_argument("--capacity", default="256MiB",
                   help="per-executor device memory (KiB/MiB suffixes ok)")
    p.add_argument("--policy", default="affinity:8",
                   help="random:<seed> | rr | affinity:<q_max>")
    p.add_argument("--digest-cap", type=int, default=1024)
    p.add_argument("--strict-schema", action="store_true",
                   help="reject unknown wire fields instead of ignoring them")
    p.add_argument("--debug-checks", action="store_true",
                   help="verify cache ledger and buffer canaries on every step")
    _add_timing_flags(p)
    args = parser.parse_args(argv)

    try:
        capacity = parse_capacity(args.capacity)
        if args.executors < 1:
            raise ValueError("--executors must be >= 1")
        policy = parse_policy(args.policy)
        timing = _load_timing(args)
        store = open_store(args.store)
    except (ValueError, OSError) as exc:
        print(f"kaasd: invalid config: {exc}", file=sys.stderr)
        return 2

    service = KaasService(
        store,
        n_executors=args.executors,
        capacity=capacity,
        policy=policy,
        timing=timing,
        digest_cap=args.digest_cap,
        strict_schema=args.strict_schema,
        debug=args.debug_checks,
    )
    try:
        serve_forever(service, args.host, args.port)
    except OSError as exc:
        print(f"kaasd: bind failed: {exc}", file=sys.stderr)
        return 1
    return 0


def bench_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kaas-bench", description="KaaS benchmark")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a workload against each policy")
    p.add_argument("--workload", required=True,
                   choices=["matmul_chain", "zipf_const", "mixed"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--requests", type=int, default=1000)
    p.add_argument("--policies", default="random:1,affinity:8",
                   help="comma-separated policy specs")
    p.add_argument("--out", metavar="PATH", help="write the JSON report here")
    p.add_argument("--over-http", metavar="ADDR", dest="over_http",
                   help="drive through a real socket, e.g. 127.0.0.1:0")
    p.add_argument("--clients", type=int, default=1)
    p.add_argument("--warm-repeat", action="store_true",
                   help="run the stream twice and report the warm pass too")
    p.add_argument("--matrix-dim", type=int, default=4)
    p.add_argument("--zipf-s", type=float, default=1.0)
    p.add_argument("--key-universe", type=int, default=100)
    p.add_argument("--executors", type=int, default=4)
    p.add_argument("--capacity", default=None,
                   help="per-executor bytes; default fits the workload")
    _add_timing_flags(p)
    args = parser.parse_args(argv)

    spec = WorkloadSpec(
        kind=args.workload,
        request_count=args.requests,
        matrix_dim=args.matrix_dim,
        zipf_s=args.zipf_s,
        key_universe=args.key_universe,
        seed=args.seed,
    )
    problems = spec.validate()
    if args.clients < 1:
        problems.append("--clients must be >= 1")
    if args.executors < 1:
        problems.append("--executors must be >= 1")
    try:
        capacity = parse_capacity(args.capacity) if args.capacity else None
        timing = _load_timing(args)
    except (ValueError, OSError) as exc:
        problems.append(str(exc))
        capacity, timing = None, None
    if problems:
        print(f"kaas-bench: invalid workload: {'; '.join(problems)}", file=sys.stderr)
        return 2

    report = run_bench(
        spec,
        policies=[s.strip() for s in args.policies.split(",") if s.strip()],
        n_executors=args.executors,
        capacity=capacity,
        timing=timing,
        clients=args.clients,
        warm_repeat=args.warm_repeat,
        over_http=args.over_http,
    )
    print(render_table(report))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report_json(report))
        print(f"report written to {args.out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(kaasd_main())
