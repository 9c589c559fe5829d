"""Kernel-as-a-Service: submit self-contained GPU-kernel requests against a
shared object store; executors with per-device buffer caches run them on a
deterministic simulated device."""

from .backend import (
    BuiltinKernel,
    KernelRegistry,
    SimulatedBackend,
    TimingModel,
    VirtualClock,
    default_registry,
)
from .errors import KaasError
from .executor import CacheState, DeviceBuffer, Executor, ExecutorConfig
from .protocol import (
    BufferArg,
    IoStats,
    KaasRequest,
    KaasResponse,
    KernelInvocation,
    LaunchDims,
    ParseError,
    ScalarLiteral,
    SchemaError,
    Status,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    f32,
    f64,
    i32,
    i64,
    validate_request,
)
from .router import AffinityPolicy, RandomPolicy, RoundRobinPolicy, Router, parse_policy
from .service import KaasService
from .store import DirStore, MemoryStore, ObjectStore, open_store

__version__ = "0.1.0"

__all__ = [
    "AffinityPolicy",
    "BufferArg",
    "BuiltinKernel",
    "CacheState",
    "DeviceBuffer",
    "DirStore",
    "Executor",
    "ExecutorConfig",
    "IoStats",
    "KaasError",
    "KaasRequest",
    "KaasResponse",
    "KaasService",
    "KernelInvocation",
    "KernelRegistry",
    "LaunchDims",
    "MemoryStore",
    "ObjectStore",
    "ParseError",
    "RandomPolicy",
    "RoundRobinPolicy",
    "Router",
    "ScalarLiteral",
    "SchemaError",
    "SimulatedBackend",
    "Status",
    "TimingModel",
    "VirtualClock",
    "decode_request",
    "decode_response",
    "default_registry",
    "encode_request",
    "encode_response",
    "f32",
    "f64",
    "i32",
    "i64",
    "open_store",
    "parse_policy",
    "validate_request",
]
