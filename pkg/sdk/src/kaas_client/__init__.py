"""Client SDK for the KaaS kernel execution service: upload inputs to the
object store, build and submit kernel requests, retrieve outputs."""

from .builder import RequestBuilder, f32, f64, i32, i64, matmul_chain
from .client import ClientSession, InvokeResult, IoStats
from .errors import (
    KaasClientError,
    NotFound,
    ServerRejection,
    TransportError,
    ValidationError,
)
from .validation import valid_store_key, validate_request_doc

__version__ = "0.1.0"

__all__ = [
    "ClientSession",
    "InvokeResult",
    "IoStats",
    "KaasClientError",
    "NotFound",
    "RequestBuilder",
    "ServerRejection",
    "TransportError",
    "ValidationError",
    "f32",
    "f64",
    "i32",
    "i64",
    "matmul_chain",
    "valid_store_key",
    "validate_request_doc",
]
