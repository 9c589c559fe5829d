"""Blocking client session over the service's HTTP endpoints.

A session is not safe for concurrent use; create one per submitter.
"""

from __future__ import annotations

import http.client
import json
import socket
import urllib.parse
from dataclasses import dataclass

from .builder import RequestBuilder
from .errors import NotFound, ServerRejection, TransportError, ValidationError
from .validation import valid_store_key, validate_request_doc


@dataclass(frozen=True)
class IoStats:
    store_gets: int
    store_puts: int
    bytes_fetched: int
    bytes_flushed: int
    cache_hits: int
    cache_misses: int


@dataclass(frozen=True)
class InvocationStats:
    kernel_id: str
    simulated_compute_time: int  # virtual ns
    launch_overhead: int  # virtual ns


class InvokeResult:
    """Typed view over a decoded response. Execution failures are carried
    in-band: check ``ok`` / ``error_kind`` (or call ``raise_for_status``)."""

    def __init__(self, doc: dict):
        self._doc = doc
        self.request_id: str = doc["request_id"]
        self.ok: bool = doc["status"] == "ok"
        err = doc.get("error") or {}
        self.error_kind: str | None = err.get("kind") if not self.ok else None
        self.error_message: str | None = err.get("message") if not self.ok else None
        st = doc["io_stats"]
        self.io_stats = IoStats(
            store_gets=st["store_gets"], store_puts=st["store_puts"],
            bytes_fetched=st["bytes_fetched"], bytes_flushed=st["bytes_flushed"],
            cache_hits=st["cache_hits"], cache_misses=st["cache_misses"],
        )
        self.per_invocation = tuple(
            InvocationStats(p["kernel_id"], p["simulated_compute_time"],
                            p["launch_overhead"])
            for p in doc["per_invocation"]
        )
        self.simulated_total_time: int = doc["simulated_total_time"]

    def raise_for_status(self) -> "InvokeResult":
        if not self.ok:
            raise ServerRejection(200, self.error_kind or "Internal",
                                  self.error_message or "")
        return self

    def __repr__(self):
        state = "ok" if self.ok else f"error:{self.error_kind}"
        return f"<InvokeResult {self.request_id} {state}>"


class ClientSession:
    def __init__(self, address: str, timeout: float = 30.0, strict: bool = False):
        if not address:
            raise ValueError("server address must be non-empty")
        host, _, port = address.partition(":")
        self.host = host or "127.0.0.1"
        self.port = int(port) if port else 80
        self.timeout = timeout
        self.strict = strict

    # -- transport ------------------------------------------------------

    def _request(self, method: str, path: str, body: bytes | None = None):
        conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
        try:
            conn.request(method, path, body=body)
            resp = conn.getresponse()
            return resp.status, resp.read()
        except (OSError, socket.timeout, http.client.HTTPException) as exc:
            raise TransportError(f"{method} {path}: {exc}") from exc
        finally:
            conn.close()

    @staticmethod
    def _rejection(status: int, body: bytes) -> ServerRejection:
        try:
            err = json.loads(body)["error"]
            return ServerRejection(status, err["kind"], err.get("message", ""))
        except (ValueError, KeyError, TypeError):
            return ServerRejection(status, "Http", body.decode("utf-8", "replace"))

    # -- objects --------------------------------------------------------

    def put_object(self, key: str, payload: bytes) -> None:
        if not valid_store_key(key):
            raise ValidationError([f"invalid store key {key!r}"])
        status, body = self._request(
            "PUT", "/v1/objects/" + urllib.parse.quote(key, safe="/"), payload)
        if status != 200:
            raise self._rejection(status, body)

    def get_object(self, key: str) -> bytes:
        if not valid_store_key(key):
            raise ValidationError([f"invalid store key {key!r}"])
        status, body = self._request(
            "GET", "/v1/objects/" + urllib.parse.quote(key, safe="/"))
        if status == 404:
            raise NotFound(key)
        if status != 200:
            raise self._rejection(status, body)
        return body

    # -- control --------------------------------------------------------

    def health(self) -> bool:
        status, body = self._request("GET", "/v1/health")
        return status == 200 and body == b"ok"

    def stats(self) -> dict:
        status, body = self._request("GET", "/v1/stats")
        if status != 200:
            raise self._rejection(status, body)
        return json.loads(body)

    def invoke(self, request: RequestBuilder | dict) -> InvokeResult:
        """Submit one request; local validation runs first, so an invalid
        build never reaches the wire."""
        doc = request.build() if isinstance(request, RequestBuilder) else request
        problems = validate_request_doc(doc)
        if problems:
            raise ValidationError(problems)
        body = json.dumps(doc, separators=(",", ":")).encode("utf-8")
        status, payload = self._request("POST", "/v1/invoke", body)
        if status != 200:
            raise self._rejection(status, payload)
        resp_doc = json.loads(payload)
        if self.strict:
            known = {"request_id", "status", "error", "per_invocation", "io_stats",
                     "simulated_total_time"}
            extra = set(resp_doc) - known
            if extra:
                raise ServerRejection(200, "SchemaError",
                                      f"unknown response fields {sorted(extra)}")
        return InvokeResult(resp_doc)

    def invoke_raw(self, doc: dict) -> tuple[int, bytes]:
        """Ship a document without local validation; for conformance tests."""
        body = json.dumps(doc, separators=(",", ":")).encode("utf-8")
        return self._request("POST", "/v1/invoke", body)
