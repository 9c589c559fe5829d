"""HTTP front end.

Endpoints:
  POST /v1/invoke          body = encoded request, response = encoded response
  GET  /v1/health          200 "ok"
  GET  /v1/stats           per-executor cache/queue counters as JSON
  PUT  /v1/objects/<key>   raw bytes body -> store
  GET  /v1/objects/<key>   raw bytes from store

Execution failures travel in-band as an error-status response with HTTP
200; transport and decode problems map to 4xx with a JSON error body.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import InvalidKeyError, KaasError, NotFoundError
from .protocol import ParseError, SchemaError, decode_request, encode_response
from .service import KaasService

log = logging.getLogger("kaas.server")

MAX_BODY_BYTES = 256 * 2**20


class KaasHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, service: KaasService):
        super().__init__(addr, _Handler)
        self.service = service


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: KaasHTTPServer

    # -- plumbing -------------------------------------------------------

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def _send(self, code: int, body: bytes, content_type: str) -> None:
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        if self.close_connection:
            self.send_header("Connection", "close")
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, doc: dict) -> None:
        self._send(code, json.dumps(doc).encode("utf-8"), "application/json")

    def _send_error_json(self, code: int, kind: str, message: str) -> None:
        # The request body may be unread on error paths; keeping the
        # connection alive would desync keep-alive framing.
        self.close_connection = True
        self._send_json(code, {"error": {"kind": kind, "message": message}})

    def _read_body(self) -> bytes | None:
        length = self.headers.get("Content-Length")
        if length is None:
            self._send_error_json(411, "LengthRequired", "Content-Length required")
            return None
        n = int(length)
        if n > MAX_BODY_BYTES:
            self._send_error_json(413, "PayloadTooLarge", f"body exceeds {MAX_BODY_BYTES}")
            return None
        return self.rfile.read(n)

    def _object_key(self, path: str) -> str | None:
        key = urllib.parse.unquote(path[len("/v1/objects/"):])
        if not key:
            self._send_error_json(400, "InvalidKey", "empty object key")
            return None
        return key

    # -- routes ---------------------------------------------------------

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path == "/v1/health":
            self._send(200, b"ok", "text/plain")
        elif path == "/v1/stats":
            self._send_json(200, self.server.service.stats())
        elif path.startswith("/v1/objects/"):
            key = self._object_key(path)
            if key is None:
                return
            try:
                payload = self.server.service.store.get(key)
            except NotFoundError as exc:
                self._send_error_json(404, exc.kind, exc.message)
                return
            except InvalidKeyError as exc:
                self._send_error_json(400, exc.kind, exc.message)
                return
            self._send(200, payload, "application/octet-stream")
        else:
            self._send_error_json(404, "NotFound", f"no route {path}")

    def do_PUT(self):
        path = self.path.split("?", 1)[0]
        if not path.startswith("/v1/objects/"):
            self._send_error_json(404, "NotFound", f"no route {path}")
            return
        key = self._object_key(path)
        if key is None:
            return
        body = self._read_body()
        if body is None:
            return
        try:
            self.server.service.store.put(key, body)
        except KaasError as exc:
            self._send_error_json(400, exc.kind, exc.message)
            return
        self._send_json(200, {"key": key, "size": len(body)})

    def do_POST(self):
        path = self.path.split("?", 1)[0]
        if path != "/v1/invoke":
            self._send_error_json(404, "NotFound", f"no route {path}")
            return
        body = self._read_body()
        if body is None:
            return
        try:
            req = decode_request(body, strict=self.server.service.strict_schema)
        except ParseError as exc:
            self._send_error_json(400, "ParseError", str(exc))
            return
        except SchemaError as exc:
            self._send_error_json(400, "SchemaError", str(exc))
            return
        resp = self.server.service.submit(req)
        self._send(200, encode_response(resp), "application/json")


def start_server(service: KaasService, host: str = "127.0.0.1", port: int = 0):
    """Start serving on a background thread; returns (server, bound_port)."""
    server = KaasHTTPServer((host, port), service)
    thread = threading.Thread(target=server.serve_forever, daemon=True,
                              name="kaas-http")
    thread.start()
    return server, server.server_address[1]


def serve_forever(service: KaasService, host: str, port: int) -> None:
    """Foreground server loop for the CLI; returns on SIGINT/SIGTERM."""
    import signal

    server = KaasHTTPServer((host, port), service)
    bound = server.server_address[1]
    print(f"kaasd listening on {host}:{bound}", flush=True)

    def _stop(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    try:
        server.serve_forever()
    finally:
        server.server_close()
        service.close()
