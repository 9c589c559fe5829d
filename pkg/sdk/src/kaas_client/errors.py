"""Client-side error taxonomy."""

from __future__ import annotations


class KaasClientError(Exception):
    """Base class for everything this SDK raises."""


class ValidationError(KaasClientError):
    """The request violates protocol invariants; raised locally, before
    any network traffic."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class TransportError(KaasClientError):
    """The server could not be reached or the connection failed."""


class ServerRejection(KaasClientError):
    """The server answered with a non-200 status (parse/schema/key errors)."""

    def __init__(self, status: int, kind: str, message: str):
        super().__init__(f"{kind}: {message} (HTTP {status})")
        self.status = status
        self.kind = kind
        self.message = message


class NotFound(KaasClientError):
    """No object under the requested key."""
