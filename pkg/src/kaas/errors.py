"""Error taxonomy shared by the store, executor, backend and wire protocol."""

from __future__ import annotations


class KaasError(Exception):
    """Base class for all service-level failures.

    ``kind`` is the stable identifier that travels in error responses;
    ``message`` is free-form human context.
    """

    kind = "Internal"

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message


class InvalidRequestError(KaasError):
    kind = "InvalidRequest"


class InvalidKeyError(KaasError):
    kind = "InvalidKey"


class NotFoundError(KaasError):
    kind = "NotFound"


class SizeMismatchError(KaasError):
    kind = "SizeMismatch"


class OutOfDeviceMemoryError(KaasError):
    kind = "OutOfDeviceMemory"


class BufferBusyError(KaasError):
    kind = "BufferBusy"


class UnknownKernelError(KaasError):
    kind = "UnknownKernel"


class ArityMismatchError(KaasError):
    kind = "ArityMismatch"


class BackendFaultError(KaasError):
    kind = "BackendFault"


class StoreIOError(KaasError):
    kind = "StoreIO"


class DuplicateKernelError(KaasError):
    # Registry misconfiguration; raised at startup, never in a response.
    kind = "DuplicateKernel"


class NoExecutorsError(KaasError):
    kind = "NoExecutors"


class UnknownExecutorError(KaasError):
    kind = "UnknownExecutor"


#: Error kinds that may appear in a KaasResponse status.
WIRE_ERROR_KINDS = frozenset(
    {
        "InvalidRequest",
        "InvalidKey",
        "NotFound",
        "SizeMismatch",
        "OutOfDeviceMemory",
        "BufferBusy",
        "UnknownKernel",
        "ArityMismatch",
        "BackendFault",
        "StoreIO",
        "Internal",
    }
)
