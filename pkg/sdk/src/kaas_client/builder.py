"""Fluent request builder.

Builds the plain wire document and validates it locally on ``build()``, so
invariant violations surface before a round trip is spent. Durations in
the decoded response are integer virtual nanoseconds.
"""

from __future__ import annotations

import math

from .errors import ValidationError
from .validation import validate_request_doc


def _literal(tag: str, value) -> dict:
    if tag in ("f32", "f64") and isinstance(value, float):
        if math.isnan(value):
            value = "NaN"
        elif math.isinf(value):
            value = "Infinity" if value > 0 else "-Infinity"
    return {"type": tag, "value": value}


def i32(v: int) -> dict:
    return _literal("i32", int(v))


def i64(v: int) -> dict:
    return _literal("i64", int(v))


def f32(v: float) -> dict:
    return _literal("f32", float(v))


def f64(v: float) -> dict:
    return _literal("f64", float(v))


class RequestBuilder:
    def __init__(self, request_id: str):
        self._doc: dict = {"request_id": request_id, "buffers": [], "invocations": []}

    # -- buffers --------------------------------------------------------

    def buffer(self, name: str, size: int, direction: str, key=None,
               is_const: bool = False, is_ephemeral: bool = False) -> "RequestBuilder":
        """Raw escape hatch; the shaped helpers below are preferred."""
        self._doc["buffers"].append({
            "name": name, "key": key, "size": size,
            "is_const": is_const, "is_ephemeral": is_ephemeral,
            "direction": direction,
        })
        return self

    def const_input(self, name: str, key: str, size: int) -> "RequestBuilder":
        return self.buffer(name, size, "input", key=key, is_const=True)

    def input(self, name: str, key: str, size: int) -> "RequestBuilder":
        return self.buffer(name, size, "input", key=key)

    def inout(self, name: str, key: str, size: int) -> "RequestBuilder":
        return self.buffer(name, size, "inout", key=key)

    def output(self, name: str, key: str, size: int) -> "RequestBuilder":
        return self.buffer(name, size, "output", key=key)

    def ephemeral(self, name: str, size: int) -> "RequestBuilder":
        return self.buffer(name, size, "inout", is_ephemeral=True)

    # -- invocations ----------------------------------------------------

    def launch(self, kernel_id: str, args: list[str], literals: list[dict] | None = None,
               grid: tuple = (1, 1, 1), block: tuple = (1, 1, 1)) -> "RequestBuilder":
        self._doc["invocations"].append({
            "kernel_id": kernel_id,
            "dims": {
                "grid_x": grid[0], "grid_y": grid[1], "grid_z": grid[2],
                "block_x": block[0], "block_y": block[1], "block_z": block[2],
            },
            "literals": list(literals or []),
            "args": list(args),
        })
        return self

    # -- finish ---------------------------------------------------------

    def build(self) -> dict:
        """Validate and return the wire document."""
        problems = validate_request_doc(self._doc)
        if problems:
            raise ValidationError(problems)
        return self._doc


def matmul_chain(a_key: str, b_key: str, out_key: str, n: int,
                 request_id: str = "matmul-chain") -> RequestBuilder:
    """(A.B).(A.B) over n x n f32 matrices: const inputs, an ephemeral
    intermediate, one output written back to ``out_key``."""
    size = n * n * 4
    cells = n * n
    block = min(256, max(1, cells))
    grid = max(1, -(-cells // block))
    lits = [i32(n), i32(n), i32(n)]
    return (
        RequestBuilder(request_id)
        .const_input("A", a_key, size)
        .const_input("B", b_key, size)
        .ephemeral("C", size)
        .output("D", out_key, size)
        .launch("matmul", ["A", "B", "C"], lits, grid=(grid, 1, 1), block=(block, 1, 1))
        .launch("matmul", ["C", "C", "D"], lits, grid=(grid, 1, 1), block=(block, 1, 1))
    )
