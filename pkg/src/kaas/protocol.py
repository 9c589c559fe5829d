"""Request/response data model and its canonical JSON wire encoding.

All types are immutable values; they can be shared freely across threads.
Binary buffer contents never travel in this encoding -- they move through
the object store. Simulated durations are integer virtual nanoseconds so
that timing assertions stay exact under addition and subtraction.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property

from .errors import WIRE_ERROR_KINDS

MAX_TOTAL_THREADS = 2**32
I32_MIN, I32_MAX = -(2**31), 2**31 - 1
I64_MIN, I64_MAX = -(2**63), 2**63 - 1

STORE_KEY_MAX_LEN = 256
_STORE_KEY_RE = re.compile(r"^[A-Za-z0-9._/-]+$")

DIRECTIONS = ("input", "output", "inout")
LITERAL_TYPES = ("i32", "i64", "f32", "f64")


class ProtocolError(Exception):
    """Base for wire-level decode failures."""


class ParseError(ProtocolError):
    """Input is not well-formed UTF-8 JSON."""


class SchemaError(ProtocolError):
    """Input parses as JSON but does not match the message schema."""


def valid_store_key(key: str) -> bool:
    return (
        isinstance(key, str)
        and 0 < len(key) <= STORE_KEY_MAX_LEN
        and _STORE_KEY_RE.match(key) is not None
    )


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class LaunchDims:
    """Kernel launch geometry: block counts and threads per block."""

    grid_x: int = 1
    grid_y: int = 1
    grid_z: int = 1
    block_x: int = 1
    block_y: int = 1
    block_z: int = 1

    @property
    def total_threads(self) -> int:
        return (
            self.grid_x * self.grid_y * self.grid_z
            * self.block_x * self.block_y * self.block_z
        )


@dataclass(frozen=True, eq=False)
class ScalarLiteral:
    """Tagged scalar kernel argument. Float payloads may be NaN."""

    type: str
    value: int | float

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScalarLiteral):
            return NotImplemented
        if self.type != other.type:
            return False
        a, b = self.value, other.value
        if isinstance(a, float) and isinstance(b, float):
            if math.isnan(a) and math.isnan(b):
                return True
        return type(a) is type(b) and a == b

    def __hash__(self) -> int:
        return hash(self.type)


def i32(v: int) -> ScalarLiteral:
    return ScalarLiteral("i32", int(v))


def i64(v: int) -> ScalarLiteral:
    return ScalarLiteral("i64", int(v))


def f32(v: float) -> ScalarLiteral:
    return ScalarLiteral("f32", float(v))


def f64(v: float) -> ScalarLiteral:
    return ScalarLiteral("f64", float(v))


@dataclass(frozen=True)
class BufferArg:
    """Named, sized buffer descriptor.

    ``key`` binds the buffer to an object-store entry and must be absent
    exactly when the buffer is ephemeral. ``is_const`` marks contents as
    immutable for the buffer's lifetime and therefore cacheable across
    requests.
    """

    name: str
    size: int
    direction: str = "input"
    key: str | None = None
    is_const: bool = False
    is_ephemeral: bool = False


@dataclass(frozen=True)
class KernelInvocation:
    kernel_id: str
    dims: LaunchDims
    literals: tuple[ScalarLiteral, ...] = ()
    args: tuple[str, ...] = ()


@dataclass(frozen=True)
class KaasRequest:
    """One self-contained submission: a buffer table plus an ordered
    invocation list sharing that buffer namespace."""

    request_id: str
    buffers: tuple[BufferArg, ...] = ()
    invocations: tuple[KernelInvocation, ...] = ()

    @cached_property
    def by_name(self) -> dict[str, BufferArg]:
        return {b.name: b for b in self.buffers}

    def referenced_buffers(self) -> tuple[BufferArg, ...]:
        """Buffers referenced by at least one invocation, in table order.

        This is the executor's resolution set: unreferenced table entries
        are never fetched, allocated or flushed.
        """
        used = {name for inv in self.invocations for name in inv.args}
        return tuple(b for b in self.buffers if b.name in used)


@dataclass(frozen=True)
class IoStats:
    store_gets: int = 0
    store_puts: int = 0
    bytes_fetched: int = 0
    bytes_flushed: int = 0
    cache_hits: int = 0
    cache_misses: int = 0


@dataclass(frozen=True)
class InvocationStats:
    kernel_id: str
    simulated_compute_time: int  # virtual ns
    launch_overhead: int  # virtual ns


@dataclass(frozen=True)
class Status:
    code: str  # "ok" | "error"
    error_kind: str | None = None
    error_message: str | None = None

    @property
    def ok(self) -> bool:
        return self.code == "ok"

    @staticmethod
    def make_ok() -> "Status":
        return Status("ok")

    @staticmethod
    def make_error(kind: str, message: str) -> "Status":
        return Status("error", kind, message)


@dataclass(frozen=True)
class KaasResponse:
    request_id: str
    status: Status
    per_invocation: tuple[InvocationStats, ...] = ()
    io_stats: IoStats = field(default_factory=IoStats)
    simulated_total_time: int = 0  # virtual ns


# ---------------------------------------------------------------------------
# validation


def validate_request(req: KaasRequest) -> list[str]:
    """Check every request invariant; returns a list of violations.

    An empty list means the request is acceptable. Violations name the
    offending buffer or invocation. Never raises on odd input.
    """
    out: list[str] = []
    if not isinstance(req.request_id, str) or not req.request_id:
        out.append("request_id must be a non-empty string")

    seen: set[str] = set()
    key_owners: dict[str, list[BufferArg]] = {}
    for b in req.buffers:
        who = f'buffer "{b.name}"'
        if not isinstance(b.name, str) or not b.name:
            out.append("buffer name must be a non-empty string")
            continue
        if b.name in seen:
            out.append(f'{who}: duplicate buffer name')
            continue
        seen.add(b.name)
        if not isinstance(b.size, int) or isinstance(b.size, bool) or b.size < 1:
            out.append(f"{who}: size must be a positive integer")
        if b.direction not in DIRECTIONS:
            out.append(f'{who}: unknown direction "{b.direction}"')
        if b.is_const and b.is_ephemeral:
            out.append(f"{who}: const and ephemeral are mutually exclusive")
        if b.is_const and b.direction != "input":
            out.append(f"{who}: const buffers must have direction input")
        if b.is_ephemeral:
            if b.key is not None:
                out.append(f"{who}: ephemeral buffers must not carry a store key")
        else:
            if b.key is None:
                out.append(f"{who}: non-ephemeral buffers require a store key")
            elif not valid_store_key(b.key):
                out.append(f'{who}: invalid store key "{b.key}"')
            else:
                key_owners.setdefault(b.key, []).append(b)

    # Same store key bound twice is only unambiguous when every binding
    # is const; otherwise write ordering would be undefined.
    for key, owners in key_owners.items():
        if len(owners) > 1 and not all(b.is_const for b in owners):
            names = ", ".join(b.name for b in owners)
            out.append(f'store key "{key}" bound by non-const buffers ({names})')

    for idx, inv in enumerate(req.invocations):
        who = f"invocation {idx}"
        if not isinstance(inv.kernel_id, str) or not inv.kernel_id:
            out.append(f"{who}: kernel_id must be a non-empty string")
        d = inv.dims
        comps = (d.grid_x, d.grid_y, d.grid_z, d.block_x, d.block_y, d.block_z)
        if any(not isinstance(c, int) or isinstance(c, bool) or c < 1 for c in comps):
            out.append(f"{who}: launch dims must all be >= 1")
        elif d.total_threads > MAX_TOTAL_THREADS:
            out.append(f"{who}: total threads {d.total_threads} exceeds 2^32")
        for li, lit in enumerate(inv.literals):
            if lit.type not in LITERAL_TYPES:
                out.append(f'{who}: literal {li} has unknown type "{lit.type}"')
            elif lit.type in ("i32", "i64"):
                if not isinstance(lit.value, int) or isinstance(lit.value, bool):
                    out.append(f"{who}: literal {li} ({lit.type}) must be an integer")
                elif lit.type == "i32" and not I32_MIN <= lit.value <= I32_MAX:
                    out.append(f"{who}: literal {li} out of i32 range")
                elif lit.type == "i64" and not I64_MIN <= lit.value <= I64_MAX:
                    out.append(f"{who}: literal {li} out of i64 range")
            elif not isinstance(lit.value, float):
                out.append(f"{who}: literal {li} ({lit.type}) must be a float")
        for name in inv.args:
            if name not in req.by_name:
                out.append(f'{who}: unknown buffer "{name}"')
    return out


# ---------------------------------------------------------------------------
# JSON codec
#
# Decode is two-stage: json.loads (ParseError) then a schema walk
# (SchemaError). In strict mode unknown object fields are rejected;
# unknown enum values are rejected in both modes.


def _enc_float(v: float):
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return v


def _enc_literal(lit: ScalarLiteral) -> dict:
    v = lit.value
    if lit.type in ("f32", "f64") and isinstance(v, float):
        v = _enc_float(v)
    return {"type": lit.type, "value": v}


def _enc_dims(d: LaunchDims) -> dict:
    return {
        "grid_x": d.grid_x, "grid_y": d.grid_y, "grid_z": d.grid_z,
        "block_x": d.block_x, "block_y": d.block_y, "block_z": d.block_z,
    }


def encode_request(req: KaasRequest) -> bytes:
    doc = {
        "request_id": req.request_id,
        "buffers": [
            {
                "name": b.name,
                "key": b.key,
                "size": b.size,
                "is_const": b.is_const,
                "is_ephemeral": b.is_ephemeral,
                "direction": b.direction,
            }
            for b in req.buffers
        ],
        "invocations": [
            {
                "kernel_id": inv.kernel_id,
                "dims": _enc_dims(inv.dims),
                "literals": [_enc_literal(l) for l in inv.literals],
                "args": list(inv.args),
            }
            for inv in req.invocations
        ],
    }
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")


def encode_response(resp: KaasResponse) -> bytes:
    doc: dict = {"request_id": resp.request_id, "status": resp.status.code}
    if not resp.status.ok:
        doc["error"] = {
            "kind": resp.status.error_kind,
            "message": resp.status.error_message or "",
        }
    doc["per_invocation"] = [
        {
            "kernel_id": s.kernel_id,
            "simulated_compute_time": s.simulated_compute_time,
            "launch_overhead": s.launch_overhead,
        }
        for s in resp.per_invocation
    ]
    st = resp.io_stats
    doc["io_stats"] = {
        "store_gets": st.store_gets,
        "store_puts": st.store_puts,
        "bytes_fetched": st.bytes_fetched,
        "bytes_flushed": st.bytes_flushed,
        "cache_hits": st.cache_hits,
        "cache_misses": st.cache_misses,
    }
    doc["simulated_total_time"] = resp.simulated_total_time
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _loads(data: bytes):
    if not isinstance(data, (bytes, bytearray)):
        raise ParseError("input must be a byte sequence")
    try:
        text = bytes(data).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid UTF-8: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None


def _need_obj(v, ctx: str) -> dict:
    if not isinstance(v, dict):
        raise SchemaError(f"{ctx}: expected object, got {type(v).__name__}")
    return v


def _need_list(v, ctx: str) -> list:
    if not isinstance(v, list):
        raise SchemaError(f"{ctx}: expected array, got {type(v).__name__}")
    return v


def _need_str(v, ctx: str) -> str:
    if not isinstance(v, str):
        raise SchemaError(f"{ctx}: expected string, got {type(v).__name__}")
    return v


def _need_int(v, ctx: str) -> int:
    if not isinstance(v, int) or isinstance(v, bool):
        raise SchemaError(f"{ctx}: expected integer, got {type(v).__name__}")
    return v


def _need_bool(v, ctx: str) -> bool:
    if not isinstance(v, bool):
        raise SchemaError(f"{ctx}: expected boolean, got {type(v).__name__}")
    return v


def _field(obj: dict, name: str, ctx: str):
    if name not in obj:
        raise SchemaError(f"{ctx}: missing field {name!r}")
    return obj[name]


def _check_fields(obj: dict, allowed: set[str], ctx: str, strict: bool) -> None:
    if strict:
        extra = set(obj) - allowed
        if extra:
            raise SchemaError(f"{ctx}: unknown fields {sorted(extra)}")


_FLOAT_WORDS = {"NaN": math.nan, "Infinity": math.inf, "-Infinity": -math.inf}


def _dec_literal(v, ctx: str, strict: bool) -> ScalarLiteral:
    obj = _need_obj(v, ctx)
    _check_fields(obj, {"type", "value"}, ctx, strict)
    tag = _need_str(_field(obj, "type", ctx), f"{ctx}.type")
    if tag not in LITERAL_TYPES:
        raise SchemaError(f'{ctx}: unknown literal type "{tag}"')
    raw = _field(obj, "value", ctx)
    if tag in ("i32", "i64"):
        return ScalarLiteral(tag, _need_int(raw, f"{ctx}.value"))
    if isinstance(raw, str):
        if raw not in _FLOAT_WORDS:
            raise SchemaError(f'{ctx}: bad float word "{raw}"')
        return ScalarLiteral(tag, _FLOAT_WORDS[raw])
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise SchemaError(f"{ctx}.value: expected number")
    return ScalarLiteral(tag, float(raw))


def _dec_dims(v, ctx: str, strict: bool) -> LaunchDims:
    obj = _need_obj(v, ctx)
    names = ("grid_x", "grid_y", "grid_z", "block_x", "block_y", "block_z")
    _check_fields(obj, set(names), ctx, strict)
    vals = {n: _need_int(_field(obj, n, ctx), f"{ctx}.{n}") for n in names}
    return LaunchDims(**vals)


def decode_request(data: bytes, strict: bool = False) -> KaasRequest:
    """Decode a wire request. Structural checks only; semantic invariants
    are validate_request's job so that invalid-but-well-formed requests
    can round-trip."""
    top = _need_obj(_loads(data), "request")
    _check_fields(top, {"request_id", "buffers", "invocations"}, "request", strict)
    request_id = _need_str(_field(top, "request_id", "request"), "request_id")

    buffers = []
    for i, raw in enumerate(_need_list(_field(top, "buffers", "request"), "buffers")):
        ctx = f"buffers[{i}]"
        obj = _need_obj(raw, ctx)
        _check_fields(
            obj, {"name", "key", "size", "is_const", "is_ephemeral", "direction"},
            ctx, strict,
        )
        key = obj.get("key")
        if key is not None:
            key = _need_str(key, f"{ctx}.key")
        direction = _need_str(_field(obj, "direction", ctx), f"{ctx}.direction")
        if direction not in DIRECTIONS:
            raise SchemaError(f'{ctx}: unknown direction "{direction}"')
        buffers.append(
            BufferArg(
                name=_need_str(_field(obj, "name", ctx), f"{ctx}.name"),
                key=key,
                size=_need_int(_field(obj, "size", ctx), f"{ctx}.size"),
                is_const=_need_bool(_field(obj, "is_const", ctx), f"{ctx}.is_const"),
                is_ephemeral=_need_bool(
                    _field(obj, "is_ephemeral", ctx), f"{ctx}.is_ephemeral"
                ),
                direction=direction,
            )
        )

    invocations = []
    raw_invs = _need_list(_field(top, "invocations", "request"), "invocations")
    for i, raw in enumerate(raw_invs):
        ctx = f"invocations[{i}]"
        obj = _need_obj(raw, ctx)
        _check_fields(obj, {"kernel_id", "dims", "literals", "args"}, ctx, strict)
        literals = tuple(
            _dec_literal(l, f"{ctx}.literals[{j}]", strict)
            for j, l in enumerate(_need_list(_field(obj, "literals", ctx), ctx))
        )
        args = tuple(
            _need_str(a, f"{ctx}.args[{j}]")
            for j, a in enumerate(_need_list(_field(obj, "args", ctx), ctx))
        )
        invocations.append(
            KernelInvocation(
                kernel_id=_need_str(_field(obj, "kernel_id", ctx), f"{ctx}.kernel_id"),
                dims=_dec_dims(_field(obj, "dims", ctx), f"{ctx}.dims", strict),
                literals=literals,
                args=args,
            )
        )
    return KaasRequest(request_id, tuple(buffers), tuple(invocations))


def decode_response(data: bytes, strict: bool = False) -> KaasResponse:
    top = _need_obj(_loads(data), "response")
    _check_fields(
        top,
        {"request_id", "status", "error", "per_invocation", "io_stats",
         "simulated_total_time"},
        "response", strict,
    )
    request_id = _need_str(_field(top, "request_id", "response"), "request_id")
    code = _need_str(_field(top, "status", "response"), "status")
    if code == "ok":
        status = Status.make_ok()
        if strict and "error" in top:
            raise SchemaError("response: unexpected error object on ok status")
    elif code == "error":
        err = _need_obj(_field(top, "error", "response"), "error")
        _check_fields(err, {"kind", "message"}, "error", strict)
        kind = _need_str(_field(err, "kind", "error"), "error.kind")
        if kind not in WIRE_ERROR_KINDS:
            raise SchemaError(f'error: unknown kind "{kind}"')
        status = Status.make_error(kind, _need_str(_field(err, "message", "error"),
                                                   "error.message"))
    else:
        raise SchemaError(f'response: unknown status "{code}"')

    per_invocation = []
    raw_per = _need_list(_field(top, "per_invocation", "response"), "per_invocation")
    for i, raw in enumerate(raw_per):
        ctx = f"per_invocation[{i}]"
        obj = _need_obj(raw, ctx)
        _check_fields(
            obj, {"kernel_id", "simulated_compute_time", "launch_overhead"},
            ctx, strict,
        )
        per_invocation.append(
            InvocationStats(
                kernel_id=_need_str(_field(obj, "kernel_id", ctx), f"{ctx}.kernel_id"),
                simulated_compute_time=_need_int(
                    _field(obj, "simulated_compute_time", ctx), ctx
                ),
                launch_overhead=_need_int(_field(obj, "launch_overhead", ctx), ctx),
            )
        )

    ctx = "io_stats"
    obj = _need_obj(_field(top, "io_stats", "response"), ctx)
    names = ("store_gets", "store_puts", "bytes_fetched", "bytes_flushed",
             "cache_hits", "cache_misses")
    _check_fields(obj, set(names), ctx, strict)
    io_stats = IoStats(**{n: _need_int(_field(obj, n, ctx), f"{ctx}.{n}") for n in names})

    total = _need_int(_field(top, "simulated_total_time", "response"),
                      "simulated_total_time")
    return KaasResponse(request_id, status, tuple(per_invocation), io_stats, total)
