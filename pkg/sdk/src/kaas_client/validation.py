"""Local request validation, mirroring the server's rules.

The SDK validates the exact invariant set the server's strict mode
enforces, so a request that passes here is never rejected as invalid by
the service (it can still fail at execution time, e.g. on a missing store
key). Input is the plain wire document (dicts/lists), which is what the
builder produces.
"""

from __future__ import annotations

import re

MAX_TOTAL_THREADS = 2**32
I32_MIN, I32_MAX = -(2**31), 2**31 - 1
I64_MIN, I64_MAX = -(2**63), 2**63 - 1
STORE_KEY_MAX_LEN = 256
_STORE_KEY_RE = re.compile(r"^[A-Za-z0-9._/-]+$")

DIRECTIONS = ("input", "output", "inout")
LITERAL_TYPES = ("i32", "i64", "f32", "f64")

_DIM_NAMES = ("grid_x", "grid_y", "grid_z", "block_x", "block_y", "block_z")


def valid_store_key(key) -> bool:
    return (
        isinstance(key, str)
        and 0 < len(key) <= STORE_KEY_MAX_LEN
        and _STORE_KEY_RE.match(key) is not None
    )


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def validate_request_doc(doc: dict) -> list[str]:
    """Returns the list of invariant violations; empty means valid."""
    out: list[str] = []
    rid = doc.get("request_id")
    if not isinstance(rid, str) or not rid:
        out.append("request_id must be a non-empty string")

    seen: set[str] = set()
    key_owners: dict[str, list[dict]] = {}
    for b in doc.get("buffers", []):
        name = b.get("name")
        who = f'buffer "{name}"'
        if not isinstance(name, str) or not name:
            out.append("buffer name must be a non-empty string")
            continue
        if name in seen:
            out.append(f"{who}: duplicate buffer name")
            continue
        seen.add(name)
        size = b.get("size")
        if not _is_int(size) or size < 1:
            out.append(f"{who}: size must be a positive integer")
        direction = b.get("direction")
        if direction not in DIRECTIONS:
            out.append(f'{who}: unknown direction "{direction}"')
        const = bool(b.get("is_const"))
        ephemeral = bool(b.get("is_ephemeral"))
        key = b.get("key")
        if const and ephemeral:
            out.append(f"{who}: const and ephemeral are mutually exclusive")
        if const and direction != "input":
            out.append(f"{who}: const buffers must have direction input")
        if ephemeral:
            if key is not None:
                out.append(f"{who}: ephemeral buffers must not carry a store key")
        else:
            if key is None:
                out.append(f"{who}: non-ephemeral buffers require a store key")
            elif not valid_store_key(key):
                out.append(f'{who}: invalid store key "{key}"')
            else:
                key_owners.setdefault(key, []).append(b)

    for key, owners in key_owners.items():
        if len(owners) > 1 and not all(o.get("is_const") for o in owners):
            names = ", ".join(str(o.get("name")) for o in owners)
            out.append(f'store key "{key}" bound by non-const buffers ({names})')

    for idx, inv in enumerate(doc.get("invocations", [])):
        who = f"invocation {idx}"
        kid = inv.get("kernel_id")
        if not isinstance(kid, str) or not kid:
            out.append(f"{who}: kernel_id must be a non-empty string")
        dims = inv.get("dims", {})
        comps = [dims.get(n) for n in _DIM_NAMES]
        if any(not _is_int(c) or c < 1 for c in comps):
            out.append(f"{who}: launch dims must all be >= 1")
        else:
            total = 1
            for c in comps:
                total *= c
            if total > MAX_TOTAL_THREADS:
                out.append(f"{who}: total threads {total} exceeds 2^32")
        for li, lit in enumerate(inv.get("literals", [])):
            tag = lit.get("type")
            value = lit.get("value")
            if tag not in LITERAL_TYPES:
                out.append(f'{who}: literal {li} has unknown type "{tag}"')
            elif tag in ("i32", "i64"):
                if not _is_int(value):
                    out.append(f"{who}: literal {li} ({tag}) must be an integer")
                elif tag == "i32" and not I32_MIN <= value <= I32_MAX:
                    out.append(f"{who}: literal {li} out of i32 range")
                elif tag == "i64" and not I64_MIN <= value <= I64_MAX:
                    out.append(f"{who}: literal {li} out of i64 range")
            else:
                numeric = isinstance(value, (int, float)) and not isinstance(value, bool)
                if not numeric and value not in ("NaN", "Infinity", "-Infinity"):
                    out.append(f"{who}: literal {li} ({tag}) must be a number")
        for name in inv.get("args", []):
            if name not in seen:
                out.append(f'{who}: unknown buffer "{name}"')
    return out
