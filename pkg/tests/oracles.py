"""Independent reference implementations used as test oracles.

Everything here is deliberately written as straight scalar loops over
np.float32 values (each operation rounds to f32), with no code shared
with the package: the point is an independent derivation of the same
sequential semantics.
"""

from __future__ import annotations

import numpy as np


def ref_vector_add(x, y, n: int, total_threads: int, out):
    for g in range(min(total_threads, n)):
        out[g] = x[g] + y[g]


def ref_saxpy(a, x, y, n: int, total_threads: int, out):
    a = np.float32(a)
    for g in range(min(total_threads, n)):
        out[g] = a * x[g] + y[g]


def ref_matmul(a, b, n: int, m: int, k: int, total_threads: int, out):
    """Thread g covers cell (g // m, g % m); one f32 accumulator per cell,
    inner index ascending."""
    for g in range(min(total_threads, n * m)):
        i, j = divmod(g, m)
        acc = np.float32(0.0)
        for kk in range(k):
            acc = np.float32(acc + a[i * k + kk] * b[kk * m + j])
        out[g] = acc


def ref_reduce_sum(x, n: int, out):
    acc = np.float32(0.0)
    for g in range(n):
        acc = np.float32(acc + x[g])
    out[0] = acc


def ref_fill(v, n: int, total_threads: int, out):
    v = np.float32(v)
    for g in range(min(total_threads, n)):
        out[g] = v


class ModelCache:
    """Hand oracle for the executor cache's tick/evict rules.

    State is plain dicts; eviction picks the smallest last_use among
    unpinned clean entries, repeatedly, until the requested bytes fit.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: dict[str, dict] = {}  # key -> {size,last_use,pinned,dirty}
        self.tick = 0
        self.ephemeral = 0

    @property
    def used(self) -> int:
        return sum(e["size"] for e in self.entries.values())

    def next_tick(self) -> int:
        self.tick += 1
        return self.tick

    def insert(self, key: str, size: int) -> None:
        assert key not in self.entries
        self.entries[key] = {
            "size": size, "last_use": self.next_tick(), "pinned": 0, "dirty": False,
        }

    def touch(self, key: str) -> None:
        self.entries[key]["last_use"] = self.next_tick()

    def pin(self, key: str) -> None:
        self.entries[key]["pinned"] += 1

    def unpin(self, key: str) -> None:
        self.entries[key]["pinned"] -= 1

    def set_dirty(self, key: str, dirty: bool) -> None:
        self.entries[key]["dirty"] = dirty

    def evict_until(self, needed: int) -> list[str]:
        """Returns the eviction victims in order; raises RuntimeError when
        no candidate remains and space is still short."""
        victims = []
        while self.capacity - self.used - self.ephemeral < needed:
            candidates = [
                (e["last_use"], key)
                for key, e in self.entries.items()
                if e["pinned"] == 0 and not e["dirty"]
            ]
            if not candidates:
                raise RuntimeError("out of device memory")
            _, victim = min(candidates)
            victims.append(victim)
            del self.entries[victim]
        return victims
