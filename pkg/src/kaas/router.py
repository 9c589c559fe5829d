"""Request placement across executors, exploiting buffer-cache affinity.

The router keeps a per-executor digest: an LRU-bounded estimate of which
store keys that executor's cache holds. Digests are estimates maintained
from routed traffic, never executor-reported truth; staleness can only
cost hit rate, not correctness.
"""

from __future__ import annotations

import random
import threading
from collections import OrderedDict

from .errors import NoExecutorsError, UnknownExecutorError
from .protocol import KaasRequest, KaasResponse


class DigestEntry:
    __slots__ = ("keys", "queue_depth")

    def __init__(self):
        self.keys: OrderedDict[str, int] = OrderedDict()  # key -> size estimate
        self.queue_depth = 0

    @property
    def used_bytes(self) -> int:
        return sum(self.keys.values())


class RandomPolicy:
    name = "random"

    def __init__(self, seed: int):
        self.seed = seed
        self._rng = random.Random(seed)

    def pick(self, ids, digests, req):
        return ids[self._rng.randrange(len(ids))]

    def __str__(self):
        return f"random:{self.seed}"


class RoundRobinPolicy:
    name = "round_robin"

    def __init__(self):
        self._counter = 0

    def pick(self, ids, digests, req):
        chosen = ids[self._counter % len(ids)]
        self._counter += 1
        return chosen

    def __str__(self):
        return "rr"


class AffinityPolicy:
    """Send a request where its const bytes already live.

    Score is the byte total of the request's const-input keys present in
    an executor's digest (bytes, not key count: one large weight buffer
    beats two tiny ones). Ties break by queue depth, then by smallest
    estimated digest footprint, then executor id; a winner deeper than
    ``q_max`` spills to the least-loaded executor.

    The digest-footprint tie-break is what spreads cold keys: with a
    sequential client queue depths are all zero at decision time, and
    without it every never-seen key would land on the lowest executor id,
    hot-spotting one cache while the rest stay idle.
    """

    name = "affinity"

    def __init__(self, q_max: int):
        if q_max < 1:
            raise ValueError("q_max must be >= 1")
        self.q_max = q_max

    def pick(self, ids, digests, req):
        const_keys = {b.key for b in req.buffers if b.is_const and b.key is not None}

        def score(eid: int) -> int:
            d = digests[eid]
            return sum(d.keys[k] for k in const_keys if k in d.keys)

        chosen = min(
            ids,
            key=lambda e: (-score(e), digests[e].queue_depth,
                           digests[e].used_bytes, e),
        )
        if digests[chosen].queue_depth > self.q_max:
            chosen = min(ids, key=lambda e: (digests[e].queue_depth, e))
        return chosen

    def __str__(self):
        return f"affinity:{self.q_max}"


def parse_policy(spec: str):
    """Build a policy from its flag spelling: random:<seed> | rr | affinity:<q_max>."""
    if spec == "rr" or spec == "round_robin":
        return RoundRobinPolicy()
    if spec.startswith("random:"):
        return RandomPolicy(int(spec.split(":", 1)[1]))
    if spec.startswith("affinity:"):
        return AffinityPolicy(int(spec.split(":", 1)[1]))
    raise ValueError(
        f"unknown policy {spec!r} (expected random:<seed> | rr | affinity:<q_max>)")


class Router:
    """Single decision point: route/update_digest serialize behind one lock,
    which is never held across request execution."""

    def __init__(self, executor_ids: list[int], policy, digest_cap: int = 1024):
        self.executor_ids = sorted(executor_ids)
        self.policy = policy
        self.digest_cap = digest_cap
        self.digests: dict[int, DigestEntry] = {e: DigestEntry() for e in self.executor_ids}
        self._lock = threading.Lock()

    def route(self, req: KaasRequest) -> int:
        with self._lock:
            if not self.executor_ids:
                raise NoExecutorsError("no executors registered")
            chosen = self.policy.pick(self.executor_ids, self.digests, req)
            self.digests[chosen].queue_depth += 1
            return chosen

    def update_digest(self, executor_id: int, resp: KaasResponse, req: KaasRequest) -> None:
        with self._lock:
            digest = self.digests.get(executor_id)
            if digest is None:
                raise UnknownExecutorError(f"no executor {executor_id!r}")
            digest.queue_depth -= 1
            if not resp.status.ok:
                return
            for b in req.buffers:
                if b.key is None:
                    continue
                if b.is_const or b.direction in ("output", "inout"):
                    digest.keys[b.key] = b.size
                    digest.keys.move_to_end(b.key)
            while len(digest.keys) > self.digest_cap:
                digest.keys.popitem(last=False)

    def snapshot(self) -> dict:
        with self._lock:
            return {
                eid: {
                    "keys": list(d.keys),
                    "estimated_bytes": d.used_bytes,
                    "queue_depth": d.queue_depth,
                }
                for eid, d in self.digests.items()
            }
