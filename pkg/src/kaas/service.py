"""In-process service core: a router in front of per-executor work queues.

Each executor runs requests one at a time on its own consumer thread, in
arrival order. The front end may accept requests concurrently; handing a
request to one executor's queue never blocks the others. The bench
harness drives this object directly; the HTTP layer is a thin wrapper.
"""

from __future__ import annotations

import queue
import threading
from concurrent.futures import Future

from .backend import SimulatedBackend, TimingModel
from .executor import Executor, ExecutorConfig
from .protocol import KaasRequest, KaasResponse, Status
from .router import Router, parse_policy
from .store import ObjectStore


class KaasService:
    def __init__(
        self,
        store: ObjectStore,
        n_executors: int = 1,
        capacity: int = 256 * 2**20,
        policy="affinity:8",
        timing: TimingModel | None = None,
        digest_cap: int = 1024,
        strict_schema: bool = False,
        debug: bool = False,
    ):
        if n_executors < 1:
            raise ValueError("need at least one executor")
        self.store = store
        self.strict_schema = strict_schema
        self.timing = timing if timing is not None else TimingModel()
        self.executors = [
            Executor(
                ExecutorConfig(capacity=capacity, timing=self.timing,
                               executor_id=i, debug=debug),
                store,
                SimulatedBackend(timing=self.timing),
            )
            for i in range(n_executors)
        ]
        if isinstance(policy, str):
            policy = parse_policy(policy)
        self.router = Router([e.executor_id for e in self.executors], policy,
                             digest_cap=digest_cap)
        self._queues: dict[int, queue.Queue] = {
            e.executor_id: queue.Queue() for e in self.executors
        }
        self._threads = [
            threading.Thread(target=self._worker, args=(e,), daemon=True,
                             name=f"executor-{e.executor_id}")
            for e in self.executors
        ]
        self._closed = False
        for t in self._threads:
            t.start()

    def _worker(self, executor: Executor) -> None:
        q = self._queues[executor.executor_id]
        while True:
            item = q.get()
            if item is None:
                return
            req, fut = item
            try:
                resp = executor.execute(req)
            except BaseException as exc:  # executor.execute should not raise
                failed = KaasResponse(req.request_id,
                                      Status.make_error("Internal", str(exc)))
                self.router.update_digest(executor.executor_id, failed, req)
                fut.set_exception(exc)
                continue
            self.router.update_digest(executor.executor_id, resp, req)
            fut.set_result(resp)

    def submit_async(self, req: KaasRequest) -> Future:
        if self._closed:
            raise RuntimeError("service is closed")
        executor_id = self.router.route(req)
        fut: Future = Future()
        self._queues[executor_id].put((req, fut))
        return fut

    def submit(self, req: KaasRequest) -> KaasResponse:
        return self.submit_async(req).result()

    def stats(self) -> dict:
        return {
            "executors": [e.stats() for e in self.executors],
            "router": self.router.snapshot(),
        }

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for q in self._queues.values():
            q.put(None)
        for t in self._threads:
            t.join(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
