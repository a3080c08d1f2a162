"""Ordered background production of training batches."""
from __future__ import annotations

import queue
import threading
from typing import Callable, Generic, Iterator, TypeVar

from loguru import logger

from ..errors import ArgumentError

T = TypeVar("T")


class ClipPrefetcher(Generic[T]):
    """Run ``produce(i)`` for i in [0, count) on worker threads.

    Items come back in index order whatever the thread timing, and at most
    ``depth`` items are in flight, so memory stays bounded. ``produce`` must be
    a pure function of its index (derive its Rng stream from it).
    """

    def __init__(self, produce: Callable[[int], T], count: int, workers: int = 2, depth: int = 4):
        if workers < 0 or depth < 1:
            raise ArgumentError(f"Invalid prefetch settings workers={workers}, depth={depth}")
        self.produce = produce
        self.count = count
        self.workers = workers
        self.depth = max(depth, workers)

    def __len__(self) -> int:
        return self.count

    def __iter__(self) -> Iterator[T]:
        if self.workers == 0:
            for i in range(self.count):
                yield self.produce(i)
            return

        results: "queue.Queue" = queue.Queue(maxsize=self.depth)
        slots = threading.Semaphore(self.depth)
        lock = threading.Lock()
        stop = threading.Event()
        next_task = [0]

        def worker():
            while not stop.is_set():
                slots.acquire()
                with lock:
                    index = next_task[0]
                    next_task[0] += 1
                if index >= self.count or stop.is_set():
                    slots.release()
                    return
                try:
                    results.put((index, self.produce(index), None))
                except Exception as e:  # re-raised on the consuming thread
                    results.put((index, None, e))

        threads = [threading.Thread(target=worker, name=f"prefetch-{i}", daemon=True)
                   for i in range(self.workers)]
        for thread in threads:
            thread.start()

        pending = {}
        try:
            for wanted in range(self.count):
                while wanted not in pending:
                    index, item, error = results.get()
                    pending[index] = (item, error)
                item, error = pending.pop(wanted)
                slots.release()
                if error is not None:
                    raise error
                yield item
        finally:
            stop.set()
            # wake any worker blocked on a slot
            for _ in threads:
                slots.release()
            while True:
                try:
                    results.get_nowait()
                except queue.Empty:
                    break
            logger.trace(f"prefetcher drained after {self.count} items")
