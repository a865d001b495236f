"""
Фоновая подготовка батчей через ограниченную очередь.

The producer thread only runs the batch iterator; order is preserved, so
prefetching never changes what the training loop sees.
"""

import queue
import threading
from typing import Iterable, Iterator, Optional, TypeVar

from t3dnet.core.logging import get_logger

logger = get_logger(__name__)

T = TypeVar("T")

_DONE = object()


class _Failure:
    def __init__(self, error: BaseException) -> None:
        self.error = error


class Prefetcher(Iterator[T]):
    """
    Iterate `source` on a worker thread, at most `depth` items ahead.

    Exceptions raised by the source are re-raised in the consumer. Closing
    early (or garbage collection) stops the worker.
    """

    def __init__(self, source: Iterable[T], depth: int = 2) -> None:
        self._stop = threading.Event()
        if depth < 1:
            raise ValueError(f"prefetch depth must be >= 1, got {depth}")
        self._queue: "queue.Queue[object]" = queue.Queue(maxsize=depth)
        self._finished = False
        self._thread = threading.Thread(target=self._run, args=(iter(source),), name="batch-prefetch", daemon=True)
        self._thread.start()

    def _put(self, item: object) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _run(self, source: Iterator[T]) -> None:
        try:
            for item in source:
                if not self._put(item):
                    return
        except BaseException as exc:  # noqa: BLE001 - forwarded to the consumer
            self._put(_Failure(exc))
            return
        self._put(_DONE)

    def __next__(self) -> T:
        if self._finished:
            raise StopIteration
        item = self._queue.get()
        if item is _DONE:
            self._finished = True
            self._thread.join()
            raise StopIteration
        if isinstance(item, _Failure):
            self._finished = True
            self._thread.join()
            raise item.error
        return item  # type: ignore[return-value]

    def close(self) -> None:
        self._stop.set()
        self._finished = True
        self._thread.join(timeout=1.0)

    def __del__(self) -> None:
        stop = getattr(self, "_stop", None)
        if stop is not None:
            stop.set()


def prefetch(source: Iterable[T], depth: Optional[int]) -> Iterator[T]:
    """Wrap `source` in a Prefetcher; depth 0 (or None) iterates inline."""
    if not depth:
        return iter(source)
    return Prefetcher(source, depth)
