"""Thread-pool fan-out for independent scenario legs."""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

logger = logging.getLogger(__name__)

_worker = threading.local()


def resolve_workers(max_workers: Optional[int] = None) -> int:
    """Worker count capped by ``SELFMETRO_THREADS``."""
    from ..config import Config

    cap = Config.threads()
    if max_workers is None:
        return cap
    return max(1, min(int(max_workers), cap))


def in_worker() -> bool:
    """True inside a task dispatched by ``map_parallel`` to its pool."""
    return getattr(_worker, "active", False)


def _in_pool(fn: Callable[[T], R]) -> Callable[[T], R]:
    def task(item: T) -> R:
        _worker.active = True
        try:
            return fn(item)
        finally:
            _worker.active = False

    return task


def map_parallel(
    fn: Callable[[T], R],
    items: Sequence[T],
    max_workers: Optional[int] = None,
) -> List[R]:
    """
    Apply ``fn`` to every item, in a thread pool when more than one worker is allowed.

    Results come back in input order. The first exception raised by a task
    propagates to the caller. Calls made from inside a pool task run serially,
    so nesting never holds more than ``SELFMETRO_THREADS`` workers.
    """
    workers = min(resolve_workers(max_workers), max(1, len(items)))
    if workers == 1 or len(items) <= 1 or in_worker():
        return [fn(item) for item in items]

    logger.debug(f"Dispatching {len(items)} tasks on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_in_pool(fn), items))
