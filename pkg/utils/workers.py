"""
Dispel Worker Pool
Shared thread pool for grid cells and Monte Carlo runs
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from config import settings
from utils.logger import get_logger

logger = get_logger("workers")

T = TypeVar("T")
R = TypeVar("R")

_pool: Optional[ThreadPoolExecutor] = None


def get_worker_pool() -> ThreadPoolExecutor:
    """Get or create the process-wide pool"""
    global _pool
    if _pool is None:
        workers = max(1, settings.worker_count)
        _pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="dispel")
        logger.info("worker_pool_started", extra={"workers": workers})
    return _pool


def map_ordered(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """
    Run fn over items on the pool; results come back in input order.
    Tasks must not submit to the pool themselves.
    """
    items = list(items)
    if len(items) <= 1 or settings.worker_count <= 1:
        return [fn(item) for item in items]
    return list(get_worker_pool().map(fn, items))


def shutdown_pool():
    global _pool
    if _pool is not None:
        _pool.shutdown(wait=True, cancel_futures=True)
        _pool = None
