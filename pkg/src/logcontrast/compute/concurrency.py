from collections.abc import Callable
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor

from logcontrast.config.settings import settings


def ordered_map[T, R](
    fn: Callable[[T], R],
    items: Sequence[T],
    max_workers: int | None = None,
) -> list[R]:
    """Apply `fn` to every item, possibly in threads, keeping input order.

    Each task must own its random state; results never depend on
    scheduling.
    """
    workers = min(max_workers or settings.max_workers, len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
