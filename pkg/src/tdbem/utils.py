from __future__ import annotations

import os
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Hashable, Iterable, Mapping, TypeVar

KT = TypeVar("KT", bound=Hashable)
VT = TypeVar("VT")
RT = TypeVar("RT")


class SizeLimitOrderedDict(OrderedDict, Mapping[KT, VT]):
    """Ordered dict dropping its oldest entries beyond ``max_size``.

    Access through ``get_or_compute`` is guarded by a lock, so the cache can be
    shared by the assembly workers.
    """

    _max_size = None

    def __init__(self, *args, max_size=100, **kwargs):
        super(SizeLimitOrderedDict, self).__init__(*args, **kwargs)
        self._max_size = max_size
        self._lock = threading.Lock()

        # deleting values to make the dictionary of length _max_size at most
        while len(self) > self._max_size:
            self.popitem(last=False)

    def __setitem__(self, __key: KT, __value: VT) -> None:
        if __key not in self and len(self) >= self._max_size:
            self.popitem(last=False)

        return super().__setitem__(__key, __value)

    def get_or_compute(self, key: KT, compute: Callable[[], VT]) -> VT:
        with self._lock:
            if key in self:
                return self[key]
        value = compute()
        with self._lock:
            self[key] = value
        return value


def resolve_workers(threads: int | None) -> int:
    """Number of worker threads, ``None`` meaning the hardware parallelism."""
    if threads is None:
        return os.cpu_count() or 1
    return max(1, int(threads))


def map_indexed(
    func: Callable[..., RT], items: Iterable, threads: int | None = 1
) -> list[RT]:
    """
    Apply ``func`` to every item and return the results in input order.

    With a single worker the items are processed inline, which keeps stack
    traces readable when debugging.
    """
    items = list(items)
    workers = resolve_workers(threads)
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
