from __future__ import annotations

import os

import pytest

from tdbem.utils import SizeLimitOrderedDict, map_indexed, resolve_workers


def test_size_limit_drops_oldest_entries():
    cache = SizeLimitOrderedDict(max_size=2)
    cache["a"] = 1
    cache["b"] = 2
    cache["c"] = 3

    assert list(cache) == ["b", "c"]
    cache["b"] = 4
    assert list(cache.items()) == [("b", 4), ("c", 3)]


def test_get_or_compute_calls_once():
    cache = SizeLimitOrderedDict(max_size=10)
    calls = []

    def compute():
        calls.append(1)
        return 42

    assert cache.get_or_compute("x", compute) == 42
    assert cache.get_or_compute("x", compute) == 42
    assert len(calls) == 1


@pytest.mark.parametrize(
    "threads, expected",
    [
        (1, 1),
        (4, 4),
        (0, 1),
        (None, os.cpu_count() or 1),
    ],
)
def test_resolve_workers(threads, expected):
    assert resolve_workers(threads) == expected


@pytest.mark.parametrize("threads", [1, 3, None])
def test_map_indexed_keeps_order(threads):
    assert map_indexed(lambda k: k * k, range(10), threads) == [
        k * k for k in range(10)
    ]
