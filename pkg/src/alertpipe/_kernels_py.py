"""Pure-Python versions of the hot loops in :mod:`alertpipe._kernels`.

Used when the compiled extension is unavailable or disabled. Both
implementations must agree exactly; ``tests/test_kernels.py`` checks that.
"""
from __future__ import annotations

from typing import Sequence


def lcs_length(a: Sequence[int], b: Sequence[int]) -> int:
    """Bit-parallel LCS length; the shorter sequence is held as bit vectors."""
    if len(b) > len(a):
        a, b = b, a
    m = len(b)
    if m == 0:
        return 0
    masks: dict[int, int] = {}
    for j, c in enumerate(b):
        masks[c] = masks.get(c, 0) | (1 << j)
    full = (1 << m) - 1
    v = full
    for x in a:
        u = v & masks.get(x, 0)
        if u:
            v = ((v + u) | (v - u)) & full
    return m - v.bit_count()


def gap_starts(ts: Sequence[float], interval: float) -> list[int]:
    if not ts:
        return []
    starts = [0]
    last = ts[0]
    for i in range(1, len(ts)):
        t = ts[i]
        if t < last:
            raise ValueError(f"timestamps not sorted at index {i}")
        if t - last > interval:
            starts.append(i)
        last = t
    return starts


def dedupe_keep(ts: Sequence[float], keys: Sequence[int], window: float) -> list[int]:
    if len(ts) != len(keys):
        raise ValueError("ts and keys differ in length")
    last_kept: dict[int, float] = {}
    kept = []
    prev = float("-inf")
    for i, (t, k) in enumerate(zip(ts, keys)):
        if t < prev:
            raise ValueError(f"timestamps not sorted at index {i}")
        prev = t
        lk = last_kept.get(k)
        if lk is None or t - lk >= window:
            last_kept[k] = t
            kept.append(i)
    return kept


def segment_starts(ts: Sequence[float], codes: Sequence[int], gap: float) -> list[int]:
    if len(ts) != len(codes):
        raise ValueError("ts and codes differ in length")
    if not ts:
        return []
    starts = [0]
    for i in range(1, len(ts)):
        if ts[i] < ts[i - 1]:
            raise ValueError(f"timestamps not sorted at index {i}")
        if codes[i] != codes[i - 1] or ts[i] - ts[i - 1] > gap:
            starts.append(i)
    return starts
