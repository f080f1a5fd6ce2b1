"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting
``ALERTPIPE_PURE_PYTHON=1`` forces the pure-Python fallback.
"""
from __future__ import annotations

import os
from array import array
from typing import Sequence

from alertpipe import _kernels_py

_native = None
if not os.environ.get("ALERTPIPE_PURE_PYTHON"):
    try:
        from alertpipe import _kernels as _native
    except ImportError:
        _native = None

BACKEND = "cython" if _native is not None else "python"


def _f64(values: Sequence[float]) -> array:
    return values if isinstance(values, array) and values.typecode == "d" else array("d", values)


def _i64(values: Sequence[int]) -> array:
    return values if isinstance(values, array) and values.typecode == "q" else array("q", values)


def _bind(native: bool):
    if native and _native is not None:
        n = _native

        def lcs_length(a: Sequence[int], b: Sequence[int]) -> int:
            return n.lcs_length(_i64(a), _i64(b))

        def gap_starts(ts: Sequence[float], interval: float) -> list[int]:
            return n.gap_starts(_f64(ts), float(interval))

        def dedupe_keep(ts: Sequence[float], keys: Sequence[int], window: float) -> list[int]:
            if len(ts) != len(keys):
                raise ValueError("ts and keys differ in length")
            return n.dedupe_keep(_f64(ts), _i64(keys), float(window))

        def segment_starts(ts: Sequence[float], codes: Sequence[int], gap: float) -> list[int]:
            if len(ts) != len(codes):
                raise ValueError("ts and codes differ in length")
            return n.segment_starts(_f64(ts), _i64(codes), float(gap))

        return lcs_length, gap_starts, dedupe_keep, segment_starts
    p = _kernels_py
    return p.lcs_length, p.gap_starts, p.dedupe_keep, p.segment_starts


def backend_functions(name: str):
    """Kernel functions of one backend as a namespace-like dict (for tests and benchmarks)."""
    if name == "cython" and _native is None:
        raise ImportError("compiled kernels are not built")
    fns = _bind(name == "cython")
    return dict(zip(("lcs_length", "gap_starts", "dedupe_keep", "segment_starts"), fns))


lcs_length, gap_starts, dedupe_keep, segment_starts = _bind(True)
