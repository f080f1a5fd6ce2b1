# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled hot loops: LCS length, gap grouping, windowed dedupe, run segmentation."""

from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, calloc, free


cdef extern int __builtin_popcountll(unsigned long long) nogil


def lcs_length(const long long[:] a, const long long[:] b):
    """Bit-parallel LCS length over the shorter sequence's match vectors."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j, w, words
    cdef const long long[:] tmp
    if m > n:
        tmp = a; a = b; b = tmp
        n, m = m, n
    if m == 0:
        return 0
    cdef long long x, maxcode = -1
    for j in range(m):
        if b[j] < 0:
            raise ValueError("codes must be non-negative")
        if b[j] > maxcode:
            maxcode = b[j]
    words = (m + 63) >> 6
    cdef uint64_t lastmask = (~(<uint64_t> 0)) >> (words * 64 - m)
    cdef uint64_t *masks = <uint64_t *> calloc((maxcode + 1) * words, sizeof(uint64_t))
    cdef uint64_t *v = <uint64_t *> malloc(words * sizeof(uint64_t))
    cdef uint64_t *mx
    cdef uint64_t u, s, carry, vw
    cdef long long zeros = 0
    if masks == NULL or v == NULL:
        free(masks); free(v)
        raise MemoryError()
    for j in range(m):
        masks[b[j] * words + (j >> 6)] |= (<uint64_t> 1) << (j & 63)
    for w in range(words):
        v[w] = ~(<uint64_t> 0)
    v[words - 1] &= lastmask
    for i in range(n):
        x = a[i]
        if x < 0 or x > maxcode:
            continue
        mx = masks + x * words
        carry = 0
        for w in range(words):
            vw = v[w]
            u = vw & mx[w]
            s = vw + u
            if s < vw:
                s = s + carry
                carry = 1
            else:
                s = s + carry
                carry = 1 if s < carry else 0
            v[w] = s | (vw & ~u)
        v[words - 1] &= lastmask
    for w in range(words):
        zeros += __builtin_popcountll(v[w])
    free(masks); free(v)
    return m - zeros


def gap_starts(const double[:] ts, double interval):
    cdef Py_ssize_t n = ts.shape[0], i
    cdef double last
    starts = []
    if n == 0:
        return starts
    starts.append(0)
    last = ts[0]
    for i in range(1, n):
        if ts[i] < last:
            raise ValueError(f"timestamps not sorted at index {i}")
        if ts[i] - last > interval:
            starts.append(i)
        last = ts[i]
    return starts


def dedupe_keep(const double[:] ts, const long long[:] keys, double window):
    """``keys`` must be dense codes in ``[0, max(keys)]``."""
    cdef Py_ssize_t n = ts.shape[0], i
    cdef long long k, nkeys = 0
    cdef double prev = -1e308
    for i in range(n):
        if keys[i] < 0:
            raise ValueError("key codes must be non-negative")
        if keys[i] + 1 > nkeys:
            nkeys = keys[i] + 1
    kept = []
    if n == 0:
        return kept
    cdef double *last = <double *> malloc(nkeys * sizeof(double))
    cdef char *seen = <char *> calloc(nkeys, sizeof(char))
    if last == NULL or seen == NULL:
        free(last); free(seen)
        raise MemoryError()
    try:
        for i in range(n):
            if ts[i] < prev:
                raise ValueError(f"timestamps not sorted at index {i}")
            prev = ts[i]
            k = keys[i]
            if not seen[k] or ts[i] - last[k] >= window:
                seen[k] = 1
                last[k] = ts[i]
                kept.append(i)
    finally:
        free(last); free(seen)
    return kept


def segment_starts(const double[:] ts, const long long[:] codes, double gap):
    cdef Py_ssize_t n = ts.shape[0], i
    starts = []
    if n == 0:
        return starts
    starts.append(0)
    for i in range(1, n):
        if ts[i] < ts[i - 1]:
            raise ValueError(f"timestamps not sorted at index {i}")
        if codes[i] != codes[i - 1] or ts[i] - ts[i - 1] > gap:
            starts.append(i)
    return starts
