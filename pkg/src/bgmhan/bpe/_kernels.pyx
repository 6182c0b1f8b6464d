# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled BPE kernels: the hot loops behind training and encoding.

Interface-identical to _kernels_py; see that module for the semantics.
Sequences are contiguous int64 arrays, pair keys pack as a * base + b.
"""

import numpy as np


cdef inline void _dec(dict counts, object key):
    cdef object c = counts[key]
    if c == 1:
        del counts[key]
    else:
        counts[key] = c - 1


cdef inline void _inc(dict counts, object key, list touched):
    if key in counts:
        counts[key] = counts[key] + 1
    else:
        counts[key] = 1
    touched.append(key)


def count_pairs(long long[::1] seq, long long base):
    cdef dict counts = {}
    cdef Py_ssize_t i, n = seq.shape[0]
    cdef long long a, b
    cdef object key
    for i in range(n - 1):
        a = seq[i]
        b = seq[i + 1]
        if a < 0 or b < 0:
            continue
        key = a * base + b
        if key in counts:
            counts[key] = counts[key] + 1
        else:
            counts[key] = 1
    return counts


def merge_and_count(long long[::1] seq, long long a, long long b, long long new_id,
                    dict counts, list touched, long long base):
    cdef Py_ssize_t n = seq.shape[0]
    out_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef Py_ssize_t i = 0, j = 0
    cdef long long prev, nxt
    while i < n:
        if seq[i] == a and i + 1 < n and seq[i + 1] == b:
            if j > 0:
                prev = out[j - 1]
                if prev >= 0:
                    _dec(counts, prev * base + a)
                    _inc(counts, prev * base + new_id, touched)
            _dec(counts, a * base + b)
            if i + 2 < n:
                nxt = seq[i + 2]
                if nxt >= 0:
                    _dec(counts, b * base + nxt)
                    _inc(counts, new_id * base + nxt, touched)
            out[j] = new_id
            j += 1
            i += 2
        else:
            out[j] = seq[i]
            j += 1
            i += 1
    return out_arr[:j].copy()


def apply_merges(long long[::1] seq, long long[::1] ma, long long[::1] mb,
                 long long[::1] mn, Py_ssize_t vocab_size):
    cdef Py_ssize_t n = seq.shape[0], r = ma.shape[0]
    buf_arr = np.array(seq, dtype=np.int64)
    cdef long long[::1] buf = buf_arr
    pres_arr = np.zeros(vocab_size, dtype=np.uint8)
    cdef unsigned char[::1] present = pres_arr
    cdef Py_ssize_t i, j, t
    cdef long long a, b, nid
    cdef bint merged
    for i in range(n):
        present[buf[i]] = 1
    for t in range(r):
        a = ma[t]
        b = mb[t]
        nid = mn[t]
        if not present[a] or not present[b]:
            continue
        # front-write in place; the write index never passes the read index
        i = 0
        j = 0
        merged = 0
        while i < n:
            if buf[i] == a and i + 1 < n and buf[i + 1] == b:
                buf[j] = nid
                j += 1
                i += 2
                merged = 1
            else:
                buf[j] = buf[i]
                j += 1
                i += 1
        n = j
        if merged:
            present[nid] = 1
    return buf_arr[:n].copy()
