"""Pure-Python BPE kernels.

Same interface as the compiled module (_kernels.pyx); this is the fallback
when the extension is unavailable, and the reference half of the backend
parity tests.  Pair keys are packed as a * base + b so the two backends can
share one dict layout without allocating a tuple per adjacency.
"""

import numpy as np


def count_pairs(seq, base):
    """Count every adjacent id pair in a flat corpus.

    Negative ids are document separators; pairs never span them.
    """
    counts = {}
    ids = seq.tolist()
    prev = -1
    for cur in ids:
        if prev >= 0 and cur >= 0:
            key = prev * base + cur
            if key in counts:
                counts[key] += 1
            else:
                counts[key] = 1
        prev = cur
    return counts


def _dec(counts, key):
    c = counts[key] - 1
    if c:
        counts[key] = c
    else:
        del counts[key]


def _inc(counts, key, touched):
    if key in counts:
        counts[key] += 1
    else:
        counts[key] = 1
    touched.append(key)


def merge_and_count(seq, a, b, new_id, counts, touched, base):
    """Replace (a, b) -> new_id greedily left-to-right, updating pair counts.

    Counts are adjusted exactly for every adjacency the replacement destroys
    or creates, so the dict stays equal to a fresh recount of the returned
    sequence.  Pairs whose count increased are appended to `touched`.
    """
    ids = seq.tolist()
    n = len(ids)
    out = []
    i = 0
    while i < n:
        if ids[i] == a and i + 1 < n and ids[i + 1] == b:
            if out:
                prev = out[-1]
                if prev >= 0:
                    _dec(counts, prev * base + a)
                    _inc(counts, prev * base + new_id, touched)
            _dec(counts, a * base + b)
            if i + 2 < n:
                nxt = ids[i + 2]
                if nxt >= 0:
                    _dec(counts, b * base + nxt)
                    _inc(counts, new_id * base + nxt, touched)
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return np.array(out, dtype=np.int64)


def apply_merges(seq, ma, mb, mn, vocab_size):
    """Replay learned merges in training order over one document.

    Merges whose left or right symbol has never appeared are skipped via a
    presence set; the set is a superset of the live symbols (ids are never
    removed), which only costs wasted scans, never a missed merge.
    """
    ids = seq.tolist()
    present = set(ids)
    for a, b, nid in zip(ma.tolist(), mb.tolist(), mn.tolist()):
        if a not in present or b not in present:
            continue
        n = len(ids)
        out = []
        i = 0
        merged = False
        while i < n:
            if ids[i] == a and i + 1 < n and ids[i + 1] == b:
                out.append(nid)
                merged = True
                i += 2
            else:
                out.append(ids[i])
                i += 1
        if merged:
            ids = out
            present.add(nid)
    return np.array(ids, dtype=np.int64)
