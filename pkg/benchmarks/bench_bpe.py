"""Compare the compiled BPE kernels against the pure-Python fallback.

Runs tokenizer training and corpus encoding once per backend on the same
synthetic corpus, checks both give identical results, and prints the
timings.  The compiled module is the point of shipping a C extension at
all, so this script is the receipt.

Usage: python3 benchmarks/bench_bpe.py [--profiles N] [--vocab-size V]
"""

import argparse
import time

import numpy as np

from bgmhan import bpe
from bgmhan.bpe import _kernels_py
from bgmhan.synthetic import generate_synthetic

try:
    from bgmhan.bpe import _kernels
except ImportError:
    _kernels = None

BACKENDS = [("python", _kernels_py)]
if _kernels is not None:
    BACKENDS.insert(0, ("compiled", _kernels))


def build_corpus(n_profiles, seed=0):
    docs = []
    for p in generate_synthetic(n_profiles, seed=seed):
        docs.extend(t for t in p.field_texts() if t)
    return docs


def run_backend(kernels_mod, docs, vocab_size, repeats):
    prev = bpe.kernels
    bpe.kernels = kernels_mod
    try:
        train_times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            vocab = bpe.train_bpe(docs, vocab_size)
            train_times.append(time.perf_counter() - t0)
        encode_times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            ids = [vocab.encode(d) for d in docs]
            encode_times.append(time.perf_counter() - t0)
    finally:
        bpe.kernels = prev
    return vocab, ids, min(train_times), min(encode_times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--profiles", type=int, default=500)
    ap.add_argument("--vocab-size", type=int, default=2000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    docs = build_corpus(args.profiles)
    chars = sum(len(d) for d in docs)
    print(f"corpus: {len(docs)} documents, {chars} characters, "
          f"target vocabulary {args.vocab_size}")
    if _kernels is None:
        print("compiled kernels not built; timing the fallback only")

    results = {}
    for name, mod in BACKENDS:
        vocab, ids, t_train, t_enc = run_backend(mod, docs, args.vocab_size,
                                                 args.repeats)
        results[name] = (vocab, ids, t_train, t_enc)
        rate = chars / t_enc / 1e6
        print(f"{name:>9}: train {t_train:7.3f}s   encode {t_enc:7.3f}s "
              f"({rate:.2f} Mchar/s)")

    if len(results) == 2:
        (cv, ci, ct, ce), (pv, pi, pt, pe) = results["compiled"], results["python"]
        assert cv.symbols == pv.symbols and cv.merges == pv.merges
        assert all(np.array_equal(a, b) for a, b in zip(ci, pi))
        print("backends agree on every symbol, merge, and token id")
        print(f"speedup: train {pt / ct:.1f}x, encode {pe / ce:.1f}x")


if __name__ == "__main__":
    main()
