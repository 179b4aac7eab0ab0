"""Time the compiled kernels against the pure-numpy fallback.

Run after installing the package:

    python benchmarks/bench_kernels.py [--repeats 5]

Covers the two hot loops (maxsim token scoring and gradient row scatter)
plus pooling and corpus-wide maxsim.  When the compiled extension is not
available only the fallback column is reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from distillrank import _kernels_py

try:
    from distillrank import _kernels
except ImportError:
    _kernels = None


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _cases(rng):
    dim = 64
    vocab = 5000
    table = rng.standard_normal((vocab, dim))

    rows = rng.integers(0, vocab, size=200_000).astype(np.int64)
    weights = rng.random(rows.size)
    counts = rng.random(4000)
    pool_rows_idx = rng.integers(0, vocab, size=4000).astype(np.int64)
    vec = rng.standard_normal(dim)

    q_tokens = rng.standard_normal((8, dim))
    d_tokens = rng.standard_normal((120, dim))

    n_docs = 2000
    lengths = rng.integers(20, 60, size=n_docs)
    offsets = np.zeros(n_docs + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    all_tokens = rng.standard_normal((int(offsets[-1]), dim))

    def make(mod):
        target = np.zeros_like(table)
        return {
            "pool_rows (4k rows)": lambda: mod.pool_rows(table, pool_rows_idx, counts),
            "add_weighted_rows (200k rows)": lambda: mod.add_weighted_rows(
                target, rows, weights, vec
            ),
            "maxsim_pair (8x120 tokens)": lambda: mod.maxsim_pair(q_tokens, d_tokens),
            "maxsim_corpus (2k docs)": lambda: mod.maxsim_corpus(
                q_tokens, all_tokens, offsets, np.zeros(n_docs)
            ),
        }

    return make


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(7)
    make = _cases(rng)
    py_cases = make(_kernels_py)
    c_cases = make(_kernels) if _kernels is not None else None

    name_w = max(len(n) for n in py_cases)
    header = f"{'kernel'.ljust(name_w)}  {'python':>10}  {'compiled':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, py_fn in py_cases.items():
        t_py = _time(py_fn, args.repeats)
        if c_cases is not None:
            t_c = _time(c_cases[name], args.repeats)
            ratio = t_py / t_c if t_c > 0 else float("inf")
            print(
                f"{name.ljust(name_w)}  {t_py * 1e3:8.2f}ms  {t_c * 1e3:8.2f}ms"
                f"  {ratio:7.1f}x"
            )
        else:
            print(f"{name.ljust(name_w)}  {t_py * 1e3:8.2f}ms  {'n/a':>10}  {'n/a':>8}")
    if c_cases is None:
        print("\ncompiled extension not available; fallback times only")


if __name__ == "__main__":
    main()
