"""Benchmark the JIT-compiled kernels against the interpreted fallback.

The kernels in ``fnpred.kernels`` are written once as plain-Python loop
nests (the ``*_impl`` functions) and wrapped by ``maybe_jit``.  This script
times both forms on realistic workloads, checks that they produce
bit-identical results, and prints a speedup table.

Run with ``python3 benchmarks/bench_kernels.py``.  Set ``FNPRED_NO_NUMBA=1``
to see the interpreted path only (the comparison is skipped).
"""

from __future__ import annotations

import time

import numpy as np

from fnpred._accel import NUMBA_ENV_FLAG, USING_NUMBA
from fnpred.kernels import (
    _bfs_limited_impl,
    _sgns_epoch_impl,
    _smith_waterman_score_impl,
    bfs_limited,
    encode_string,
    sgns_epoch,
    smith_waterman_score,
)

REPEATS = 5


def best_time(fn, make_args, repeats: int = REPEATS):
    """Best wall-clock time over ``repeats`` runs; args rebuilt per run."""
    best = float("inf")
    result = None
    for _ in range(repeats):
        args = make_args()
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result, args


def sw_workload():
    rng = np.random.default_rng(0)
    alphabet = "abcdefghijklmnopqrstuvwxyz_"
    pairs = []
    for _ in range(200):
        a = "".join(rng.choice(list(alphabet), size=int(rng.integers(40, 200))))
        b = "".join(rng.choice(list(alphabet), size=int(rng.integers(40, 200))))
        pairs.append((encode_string(a), encode_string(b)))

    def run_all(score_fn):
        return [score_fn(a, b) for a, b in pairs]

    return run_all


def sgns_workload():
    rng = np.random.default_rng(1)
    vocab, dim, n_pairs, n_neg = 800, 64, 20_000, 5
    comp_sizes = rng.integers(1, 5, size=n_pairs)
    comp_off = np.zeros(n_pairs + 1, dtype=np.int64)
    np.cumsum(comp_sizes, out=comp_off[1:])
    comp_flat = rng.integers(0, vocab, size=int(comp_off[-1])).astype(np.int64)
    ctx_rows = rng.integers(0, vocab, size=n_pairs).astype(np.int64)
    neg_rows = rng.integers(0, vocab, size=(n_pairs, n_neg)).astype(np.int64)
    vec_in0 = rng.normal(scale=0.1, size=(vocab, dim))
    vec_out0 = np.zeros((vocab, dim))

    def make_args():
        return comp_flat, comp_off, ctx_rows, neg_rows, vec_in0.copy(), vec_out0.copy(), 0.025

    return make_args


def bfs_workload():
    rng = np.random.default_rng(2)
    n, degree = 3000, 8
    heads = np.repeat(np.arange(n), degree)
    tails = rng.integers(0, n, size=n * degree)
    order = np.argsort(heads, kind="stable")
    indices = tails[order].astype(np.int64)
    indptr = np.arange(0, n * degree + 1, degree, dtype=np.int64)
    sources = rng.integers(0, n, size=500)

    def run_all(bfs_fn):
        dists = np.empty((len(sources), n), dtype=np.int64)
        for row, src in enumerate(sources):
            bfs_fn(indptr, indices, int(src), 3, dists[row])
        return dists

    return run_all


def main() -> None:
    print(f"numba active: {USING_NUMBA} (set {NUMBA_ENV_FLAG}=1 to force the fallback)")
    rows = []

    # Smith-Waterman: 200 alignments of 40-200 character strings.
    run_sw = sw_workload()
    if USING_NUMBA:
        run_sw(smith_waterman_score)  # warm-up triggers compilation
    t_jit, scores_jit, _ = best_time(lambda: run_sw(smith_waterman_score), tuple)
    t_py, scores_py, _ = best_time(lambda: run_sw(_smith_waterman_score_impl), tuple, repeats=2)
    assert scores_jit == scores_py, "Smith-Waterman paths disagree"
    rows.append(("smith_waterman_score (200 pairs)", t_py, t_jit))

    # Skip-gram epoch: 20k pairs, 800-row vocab, 64 dims, 5 negatives.
    make_sgns = sgns_workload()
    if USING_NUMBA:
        sgns_epoch(*make_sgns())
    t_jit, loss_jit, args_jit = best_time(sgns_epoch, make_sgns, repeats=3)
    t_py, loss_py, args_py = best_time(_sgns_epoch_impl, make_sgns, repeats=1)
    assert loss_jit == loss_py, "skip-gram losses disagree"
    assert np.array_equal(args_jit[4], args_py[4]), "skip-gram input vectors disagree"
    assert np.array_equal(args_jit[5], args_py[5]), "skip-gram output vectors disagree"
    rows.append(("sgns_epoch (20k pairs, dim 64)", t_py, t_jit))

    # Depth-limited BFS: 500 sources over a 3000-node, degree-8 graph.
    run_bfs = bfs_workload()
    if USING_NUMBA:
        run_bfs(bfs_limited)
    t_jit, d_jit, _ = best_time(lambda: run_bfs(bfs_limited), tuple)
    t_py, d_py, _ = best_time(lambda: run_bfs(_bfs_limited_impl), tuple, repeats=2)
    assert np.array_equal(d_jit, d_py), "BFS paths disagree"
    rows.append(("bfs_limited (500 sources, n=3000)", t_py, t_jit))

    width = max(len(r[0]) for r in rows)
    print(f"\n{'kernel / workload':<{width}}  interpreted   compiled   speedup")
    for name, t_py, t_jit in rows:
        speedup = t_py / t_jit if t_jit > 0 else float("inf")
        print(f"{name:<{width}}  {t_py:>9.4f}s  {t_jit:>8.4f}s  {speedup:>7.1f}x")
    if not USING_NUMBA:
        print("\nnumba is inactive, so both columns ran interpreted.")
    print("\nall kernels produced bit-identical results on both paths")


if __name__ == "__main__":
    main()
