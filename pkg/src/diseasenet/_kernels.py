"""Compiled tallying loops.

Both kernels take flattened C-contiguous code arrays; numba emits markedly
slower code for per-row 2-D views here, so callers ravel before the call.
"""

from __future__ import annotations

import numba
import numpy as np


def clogc_table(n: int) -> np.ndarray:
    """c * log2(c) for c = 0..n, with 0 log 0 = 0."""
    c = np.arange(n + 1, dtype=np.float64)
    out = np.zeros(n + 1, dtype=np.float64)
    out[2:] = c[2:] * np.log2(c[2:])
    return out


@numba.njit(cache=True, nogil=True)
def _joint_stats(rows, n_rows_r, kx, fixed, ky, n, table, out):
    # out[r * K + k] = sum over cells of c*log2(c) for the table rows[r] x fixed[k]
    K = ky.shape[0]
    max_ky = 1
    for k in range(K):
        if ky[k] > max_ky:
            max_ky = ky[k]
    counts = np.zeros(kx * max_ky, dtype=np.int32)
    for k in range(K):
        s = ky[k]
        cells = kx * s
        fo = k * n
        for r in range(n_rows_r):
            ro = r * n
            for c in range(cells):
                counts[c] = 0
            for t in range(n):
                counts[rows[ro + t] * s + fixed[fo + t]] += 1
            acc = 0.0
            for c in range(cells):
                acc += table[counts[c]]
            out[r * K + k] = acc


@numba.njit(cache=True, nogil=True)
def _all_pairs_stats(cols, levels, n, table, out):
    # out[i, j] (i < j) = sum of c*log2(c) over the joint table of columns i and j
    V = levels.shape[0]
    max_l = 1
    for v in range(V):
        if levels[v] > max_l:
            max_l = levels[v]
    counts = np.zeros(max_l * max_l, dtype=np.int32)
    for i in range(V):
        io = i * n
        for j in range(i + 1, V):
            s = levels[j]
            cells = levels[i] * s
            jo = j * n
            for c in range(cells):
                counts[c] = 0
            for t in range(n):
                counts[cols[io + t] * s + cols[jo + t]] += 1
            acc = 0.0
            for c in range(cells):
                acc += table[counts[c]]
            out[i, j] = acc
            out[j, i] = acc


def joint_clogc(rows: np.ndarray, kx: int, fixed: np.ndarray, ky: np.ndarray) -> np.ndarray:
    """Sum of c*log2(c) over the joint table of every (row, fixed column) pair.

    rows: (R, n) codes in range(kx); fixed: (K, n) codes, row k in range(ky[k]).
    Returns an (R, K) array.
    """
    rows = np.ascontiguousarray(rows, dtype=np.int32)
    fixed = np.ascontiguousarray(fixed, dtype=np.int32)
    ky = np.ascontiguousarray(ky, dtype=np.int64)
    R, n = rows.shape
    K = fixed.shape[0]
    out = np.empty(R * K, dtype=np.float64)
    if R and K:
        _joint_stats(rows.ravel(), R, int(kx), fixed.ravel(), ky, n, clogc_table(n), out)
    return out.reshape(R, K)


def all_pairs_clogc(cols: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Symmetric (V, V) matrix of joint c*log2(c) sums; cols has shape (V, n).

    The diagonal is left at zero.
    """
    cols = np.ascontiguousarray(cols, dtype=np.int32)
    levels = np.ascontiguousarray(levels, dtype=np.int64)
    V, n = cols.shape
    out = np.zeros((V, V), dtype=np.float64)
    if V > 1:
        _all_pairs_stats(cols.ravel(), levels, n, clogc_table(n), out)
    return out
