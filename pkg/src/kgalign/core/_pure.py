"""Pure NumPy kernel implementations.

These are the fallback twins of the compiled kernels in _speedups.pyx. Both
implementations must produce bit-identical outputs; the test suite asserts
this whenever the compiled module is importable.

Hash contract (shared by both backends, relied on by persisted models):
FNV-1a 64-bit over the UTF-32-LE bytes of each n-gram, bucket = hash mod dim.
The UTF-32-LE encoding makes the byte stream a pure function of the code
points, independent of how Python stores the string internally.
"""

from __future__ import annotations

import numpy as np

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)
_BYTE_MASK = np.uint64(0xFF)
_SHIFTS = tuple(np.uint64(s) for s in (0, 8, 16, 24))


def ngram_bucket_ids(text: str, n: int, dim: int) -> np.ndarray:
    """Bucket ids of all length-n code-point windows, in text order.

    Caller guarantees 1 <= n <= len(text) and dim >= 1. The multiply is
    evaluated on uint64 arrays, where NumPy wraps silently with C semantics,
    which is exactly the FNV reduction.
    """
    cps = np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)
    num = cps.shape[0] - n + 1
    h = np.full(num, _FNV_OFFSET, dtype=np.uint64)
    for j in range(n):
        col = cps[j : j + num].astype(np.uint64)
        for shift in _SHIFTS:
            b = (col >> shift) & _BYTE_MASK
            h = (h ^ b) * _FNV_PRIME
    return (h % np.uint64(dim)).astype(np.int64)


def segment_project(
    weight: np.ndarray, idx: np.ndarray, wts: np.ndarray, starts: np.ndarray
) -> np.ndarray:
    """Per-segment weighted sums of weight rows.

    out[j] = sum of wts[i] * weight[idx[i]] over starts[j] <= i < starts[j+1].
    weight is (F, d) float64 C-contiguous, idx/wts are the concatenated sparse
    coordinates, starts has m+1 ascending entries with starts[0] == 0 and
    starts[m] == len(idx). Empty segments yield zero rows.

    Summation order is backend-specific here (BLAS picks its own association
    per segment, the compiled twin sums sequentially), so outputs agree to
    float tolerance rather than bitwise; see the dispatch module docstring.
    """
    m = starts.shape[0] - 1
    out = np.zeros((m, weight.shape[1]), dtype=np.float64)
    for j in range(m):
        s = int(starts[j])
        e = int(starts[j + 1])
        if s == e:
            continue
        out[j] = wts[s:e] @ weight[idx[s:e]]
    return out


def segment_scatter_add(
    grad: np.ndarray, idx: np.ndarray, wts: np.ndarray, starts: np.ndarray, d_out: np.ndarray
) -> None:
    """Accumulate the adjoint of segment_project into grad, in place.

    grad[idx[i]] += wts[i] * d_out[j] for each i in segment j. Indices must be
    unique within a segment (repeats across segments are fine): each grad row
    then receives at most one add per segment, making the result independent
    of summation order and bitwise equal across backends.
    """
    m = starts.shape[0] - 1
    for j in range(m):
        s = int(starts[j])
        e = int(starts[j + 1])
        if s == e:
            continue
        grad[idx[s:e]] += wts[s:e, None] * d_out[j]


def lsap_min(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost rectangular assignment, shortest-augmenting-path form.

    cost must be a C-contiguous float64 array with shape (n, m), n <= m, all
    entries finite. Returns col4row: for each row, the matched column index.

    The inner Dijkstra scan is vectorized over columns. Scalar update order
    mirrors the compiled twin expression for expression so both backends walk
    identical float trajectories, ties included.
    """
    n, m = cost.shape
    u = np.zeros(n, dtype=np.float64)
    v = np.zeros(m, dtype=np.float64)
    col4row = np.full(n, -1, dtype=np.intp)
    row4col = np.full(m, -1, dtype=np.intp)

    for cur_row in range(n):
        shortest = np.full(m, np.inf, dtype=np.float64)
        path = np.full(m, -1, dtype=np.intp)
        on_tree_col = np.zeros(m, dtype=bool)
        visited_rows = [cur_row]
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            r = ((min_val + cost[i]) - u[i]) - v
            better = (~on_tree_col) & (r < shortest)
            shortest[better] = r[better]
            path[better] = i
            masked = np.where(on_tree_col, np.inf, shortest)
            # Tie rule shared with the compiled twin: smallest value, prefer an
            # unmatched column, then the lowest column index.
            cur_min = masked.min()
            if not np.isfinite(cur_min):
                raise RuntimeError("assignment problem is infeasible")
            tie = masked == cur_min
            unmatched_tie = tie & (row4col < 0)
            if unmatched_tie.any():
                j = int(np.argmax(unmatched_tie))
            else:
                j = int(np.argmax(tie))
            min_val = float(cur_min)
            on_tree_col[j] = True
            if row4col[j] == -1:
                sink = j
            else:
                i = int(row4col[j])
                visited_rows.append(i)

        u[cur_row] = u[cur_row] + min_val
        for rr in visited_rows[1:]:
            u[rr] = u[rr] + (min_val - shortest[col4row[rr]])
        tree = np.flatnonzero(on_tree_col)
        v[tree] = v[tree] - (min_val - shortest[tree])

        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            nxt = col4row[i]
            col4row[i] = j
            if i == cur_row:
                break
            j = int(nxt)

    return col4row.astype(np.intp)
