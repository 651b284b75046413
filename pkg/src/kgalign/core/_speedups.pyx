# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel implementations.

Twin of _pure.py; both must produce bit-identical outputs. See _pure.py for
the hash and solver contracts. Scalar expressions here are written in the
same association order as the vectorized NumPy forms so float trajectories
match exactly.
"""

import numpy as np

cdef unsigned long long FNV_OFFSET = 0xCBF29CE484222325ULL
cdef unsigned long long FNV_PRIME = 0x100000001B3ULL


def ngram_bucket_ids(str text, Py_ssize_t n, long long dim):
    cdef bytes raw = text.encode("utf-32-le")
    cdef const unsigned char[::1] buf = raw
    cdef Py_ssize_t n_cp = len(raw) // 4
    cdef Py_ssize_t num = n_cp - n + 1
    out = np.empty(num, dtype=np.int64)
    cdef long long[::1] o = out
    cdef unsigned long long h
    cdef unsigned long long udim = <unsigned long long> dim
    cdef Py_ssize_t i, j, span = 4 * n
    for i in range(num):
        h = FNV_OFFSET
        for j in range(span):
            h = (h ^ buf[4 * i + j]) * FNV_PRIME
        o[i] = <long long> (h % udim)
    return out


def segment_project(double[:, ::1] weight, long long[::1] idx, double[::1] wts, long long[::1] starts):
    cdef Py_ssize_t m = starts.shape[0] - 1
    cdef Py_ssize_t d = weight.shape[1]
    out = np.zeros((m, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, c, row
    cdef double w
    for j in range(m):
        for i in range(starts[j], starts[j + 1]):
            row = idx[i]
            w = wts[i]
            for c in range(d):
                o[j, c] += w * weight[row, c]
    return out


def segment_scatter_add(double[:, ::1] grad, long long[::1] idx, double[::1] wts, long long[::1] starts, double[:, ::1] d_out):
    cdef Py_ssize_t m = starts.shape[0] - 1
    cdef Py_ssize_t d = grad.shape[1]
    cdef Py_ssize_t i, j, c, row
    cdef double w
    for j in range(m):
        for i in range(starts[j], starts[j + 1]):
            row = idx[i]
            w = wts[i]
            for c in range(d):
                grad[row, c] += w * d_out[j, c]


def lsap_min(double[:, ::1] cost):
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    u_arr = np.zeros(n, dtype=np.float64)
    v_arr = np.zeros(m, dtype=np.float64)
    col4row_arr = np.full(n, -1, dtype=np.intp)
    row4col_arr = np.full(m, -1, dtype=np.intp)
    shortest_arr = np.empty(m, dtype=np.float64)
    path_arr = np.empty(m, dtype=np.intp)
    on_tree_arr = np.empty(m, dtype=np.uint8)
    visited_arr = np.empty(n, dtype=np.intp)

    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef Py_ssize_t[::1] col4row = col4row_arr
    cdef Py_ssize_t[::1] row4col = row4col_arr
    cdef double[::1] shortest = shortest_arr
    cdef Py_ssize_t[::1] path = path_arr
    cdef unsigned char[::1] on_tree = on_tree_arr
    cdef Py_ssize_t[::1] visited = visited_arr

    cdef Py_ssize_t cur_row, i, j, sink, n_visited, rr, nxt, best_j, best_unmatched
    cdef double min_val, r, cur_min
    cdef double inf = float("inf")

    for cur_row in range(n):
        for j in range(m):
            shortest[j] = inf
            path[j] = -1
            on_tree[j] = 0
        visited[0] = cur_row
        n_visited = 1
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            for j in range(m):
                if not on_tree[j]:
                    r = ((min_val + cost[i, j]) - u[i]) - v[j]
                    if r < shortest[j]:
                        shortest[j] = r
                        path[j] = i
            cur_min = inf
            for j in range(m):
                if not on_tree[j] and shortest[j] < cur_min:
                    cur_min = shortest[j]
            if cur_min == inf:
                raise RuntimeError("assignment problem is infeasible")
            best_j = -1
            best_unmatched = -1
            for j in range(m):
                if not on_tree[j] and shortest[j] == cur_min:
                    if best_j == -1:
                        best_j = j
                    if best_unmatched == -1 and row4col[j] == -1:
                        best_unmatched = j
            j = best_unmatched if best_unmatched != -1 else best_j
            min_val = cur_min
            on_tree[j] = 1
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
                visited[n_visited] = i
                n_visited += 1

        u[cur_row] = u[cur_row] + min_val
        for rr in range(1, n_visited):
            i = visited[rr]
            u[i] = u[i] + (min_val - shortest[col4row[i]])
        for j in range(m):
            if on_tree[j]:
                v[j] = v[j] - (min_val - shortest[j])

        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            nxt = col4row[i]
            col4row[i] = j
            if i == cur_row:
                break
            j = nxt

    return col4row_arr
