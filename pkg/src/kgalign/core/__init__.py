"""Numeric kernel dispatch.

Two interchangeable backends implement the hot kernels: a Cython extension
(_speedups) and a vectorized NumPy fallback (_pure). The compiled backend is
preferred when importable; setting the environment variable KGALIGN_PURE=1
forces the fallback.

ngram_bucket_ids, lsap_min and segment_scatter_add are bit-identical across
backends by contract and the test suite enforces that. segment_project sums
each segment in a backend-specific association order (the fallback delegates
to BLAS, the compiled loop sums sequentially), so its outputs agree to tight
float tolerance instead; trained-model artifacts are therefore
byte-reproducible per backend, and runs record which backend was active.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pure

_impl = _pure
KERNEL_BACKEND = "pure"

if os.environ.get("KGALIGN_PURE", "") != "1":
    try:
        from . import _speedups as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        KERNEL_BACKEND = "compiled"


def available_backends() -> tuple[str, ...]:
    try:
        from . import _speedups  # noqa: F401
    except ImportError:
        return ("pure",)
    return ("compiled", "pure")


def ngram_bucket_ids(text: str, n: int, dim: int) -> np.ndarray:
    """Bucket id per length-n code-point window of text, in order.

    Requires 1 <= n <= len(text) and dim >= 1; callers normalize shorter
    texts before reaching this.
    """
    return _impl.ngram_bucket_ids(text, n, dim)


def segment_project(
    weight: np.ndarray, idx: np.ndarray, wts: np.ndarray, starts: np.ndarray
) -> np.ndarray:
    """Weighted sums of weight rows per segment: out[j] = sum over segment j
    of wts[i] * weight[idx[i]]. See _pure.segment_project for the contract."""
    return _impl.segment_project(
        np.ascontiguousarray(weight, dtype=np.float64),
        np.ascontiguousarray(idx, dtype=np.int64),
        np.ascontiguousarray(wts, dtype=np.float64),
        np.ascontiguousarray(starts, dtype=np.int64),
    )


def segment_scatter_add(
    grad: np.ndarray, idx: np.ndarray, wts: np.ndarray, starts: np.ndarray, d_out: np.ndarray
) -> None:
    """In-place adjoint of segment_project: grad[idx[i]] += wts[i] * d_out[j]
    for i in segment j. grad must be float64 C-contiguous; indices must be
    unique within each segment."""
    _impl.segment_scatter_add(
        grad,
        np.ascontiguousarray(idx, dtype=np.int64),
        np.ascontiguousarray(wts, dtype=np.float64),
        np.ascontiguousarray(starts, dtype=np.int64),
        np.ascontiguousarray(d_out, dtype=np.float64),
    )


def linear_assignment(scores: np.ndarray, maximize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Optimal one-to-one assignment on a rectangular score matrix.

    Returns (row_indices, col_indices) of the matched pairs, sorted by row.
    Every row is matched when rows <= cols, every column otherwise. Entries
    must be finite; callers validate and raise their domain error first.
    """
    a = np.ascontiguousarray(np.asarray(scores, dtype=np.float64))
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError("linear_assignment requires a non-empty 2D matrix")
    if not np.isfinite(a).all():
        raise ValueError("linear_assignment requires finite entries")
    transposed = a.shape[0] > a.shape[1]
    work = np.ascontiguousarray(a.T) if transposed else a
    cost = np.ascontiguousarray(-work) if maximize else work
    col4row = np.asarray(_impl.lsap_min(cost), dtype=np.intp)
    rows = np.arange(work.shape[0], dtype=np.intp)
    if transposed:
        order = np.argsort(col4row, kind="stable")
        return col4row[order], rows[order]
    return rows, col4row
