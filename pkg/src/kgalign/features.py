"""Character n-gram feature hashing.

Texts become sparse L2-normalized count vectors over a fixed bucket space.
The bucket function (FNV-1a 64-bit over UTF-32-LE bytes, modulo the feature
dimension) is part of the persistence contract: saved projection models and
pair scorers assume the same bucketing at load time, so it must never change
between releases. See kgalign.core for the kernel itself.

Texts shorter than the n-gram size yield a single n-gram equal to the whole
text, so every non-empty text has at least one feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core
from .errors import DimensionMismatchError, EmptyTextError

DEFAULT_NGRAM = 3
DEFAULT_FEATURE_DIM = 32768


@dataclass(frozen=True)
class FeatureVector:
    """Sparse unit-norm feature vector.

    indices are sorted unique bucket ids (int64); weights are the matching
    float64 values with unit L2 norm. dim is the bucket-space size.
    """

    dim: int
    indices: np.ndarray
    weights: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.weights, self.weights)))


def featurize(text: str, n: int = DEFAULT_NGRAM, dim: int = DEFAULT_FEATURE_DIM) -> FeatureVector:
    """Hash the character n-grams of text into a normalized sparse vector."""
    if n < 1:
        raise ValueError(f"n-gram size must be >= 1, got {n}")
    if dim < 1:
        raise ValueError(f"feature dimension must be >= 1, got {dim}")
    if not text:
        raise EmptyTextError("cannot featurize an empty text")
    n_eff = min(n, len(text))
    buckets = core.ngram_bucket_ids(text, n_eff, dim)
    indices, counts = np.unique(buckets, return_counts=True)
    weights = counts.astype(np.float64)
    weights /= np.sqrt(np.dot(weights, weights))
    return FeatureVector(dim=dim, indices=indices, weights=weights)


def dot(a: FeatureVector, b: FeatureVector) -> float:
    """Sparse dot product of two feature vectors in the same bucket space."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"feature dims differ: {a.dim} vs {b.dim}")
    common, ia, ib = np.intersect1d(a.indices, b.indices, assume_unique=True, return_indices=True)
    if common.shape[0] == 0:
        return 0.0
    return float(np.dot(a.weights[ia], b.weights[ib]))


def elementwise_product(a: FeatureVector, b: FeatureVector) -> FeatureVector:
    """Hadamard product in sparse form; support is the index intersection.

    Not renormalized: the result feeds interaction blocks where the raw
    product magnitude is the signal.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"feature dims differ: {a.dim} vs {b.dim}")
    common, ia, ib = np.intersect1d(a.indices, b.indices, assume_unique=True, return_indices=True)
    return FeatureVector(dim=a.dim, indices=common, weights=a.weights[ia] * b.weights[ib])


def to_dense(fv: FeatureVector) -> np.ndarray:
    out = np.zeros(fv.dim, dtype=np.float64)
    out[fv.indices] = fv.weights
    return out
