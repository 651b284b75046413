"""Text embedding providers and the trainable projection embedder.

Three providers share one surface, embed_batch(texts) -> (n, d) float32:

  * HashingProvider: seeded random projection of hashed n-gram features.
    Training-free; identical configs embed identical texts identically.
  * ProjectionProvider: a trainable linear map over the same hashed
    features, fit with a softmax contrastive objective against mined
    negatives (see contrastive_loss).
  * services.EmbeddingClient: an external embedding service; it already
    exposes embed_batch and plugs in anywhere a provider is accepted.

Similarity is the plain dot product everywhere; with normalize=True (the
default for built-in providers) scores are cosines in [-1, 1].

The contrastive objective for an anchor a with positive p and negatives N:
    L = -log( exp(s(a,p)/tau) / (exp(s(a,p)/tau) + sum_n exp(s(a,n)/tau)) )
tau=1 gives the plain softmax form; tau is exposed as a knob. With no
negatives the loss is exactly 0. Gradients are computed analytically in
float64, including the normalization backprop, and are verified against
central finite differences in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import segment_project, segment_scatter_add
from .errors import (
    DimensionMismatchError,
    EmptyTrainingSetError,
    InputError,
    NonFiniteLossError,
)
from .features import DEFAULT_FEATURE_DIM, DEFAULT_NGRAM, FeatureVector, featurize
from .util import atomic_write_bytes

DEFAULT_EMBED_DIM = 256
DEFAULT_TAU = 0.05
DEFAULT_TRAIN_EPOCHS = 6
DEFAULT_TRAIN_LR = 0.01


@dataclass(frozen=True)
class EmbeddingVector:
    entity_id: str
    values: np.ndarray  # float32, shape (d,)


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Ordered entity ids with their embeddings, the unit of persistence."""

    ids: tuple[str, ...]
    vectors: np.ndarray  # float32, shape (n, d)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def row_of(self, entity_id: str) -> int:
        # Built lazily and cached on first use.
        index = self.__dict__.get("_row_index")
        if index is None:
            index = {eid: i for i, eid in enumerate(self.ids)}
            self.__dict__["_row_index"] = index
        row = index.get(entity_id)
        if row is None:
            raise KeyError(entity_id)
        return row


def similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Dot-product similarity of two embedding vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"embedding shapes differ: {u.shape} vs {v.shape}")
    return float(np.dot(u, v))


# ---------------------------------------------------------------------------
# Providers


class HashingProvider:
    """Seeded Gaussian projection of hashed character n-gram features.

    Deterministic: the projection is a pure function of (seed, dim,
    feature_dim), so equal configs embed equal texts to equal vectors.
    """

    def __init__(
        self,
        dim: int = DEFAULT_EMBED_DIM,
        feature_dim: int = DEFAULT_FEATURE_DIM,
        ngram: int = DEFAULT_NGRAM,
        normalize: bool = True,
        seed: int = 0,
    ) -> None:
        self.dim = int(dim)
        self.feature_dim = int(feature_dim)
        self.ngram = int(ngram)
        self.normalize = bool(normalize)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        scale = 1.0 / np.sqrt(self.dim)
        self._projection = (rng.standard_normal((self.feature_dim, self.dim)) * scale).astype(np.float32)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            fv = featurize(text, self.ngram, self.feature_dim)
            y = fv.weights @ self._projection[fv.indices].astype(np.float64)
            if self.normalize:
                norm = np.sqrt(np.dot(y, y))
                if norm > 0.0:
                    y = y / norm
            out[i] = y.astype(np.float32)
        return out


@dataclass(frozen=True)
class ProjectionModel:
    """Linear map from hashed features to embedding space.

    weight is float64 and feature-major in memory, shape (feature_dim, d),
    so a feature vector projects by gathering contiguous rows; persistence
    stores the transposed (d, feature_dim) row-major float32 layout. tau
    scales the contrastive logits during training; normalize controls L2
    normalization of outputs. seed records the init seed; it is runtime
    state only and not part of the persisted layout.
    """

    weight: np.ndarray
    tau: float = DEFAULT_TAU
    normalize: bool = True
    seed: int = 0

    @property
    def dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def feature_dim(self) -> int:
        return int(self.weight.shape[0])


def init_projection(
    dim: int = DEFAULT_EMBED_DIM,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    *,
    tau: float | None = None,
    normalize: bool = True,
    seed: int = 0,
) -> ProjectionModel:
    """Uniform init in [-1/sqrt(feature_dim), +1/sqrt(feature_dim)].

    tau defaults to 0.05 when outputs are normalized (cosine logits need
    sharpening) and 1.0 otherwise.
    """
    if tau is None:
        tau = DEFAULT_TAU if normalize else 1.0
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(feature_dim)
    weight = rng.uniform(-bound, bound, size=(feature_dim, dim)).astype(np.float64)
    return ProjectionModel(weight=weight, tau=float(tau), normalize=bool(normalize), seed=int(seed))


def project(model: ProjectionModel, fv: FeatureVector) -> np.ndarray:
    """Embed one feature vector (float64). Zero vectors stay zero instead of
    dividing by zero when normalization is on."""
    if fv.dim != model.feature_dim:
        raise DimensionMismatchError(f"feature dim {fv.dim} does not match model feature dim {model.feature_dim}")
    y = fv.weights @ model.weight[fv.indices]
    if model.normalize:
        norm = np.sqrt(np.dot(y, y))
        if norm > 0.0:
            y = y / norm
    return y


def _pack(fvs: Sequence[FeatureVector]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate feature vectors into (idx, wts, starts) segment form."""
    starts = np.zeros(len(fvs) + 1, dtype=np.int64)
    np.cumsum([len(fv.indices) for fv in fvs], out=starts[1:])
    if fvs:
        idx = np.concatenate([fv.indices for fv in fvs])
        wts = np.concatenate([fv.weights for fv in fvs])
    else:
        idx = np.zeros(0, dtype=np.int64)
        wts = np.zeros(0, dtype=np.float64)
    return idx, wts, starts


def project_many(model: ProjectionModel, fvs: Sequence[FeatureVector]) -> np.ndarray:
    """Embed a batch of feature vectors into a float64 (n, d) matrix."""
    for fv in fvs:
        if fv.dim != model.feature_dim:
            raise DimensionMismatchError(f"feature dim {fv.dim} does not match model feature dim {model.feature_dim}")
    raw = segment_project(model.weight, *_pack(fvs))
    if model.normalize:
        norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
        raw /= np.where(norms > 0.0, norms, 1.0)[:, None]
    return raw


class ProjectionProvider:
    """Provider wrapper around a ProjectionModel plus featurizer config."""

    def __init__(self, model: ProjectionModel, ngram: int = DEFAULT_NGRAM) -> None:
        self.model = model
        self.ngram = int(ngram)
        self.dim = model.dim
        self.normalize = model.normalize

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        fvs = [featurize(text, self.ngram, self.model.feature_dim) for text in texts]
        return project_many(self.model, fvs).astype(np.float32)


def embed_batch(provider, texts: Sequence[str], ids: Sequence[str] | None = None) -> list[EmbeddingVector]:
    """Order-preserving batch embedding returning tagged vectors."""
    arr = np.asarray(provider.embed_batch(list(texts)), dtype=np.float32)
    if ids is None:
        ids = [str(i) for i in range(len(texts))]
    if len(ids) != arr.shape[0]:
        raise DimensionMismatchError(f"{len(ids)} ids for {arr.shape[0]} embeddings")
    return [EmbeddingVector(entity_id=eid, values=arr[i]) for i, eid in enumerate(ids)]


def build_matrix(provider, ids: Sequence[str], texts: Sequence[str]) -> EmbeddingMatrix:
    if len(ids) != len(texts):
        raise DimensionMismatchError(f"{len(ids)} ids for {len(texts)} texts")
    vectors = np.asarray(provider.embed_batch(list(texts)), dtype=np.float32)
    return EmbeddingMatrix(ids=tuple(ids), vectors=vectors)


# ---------------------------------------------------------------------------
# Contrastive loss


def softmax_contrastive(pos_logit: float, neg_logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and gradient at the logit level.

    Returns (loss, g) where g has length 1 + len(neg_logits) and is the
    gradient of the loss w.r.t. [pos_logit, *neg_logits]; g = softmax(z) - e0.
    Shared by the embedder objective and the reranker objective, which differ
    only in how the logits are produced.
    """
    z = np.concatenate(([float(pos_logit)], np.asarray(neg_logits, dtype=np.float64)))
    m = float(np.max(z))
    exps = np.exp(z - m)
    total = float(np.sum(exps))
    loss = -(z[0] - m - np.log(total))
    g = exps / total
    g[0] -= 1.0
    return float(loss), g


def contrastive_loss(
    model: ProjectionModel,
    anchor: FeatureVector,
    positive: FeatureVector,
    negatives: Sequence[FeatureVector],
    grad_out: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Loss and analytic gradient w.r.t. the projection weight.

    With an empty negative set the loss and gradient are exactly zero. When
    grad_out is given, gradients are accumulated into it (sparse row updates)
    and the same array is returned. The whole example, anchor plus positive
    plus negatives, runs through the segment kernels as one packed batch.
    """
    if grad_out is None:
        grad_out = np.zeros_like(model.weight)
    fvs = (anchor, positive, *negatives)
    for fv in fvs:
        if fv.dim != model.feature_dim:
            raise DimensionMismatchError(f"feature dim {fv.dim} does not match model feature dim {model.feature_dim}")
    idx, wts, starts = _pack(fvs)
    raw = segment_project(model.weight, idx, wts, starts)
    if model.normalize:
        norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
        safe = np.where(norms > 0.0, norms, 1.0)
        units = raw / safe[:, None]
    else:
        units = raw
    a_hat = units[0]
    logits = (units[1:] @ a_hat) / model.tau
    loss, g = softmax_contrastive(logits[0], logits[1:])
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"contrastive loss is not finite: {loss}")

    gk = g * (1.0 / model.tau)
    # Candidate k feels gk[k] * a_hat; the anchor accumulates gk[k] * units[k].
    d_units = np.empty_like(units)
    d_units[0] = gk @ units[1:]
    d_units[1:] = gk[:, None] * a_hat[None, :]
    if model.normalize:
        # Unit-vector backprop; zero-norm rows pass gradients through as-is
        # because their unit row is the zero vector and safe norm is 1.
        d_raw = (d_units - np.einsum("ij,ij->i", units, d_units)[:, None] * units) / safe[:, None]
    else:
        d_raw = d_units
    segment_scatter_add(grad_out, idx, wts, starts, d_raw)
    return loss, grad_out


@dataclass(frozen=True)
class ValRetrievalTask:
    """Validation ranking task for model selection during training: each
    source feature vector must retrieve its gold target (by index into
    target_fvs) from the full target pool."""

    source_fvs: tuple[FeatureVector, ...]
    gold_indices: tuple[int, ...]
    target_fvs: tuple[FeatureVector, ...]


def _val_mrr(model: ProjectionModel, task: ValRetrievalTask) -> float:
    targets = project_many(model, task.target_fvs)
    sources = project_many(model, task.source_fvs)
    scores = sources @ targets.T
    gold = np.asarray(task.gold_indices, dtype=np.intp)
    gold_scores = scores[np.arange(scores.shape[0]), gold]
    ranks = 1 + np.sum(scores > gold_scores[:, None], axis=1)
    return float(np.sum(1.0 / ranks)) / max(1, len(task.source_fvs))


@dataclass(frozen=True)
class TrainProjectionResult:
    model: ProjectionModel
    loss_curve: tuple[float, ...]
    val_curve: tuple[float, ...]
    best_epoch: int  # -1 when no validation task was given


def train_projection(
    model: ProjectionModel,
    pairs: Sequence[tuple[FeatureVector, FeatureVector]],
    negatives: Sequence[Sequence[FeatureVector]],
    *,
    epochs: int = DEFAULT_TRAIN_EPOCHS,
    lr: float = DEFAULT_TRAIN_LR,
    batch_size: int = 32,
    seed: int = 0,
    val_task: ValRetrievalTask | None = None,
) -> TrainProjectionResult:
    """Mini-batch SGD on the contrastive objective over (anchor, positive)
    pairs with per-pair negative lists.

    Deterministic for fixed inputs and seed. With a validation task, the
    returned model is the epoch snapshot with the best validation MRR
    (ties keep the earlier epoch); otherwise the final weights. Zero epochs
    return the model unchanged with empty curves.
    """
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if len(pairs) != len(negatives):
        raise EmptyTrainingSetError(f"{len(pairs)} pairs but {len(negatives)} negative lists")
    if epochs > 0 and len(pairs) == 0:
        raise EmptyTrainingSetError("no training pairs")
    weight = model.weight.astype(np.float64, copy=True)
    cur = replace(model, weight=weight)
    rng = np.random.default_rng(seed)
    loss_curve: list[float] = []
    val_curve: list[float] = []
    best_epoch = -1
    best_mrr = -np.inf
    best_weight = None

    grad = np.zeros_like(weight)
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            grad[...] = 0.0
            batch_loss = 0.0
            for idx in batch:
                anchor, positive = pairs[int(idx)]
                loss, _ = contrastive_loss(cur, anchor, positive, negatives[int(idx)], grad_out=grad)
                batch_loss += loss
            if not np.isfinite(batch_loss):
                raise NonFiniteLossError(f"batch loss is not finite at epoch {epoch}")
            weight -= (lr / len(batch)) * grad
            epoch_loss += batch_loss
        loss_curve.append(epoch_loss / len(pairs))
        if val_task is not None:
            mrr = _val_mrr(cur, val_task)
            val_curve.append(mrr)
            if mrr > best_mrr:
                best_mrr = mrr
                best_epoch = epoch
                best_weight = weight.copy()

    if val_task is not None and best_weight is not None:
        final = replace(model, weight=best_weight)
    else:
        final = replace(model, weight=weight)
    return TrainProjectionResult(
        model=final,
        loss_curve=tuple(loss_curve),
        val_curve=tuple(val_curve),
        best_epoch=best_epoch,
    )


# ---------------------------------------------------------------------------
# Persistence

_PROJ_MAGIC = b"KGPM"
_PROJ_VERSION = 1
_EMB_MAGIC = b"KGEM"
_EMB_VERSION = 1


def save_projection(model: ProjectionModel, path: str | Path) -> None:
    """Binary layout: magic, version u32, d u32, feature_dim u32, tau f64,
    normalize u8, then the weight matrix row-major float32, all little-endian."""
    header = struct.pack(
        "<4sIIIdB",
        _PROJ_MAGIC,
        _PROJ_VERSION,
        model.dim,
        model.feature_dim,
        float(model.tau),
        1 if model.normalize else 0,
    )
    # The file keeps the (d, feature_dim) row-major layout; memory is
    # feature-major, so the boundary transposes.
    body = np.ascontiguousarray(model.weight.T, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + body)


def load_projection(path: str | Path) -> ProjectionModel:
    data = Path(path).read_bytes()
    head_size = struct.calcsize("<4sIIIdB")
    if len(data) < head_size:
        raise InputError(f"{path}: truncated projection model file")
    magic, version, dim, feature_dim, tau, normalize = struct.unpack("<4sIIIdB", data[:head_size])
    if magic != _PROJ_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}, not a projection model file")
    if version != _PROJ_VERSION:
        raise InputError(f"{path}: unsupported projection model version {version}")
    expected = dim * feature_dim * 4
    if len(data) != head_size + expected:
        raise InputError(f"{path}: expected {expected} weight bytes, found {len(data) - head_size}")
    stored = np.frombuffer(data, dtype="<f4", offset=head_size).reshape(dim, feature_dim)
    weight = np.ascontiguousarray(stored.T, dtype=np.float64)
    return ProjectionModel(weight=weight, tau=float(tau), normalize=bool(normalize))


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Binary layout: magic, version u32, d u32, count u32, id table (u32
    byte length + UTF-8 bytes per id), then row-major float32 vectors."""
    parts = [struct.pack("<4sIII", _EMB_MAGIC, _EMB_VERSION, matrix.dim, len(matrix))]
    for eid in matrix.ids:
        raw = eid.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(matrix.vectors, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    data = Path(path).read_bytes()
    head_size = struct.calcsize("<4sIII")
    if len(data) < head_size:
        raise InputError(f"{path}: truncated embedding file")
    magic, version, dim, count = struct.unpack("<4sIII", data[:head_size])
    if magic != _EMB_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}, not an embedding file")
    if version != _EMB_VERSION:
        raise InputError(f"{path}: unsupported embedding file version {version}")
    offset = head_size
    ids: list[str] = []
    for _ in range(count):
        (length,) = struct.unpack_from("<I", data, offset)
        offset += 4
        ids.append(data[offset : offset + length].decode("utf-8"))
        offset += length
    expected = count * dim * 4
    if len(data) - offset != expected:
        raise InputError(f"{path}: expected {expected} vector bytes, found {len(data) - offset}")
    vectors = np.frombuffer(data, dtype="<f4", offset=offset).reshape(count, dim).copy()
    return EmbeddingMatrix(ids=tuple(ids), vectors=vectors)
