"""Candidate reranking with an interaction-aware pair scorer.

The trainable scorer is a two-layer feedforward network over the feature
blocks [feat(u); feat(v); feat(u) * feat(v)]: the elementwise-product block
carries the pairwise interaction signal. Hidden width 128, softplus
nonlinearity, scalar output delta(u, v). An external HTTP scorer (POST
/score) is a drop-in alternative; both expose score_texts(pairs).

Training minimizes the same softmax-contrastive objective as the embedder,
with delta values as logits: per training pair, the gold target competes
against negatives sampled from the source's retrieved candidates. Model
selection keeps the epoch with the best validation Hits@1.

rerank() only permutes candidate sets, never adds or removes members, and
caps every text at MAX_TEXT_CHARS characters before scoring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
import struct
from typing import Mapping, Sequence

import numpy as np

from .core import segment_project, segment_scatter_add
from .embed import softmax_contrastive
from .errors import (
    EmptyTextError,
    EmptyTrainingSetError,
    InputError,
    MissingTextError,
    NonFiniteLossError,
    NonFiniteScoreError,
)
from .features import FeatureVector, elementwise_product, featurize
from .retrieval import CandidateSet
from .services import PairScoreClient
from .util import atomic_write_bytes, stable_seed

LOGGER = logging.getLogger(__name__)

DEFAULT_HIDDEN = 128
DEFAULT_RERANK_FEATURE_DIM = 8192
DEFAULT_N_NEG = 110
DEFAULT_OVERLAP_GAIN = 4.0
DEFAULT_EXPLORATION = 0.1
MAX_TEXT_CHARS = 512


def clip_text(text: str) -> str:
    return text[:MAX_TEXT_CHARS]


@dataclass(frozen=True)
class MlpPairScorer:
    """Feedforward pair scorer delta(u, v) = w2 . softplus(W1 x + b1) + b2
    with x the 3 * feature_dim stacked feature blocks.

    symmetrize averages delta(u, v) and delta(v, u); off by default since
    the pair is ordered. seed records the init seed (runtime state only).
    """

    w1: np.ndarray  # (3 * feature_dim, hidden) float64, feature-major for row gathers
    b1: np.ndarray  # (hidden,) float64
    w2: np.ndarray  # (hidden,) float64
    b2: float
    feature_dim: int
    ngram: int = 3
    symmetrize: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        hidden = self.w1.shape[1] if self.w1.ndim == 2 else -1
        if self.w1.shape != (3 * self.feature_dim, hidden):
            raise InputError(f"w1 shape {self.w1.shape} does not match 3 * feature_dim = {3 * self.feature_dim}")
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise InputError(f"layer shapes disagree: w1 {self.w1.shape}, b1 {self.b1.shape}, w2 {self.w2.shape}")
        for name, arr in (("w1", self.w1), ("b1", self.b1), ("w2", self.w2)):
            if not np.isfinite(arr).all():
                raise InputError(f"scorer weights ({name}) contain non-finite values")
        if not np.isfinite(self.b2):
            raise InputError("scorer bias b2 is not finite")

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[1])

    def featurize_text(self, text: str) -> FeatureVector:
        return featurize(clip_text(text), n=self.ngram, dim=self.feature_dim)

    def score_texts(self, pairs: Sequence[tuple[str, str]]) -> np.ndarray:
        cache: dict[str, FeatureVector] = {}

        def fv(text: str) -> FeatureVector:
            got = cache.get(text)
            if got is None:
                got = self.featurize_text(text)
                cache[text] = got
            return got

        return score_features_many(self, [(fv(tu), fv(tv)) for tu, tv in pairs])


def init_mlp_scorer(
    feature_dim: int = DEFAULT_RERANK_FEATURE_DIM,
    hidden: int = DEFAULT_HIDDEN,
    ngram: int = 3,
    symmetrize: bool = False,
    seed: int = 0,
    *,
    overlap_gain: float = DEFAULT_OVERLAP_GAIN,
    exploration: float = DEFAULT_EXPLORATION,
) -> MlpPairScorer:
    """Warm-start init, biases zero; deterministic in seed.

    Both feature blocks are unit norm, so the product block's weight sum is
    exactly the n-gram cosine of the pair. The first hidden unit is set to a
    uniform readout of that block (gain overlap_gain into w1, the same gain
    into w2); softplus is monotone, so the fresh scorer already ranks
    candidates by token overlap rather than by noise, and plugging it on top
    of a retriever starts from the overlap heuristic instead of degrading it.
    The remaining units carry uniform random weights damped by exploration;
    training grows them into corrections. Their limit is scaled by the block
    count, not the nominal 3 * feature_dim fan-in: a dimension-scaled limit
    would leave pre-activations near zero, where softplus is effectively
    constant and training stalls on wide feature spaces. exploration=0 makes
    the init score an exact monotone function of the pair cosine.
    """
    if feature_dim < 1 or hidden < 1:
        raise InputError(f"feature_dim and hidden must be >= 1, got {feature_dim}, {hidden}")
    if exploration < 0:
        raise InputError(f"exploration must be >= 0, got {exploration}")
    rng = np.random.default_rng(seed)
    lim1 = exploration / np.sqrt(3.0)
    lim2 = exploration / np.sqrt(hidden)
    w1 = rng.uniform(-lim1, lim1, size=(3 * feature_dim, hidden))
    w2 = rng.uniform(-lim2, lim2, size=hidden)
    w1[:, 0] = 0.0
    w1[2 * feature_dim :, 0] = overlap_gain
    w2[0] = overlap_gain
    return MlpPairScorer(
        w1=w1,
        b1=np.zeros(hidden, dtype=np.float64),
        w2=w2,
        b2=0.0,
        feature_dim=feature_dim,
        ngram=ngram,
        symmetrize=symmetrize,
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# Forward / backward


def _blocks(scorer: MlpPairScorer, fu: FeatureVector, fv: FeatureVector) -> list[tuple[np.ndarray, np.ndarray]]:
    d = scorer.feature_dim
    if fu.dim != d or fv.dim != d:
        raise InputError(f"feature dims {fu.dim}/{fv.dim} do not match scorer feature_dim {d}")
    prod = elementwise_product(fu, fv)
    return [
        (fu.indices, fu.weights),
        (fv.indices + d, fv.weights),
        (prod.indices + 2 * d, prod.weights),
    ]


def _pack_pairs(
    scorer: MlpPairScorer, fpairs: Sequence[tuple[FeatureVector, FeatureVector]]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate the stacked feature blocks of every pair into the
    (idx, wts, starts) segment form the kernels take, one segment per pair.
    Block index ranges are disjoint, so indices stay unique per segment."""
    idx_parts: list[np.ndarray] = []
    wt_parts: list[np.ndarray] = []
    starts = np.zeros(len(fpairs) + 1, dtype=np.int64)
    total = 0
    for j, (fu, fv) in enumerate(fpairs):
        for bi, bw in _blocks(scorer, fu, fv):
            if bi.shape[0]:
                idx_parts.append(bi)
                wt_parts.append(bw)
                total += bi.shape[0]
        starts[j + 1] = total
    if idx_parts:
        return np.concatenate(idx_parts), np.concatenate(wt_parts), starts
    return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64), starts


def _forward_many(scorer: MlpPairScorer, fpairs: Sequence[tuple[FeatureVector, FeatureVector]]):
    """Pre-activations and deltas for a batch of pairs in one kernel pass.

    Returns (deltas (m,), z1 (m, hidden), pack) with pack the segment form
    needed to push gradients back through the same batch.
    """
    pack = _pack_pairs(scorer, fpairs)
    z1 = segment_project(scorer.w1, *pack)
    z1 += scorer.b1
    h = np.logaddexp(0.0, z1)  # softplus
    deltas = h @ scorer.w2 + scorer.b2
    return deltas, z1, pack


@dataclass
class ScorerGradients:
    """Mutable gradient accumulator matching MlpPairScorer's layout."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    @classmethod
    def zeros_like(cls, scorer: MlpPairScorer) -> "ScorerGradients":
        return cls(
            w1=np.zeros_like(scorer.w1),
            b1=np.zeros_like(scorer.b1),
            w2=np.zeros_like(scorer.w2),
            b2=0.0,
        )

    def reset(self) -> None:
        self.w1[...] = 0.0
        self.b1[...] = 0.0
        self.w2[...] = 0.0
        self.b2 = 0.0


def _backward_many(
    scorer: MlpPairScorer,
    z1: np.ndarray,
    pack: tuple[np.ndarray, np.ndarray, np.ndarray],
    d_deltas: np.ndarray,
    out: ScorerGradients,
) -> None:
    h = np.logaddexp(0.0, z1)
    out.w2 += d_deltas @ h
    out.b2 += float(np.sum(d_deltas))
    # softplus'(z) = sigmoid(z), computed via the stable expit form
    sig = np.empty_like(z1)
    pos = z1 >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-z1[pos]))
    ez = np.exp(z1[~pos])
    sig[~pos] = ez / (1.0 + ez)
    dz1 = (d_deltas[:, None] * scorer.w2[None, :]) * sig
    out.b1 += dz1.sum(axis=0)
    segment_scatter_add(out.w1, *pack, dz1)


def score_features_many(
    scorer: MlpPairScorer, fpairs: Sequence[tuple[FeatureVector, FeatureVector]]
) -> np.ndarray:
    """Deltas for a batch of feature-vector pairs, symmetrized when the
    scorer asks for it."""
    if not fpairs:
        return np.zeros(0, dtype=np.float64)
    deltas, _, _ = _forward_many(scorer, fpairs)
    if scorer.symmetrize:
        rev, _, _ = _forward_many(scorer, [(fv, fu) for fu, fv in fpairs])
        deltas = 0.5 * (deltas + rev)
    if not np.isfinite(deltas).all():
        raise NonFiniteScoreError("pair score is not finite")
    return deltas


def score_features(scorer: MlpPairScorer, fu: FeatureVector, fv: FeatureVector) -> float:
    return float(score_features_many(scorer, [(fu, fv)])[0])


def _texts_of(entity) -> str:
    text = getattr(entity, "text", entity)
    if not isinstance(text, str):
        raise InputError(f"expected a text or a verbalized entity, got {type(entity).__name__}")
    if not text:
        raise EmptyTextError("cannot score an empty text")
    return text


def score_pair(scorer, d_u, d_v) -> float:
    """Scalar relevance of an ordered entity pair; higher means more likely
    equivalent. Accepts VerbalizedEntity objects or raw strings."""
    tu = _texts_of(d_u)
    tv = _texts_of(d_v)
    score = float(scorer.score_texts([(tu, tv)])[0])
    if not np.isfinite(score):
        raise NonFiniteScoreError("pair score is not finite")
    return score


# ---------------------------------------------------------------------------
# Objective


def rerank_loss(
    scorer: MlpPairScorer,
    u: FeatureVector,
    v_pos: FeatureVector,
    negs: Sequence[FeatureVector],
    tau: float = 1.0,
    grad_out: ScorerGradients | None = None,
) -> tuple[float, ScorerGradients]:
    """Softmax-contrastive loss with delta values as logits, plus exact
    analytic gradients through the scorer. With no negatives the loss and
    gradients are exactly zero. Gradients accumulate into grad_out when
    given, else into a fresh accumulator."""
    if tau <= 0:
        raise InputError(f"tau must be positive, got {tau}")
    grads = grad_out if grad_out is not None else ScorerGradients.zeros_like(scorer)
    if len(negs) == 0:
        return 0.0, grads
    fpairs = [(u, v_pos)] + [(u, nv) for nv in negs]
    if scorer.symmetrize:
        fpairs = fpairs + [(fv, fu) for fu, fv in fpairs]
    deltas, z1, pack = _forward_many(scorer, fpairs)
    m = 1 + len(negs)
    logits = 0.5 * (deltas[:m] + deltas[m:]) if scorer.symmetrize else deltas
    loss, g = softmax_contrastive(logits[0] / tau, logits[1:] / tau)
    if not np.isfinite(loss):
        raise NonFiniteLossError("rerank loss is not finite")
    d_logits = g / tau
    d_deltas = 0.5 * np.concatenate([d_logits, d_logits]) if scorer.symmetrize else d_logits
    _backward_many(scorer, z1, pack, d_deltas, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class RerankRecord:
    """One training instance: a source, its gold target, and the negative
    targets it competes against (all drawn from the source's candidates)."""

    source_id: str
    gold_id: str
    negative_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.gold_id in self.negative_ids:
            raise InputError(f"gold target {self.gold_id} appears among its own negatives")
        if len(set(self.negative_ids)) != len(self.negative_ids):
            raise InputError(f"duplicate negatives for source {self.source_id}")


def build_rerank_training_set(
    candidates: Sequence[CandidateSet],
    seeds: Sequence[tuple[str, str]],
    n_neg: int = DEFAULT_N_NEG,
    seed: int = 0,
) -> tuple[RerankRecord, ...]:
    """Per training pair, sample up to n_neg negatives from the source's
    candidate list (gold excluded; the whole pool in rank order when it is
    not larger than n_neg). Sources whose gold was missed by retrieval get
    the gold injected, and the count is logged.

    Per-pair derived sampling seeds make the output independent of the
    order in which pairs are processed.
    """
    if n_neg < 0:
        raise InputError(f"n_neg must be >= 0, got {n_neg}")
    by_source = {cs.source_id: cs for cs in candidates}
    records: list[RerankRecord] = []
    injected = 0
    for u, v in seeds:
        cs = by_source.get(u)
        if cs is None:
            raise InputError(f"training source {u} has no candidate set")
        pool = [tid for tid, _ in cs.candidates if tid != v]
        if len(pool) == len(cs.candidates):
            injected += 1
        if len(pool) <= n_neg:
            negs = tuple(pool)
        else:
            rng = np.random.default_rng(stable_seed("rerank-neg", seed, u))
            picks = rng.choice(len(pool), size=n_neg, replace=False)
            negs = tuple(pool[i] for i in sorted(picks.tolist()))
        records.append(RerankRecord(source_id=u, gold_id=v, negative_ids=negs))
    if injected:
        LOGGER.info("rerank training: gold target injected for %d/%d sources missed by retrieval", injected, len(seeds))
    return tuple(records)


@dataclass(frozen=True)
class RerankValTask:
    """Validation Hits@1 task: each pair's source must put its gold target
    at rank 1 among the source's candidates."""

    pairs: tuple[tuple[str, str], ...]
    candidates: tuple[CandidateSet, ...]


@dataclass(frozen=True)
class TrainRerankerResult:
    scorer: MlpPairScorer
    loss_curve: tuple[float, ...]
    val_curve: tuple[float, ...]
    best_epoch: int  # 0-based epoch returned; -1 = starting weights kept


def _val_hits1(
    scorer: MlpPairScorer,
    task: RerankValTask,
    fvs: Mapping[str, FeatureVector],
) -> float:
    by_source = {cs.source_id: cs for cs in task.candidates}
    hits = 0
    for u, gold in task.pairs:
        cs = by_source.get(u)
        if cs is None or not cs.candidates:
            continue
        scores = score_features_many(scorer, [(fvs[u], fvs[tid]) for tid, _ in cs.candidates])
        scored = [(float(s), tid) for s, (tid, _) in zip(scores, cs.candidates)]
        best = min(scored, key=lambda p: (-p[0], p[1]))[1]
        hits += best == gold
    return hits / max(1, len(task.pairs))


def train_reranker(
    scorer: MlpPairScorer,
    candidates: Sequence[CandidateSet],
    seeds: Sequence[tuple[str, str]],
    texts: Mapping[str, str],
    n_neg: int = DEFAULT_N_NEG,
    epochs: int = 6,
    lr: float = 0.3,
    seed: int = 0,
    *,
    batch_size: int = 8,
    tau: float = 1.0,
    val_task: RerankValTask | None = None,
) -> TrainRerankerResult:
    """Mini-batch SGD on the mean pairwise contrastive loss.

    Deterministic for fixed inputs and seed. With a validation task, the
    returned scorer is the snapshot with the best validation Hits@1, the
    starting weights included as a candidate. Hits@1 is coarse, so ties
    prefer the later snapshot: among checkpoints validation cannot
    separate, the more-trained weights carry the lower training loss.
    best_epoch = -1 means no epoch matched the starting weights. Without a
    validation task the final weights are returned. Zero epochs return the
    scorer unchanged with empty curves.
    """
    if epochs < 0:
        raise InputError(f"epochs must be >= 0, got {epochs}")
    if lr <= 0:
        raise InputError(f"lr must be positive, got {lr}")
    if epochs > 0 and len(seeds) == 0:
        raise EmptyTrainingSetError("no training pairs")
    if epochs == 0:
        return TrainRerankerResult(scorer=scorer, loss_curve=(), val_curve=(), best_epoch=-1)

    records = build_rerank_training_set(candidates, seeds, n_neg=n_neg, seed=seed)

    need: set[str] = set()
    for rec in records:
        need.add(rec.source_id)
        need.add(rec.gold_id)
        need.update(rec.negative_ids)
    if val_task is not None:
        for u, gold in val_task.pairs:
            need.add(u)
            need.add(gold)
        for cs in val_task.candidates:
            need.add(cs.source_id)
            need.update(tid for tid, _ in cs.candidates)
    fvs: dict[str, FeatureVector] = {}
    for eid in sorted(need):
        text = texts.get(eid)
        if not text:
            raise MissingTextError(f"no text for entity {eid}")
        fvs[eid] = scorer.featurize_text(text)

    # cur shares these arrays; in-place updates through the local names keep
    # the frozen dataclass untouched while training sees fresh weights
    w1 = scorer.w1.astype(np.float64, copy=True)
    b1 = scorer.b1.astype(np.float64, copy=True)
    w2 = scorer.w2.astype(np.float64, copy=True)
    cur = replace(scorer, w1=w1, b1=b1, w2=w2, b2=float(scorer.b2))
    rng = np.random.default_rng(seed)
    grads = ScorerGradients.zeros_like(cur)
    loss_curve: list[float] = []
    val_curve: list[float] = []
    best_epoch = -1
    best_hits = -np.inf
    best_arrays = None
    if val_task is not None:
        best_hits = _val_hits1(cur, val_task, fvs)
        best_arrays = (w1.copy(), b1.copy(), w2.copy(), float(cur.b2))

    for epoch in range(epochs):
        order = rng.permutation(len(records))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            grads.reset()
            batch_loss = 0.0
            for idx in batch:
                rec = records[int(idx)]
                loss, _ = rerank_loss(
                    cur,
                    fvs[rec.source_id],
                    fvs[rec.gold_id],
                    [fvs[n] for n in rec.negative_ids],
                    tau=tau,
                    grad_out=grads,
                )
                batch_loss += loss
            if not np.isfinite(batch_loss):
                raise NonFiniteLossError(f"batch loss is not finite at epoch {epoch}")
            scale = lr / len(batch)
            w1 -= scale * grads.w1
            b1 -= scale * grads.b1
            w2 -= scale * grads.w2
            object.__setattr__(cur, "b2", cur.b2 - scale * grads.b2)
            epoch_loss += batch_loss
        loss_curve.append(epoch_loss / len(records))
        if val_task is not None:
            hits = _val_hits1(cur, val_task, fvs)
            val_curve.append(hits)
            if hits >= best_hits:
                best_hits = hits
                best_epoch = epoch
                best_arrays = (w1.copy(), b1.copy(), w2.copy(), float(cur.b2))

    if val_task is not None and best_arrays is not None:
        final = replace(scorer, w1=best_arrays[0], b1=best_arrays[1], w2=best_arrays[2], b2=best_arrays[3])
    else:
        final = replace(scorer, w1=w1, b1=b1, w2=w2, b2=float(cur.b2))
    return TrainRerankerResult(
        scorer=final,
        loss_curve=tuple(loss_curve),
        val_curve=tuple(val_curve),
        best_epoch=best_epoch,
    )


# ---------------------------------------------------------------------------
# Reranking


class ExternalPairScorer:
    """Pair scorer backed by the HTTP /score service; one request per text
    batch, responses cached by the underlying client."""

    kind = "external_service"

    def __init__(self, client: PairScoreClient) -> None:
        self.client = client

    def score_texts(self, pairs: Sequence[tuple[str, str]]) -> np.ndarray:
        return self.client.score_pairs(list(pairs))


def rerank(scorer, candidate_sets: Sequence[CandidateSet], texts: Mapping[str, str]) -> list[CandidateSet]:
    """Reorder each candidate set by descending scorer output (ties by
    target id). Membership is never changed; scores are replaced by the
    scorer's values. Texts are capped at MAX_TEXT_CHARS before scoring."""
    out: list[CandidateSet] = []
    for cs in candidate_sets:
        if not cs.candidates:
            out.append(cs)
            continue
        tu = texts.get(cs.source_id)
        if not tu:
            raise MissingTextError(f"no text for source entity {cs.source_id}")
        tu = clip_text(tu)
        pairs = []
        for tid, _ in cs.candidates:
            tv = texts.get(tid)
            if not tv:
                raise MissingTextError(f"no text for candidate entity {tid}")
            pairs.append((tu, clip_text(tv)))
        scores = np.asarray(scorer.score_texts(pairs), dtype=np.float64)
        if not np.isfinite(scores).all():
            raise NonFiniteScoreError(f"non-finite rerank score for source {cs.source_id}")
        ranked = sorted(
            ((tid, float(s)) for (tid, _), s in zip(cs.candidates, scores)),
            key=lambda p: (-p[1], p[0]),
        )
        out.append(CandidateSet(source_id=cs.source_id, candidates=tuple(ranked)))
    return out


# ---------------------------------------------------------------------------
# Persistence

_SCORER_MAGIC = b"KGRS"
_SCORER_VERSION = 1
_SCORER_HEADER = "<4sIIIIB"


def save_scorer(scorer: MlpPairScorer, path: str | Path) -> None:
    """Binary layout: magic, version, feature_dim, hidden, ngram, flags
    (bit 0 = symmetrize), then little-endian f32 weights: w1 row-major in
    its (3 * feature_dim, hidden) feature-major shape, b1, w2, b2."""
    flags = 1 if scorer.symmetrize else 0
    head = struct.pack(
        _SCORER_HEADER, _SCORER_MAGIC, _SCORER_VERSION, scorer.feature_dim, scorer.hidden, scorer.ngram, flags
    )
    payload = b"".join(
        [
            head,
            scorer.w1.astype("<f4").tobytes(),
            scorer.b1.astype("<f4").tobytes(),
            scorer.w2.astype("<f4").tobytes(),
            np.float32(scorer.b2).tobytes(),
        ]
    )
    atomic_write_bytes(path, payload)


def load_scorer(path: str | Path) -> MlpPairScorer:
    data = Path(path).read_bytes()
    head = struct.calcsize(_SCORER_HEADER)
    if len(data) < head:
        raise InputError(f"{path}: truncated scorer file")
    magic, version, feature_dim, hidden, ngram, flags = struct.unpack(_SCORER_HEADER, data[:head])
    if magic != _SCORER_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}, not a scorer file")
    if version != _SCORER_VERSION:
        raise InputError(f"{path}: unsupported scorer version {version}")
    n_w1 = hidden * 3 * feature_dim
    expected = head + 4 * (n_w1 + hidden + hidden + 1)
    if len(data) != expected:
        raise InputError(f"{path}: expected {expected} bytes, found {len(data)}")
    offset = head
    w1 = np.frombuffer(data, dtype="<f4", offset=offset, count=n_w1).astype(np.float64).reshape(3 * feature_dim, hidden)
    offset += 4 * n_w1
    b1 = np.frombuffer(data, dtype="<f4", offset=offset, count=hidden).astype(np.float64)
    offset += 4 * hidden
    w2 = np.frombuffer(data, dtype="<f4", offset=offset, count=hidden).astype(np.float64)
    offset += 4 * hidden
    b2 = float(np.frombuffer(data, dtype="<f4", offset=offset, count=1)[0])
    return MlpPairScorer(
        w1=w1,
        b1=b1,
        w2=w2,
        b2=b2,
        feature_dim=int(feature_dim),
        ngram=int(ngram),
        symmetrize=bool(flags & 1),
    )
