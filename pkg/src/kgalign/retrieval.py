"""Candidate retrieval over embedding indexes.

Two index kinds share one query surface. The exact index stores the vectors
verbatim and scans them with blocked matrix products; its top-k is the true
top-k. The approximate index adds a precomputed k-nearest-neighbor graph and
answers queries with greedy best-first beam search from fixed entry points;
its build parameters (degree, beam, entry count, seed) are recorded in the
persisted file so a rebuild is reproducible.

Scores are float64 dot products of the stored float32 vectors. Ties rank by
target id ascending, and candidate lists are always sorted by descending
score, so retrieval output is deterministic byte for byte.
"""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embed import EmbeddingMatrix, EmbeddingVector
from .errors import DimensionMismatchError, EmptyInputError, EmptyPoolError, InputError, MalformedLineError
from .util import atomic_write_bytes, atomic_write_text

DEFAULT_DEGREE = 32
DEFAULT_BEAM = 120
DEFAULT_ENTRIES = 32

_IDX_MAGIC = b"KGIX"
_IDX_VERSION = 1
_KIND_EXACT = 0
_KIND_APPROX = 1


@dataclass(frozen=True)
class CandidateSet:
    """Ranked candidates for one source entity; scores non-increasing."""

    source_id: str
    candidates: tuple[tuple[str, float], ...]

    def target_ids(self) -> tuple[str, ...]:
        return tuple(tid for tid, _ in self.candidates)

    def rank_of(self, target_id: str) -> int:
        """1-based rank of target_id, or 0 when absent."""
        for pos, (tid, _) in enumerate(self.candidates, start=1):
            if tid == target_id:
                return pos
        return 0


class ExactIndex:
    kind = "exact"

    def __init__(self, ids: Sequence[str], vectors: np.ndarray) -> None:
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise EmptyInputError("index needs a non-empty (n, d) vector matrix")
        if len(ids) != vectors.shape[0]:
            raise DimensionMismatchError(f"{len(ids)} ids for {vectors.shape[0]} vectors")
        self.ids: tuple[str, ...] = tuple(ids)
        self.vectors = vectors
        self._vectors64 = vectors.astype(np.float64)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def score_all(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatchError(f"query shape {q.shape}, index dim {self.dim}")
        return self._vectors64 @ q


def _select_topk(ids: Sequence[str], idxs: np.ndarray, scores: np.ndarray, k: int) -> tuple[tuple[str, float], ...]:
    """True top-k over (idxs, scores) with ties broken by id ascending.

    Equivalent to sorting everything by (-score, id) and taking the first k;
    implemented with a partition so only the boundary tie group is sorted.
    """
    n = scores.shape[0]
    k_eff = min(k, n)
    if k_eff == n:
        chosen = list(range(n))
    else:
        kth = np.partition(scores, n - k_eff)[n - k_eff]
        above = np.flatnonzero(scores > kth)
        need = k_eff - above.shape[0]
        at = np.flatnonzero(scores == kth)
        if need < at.shape[0]:
            at = np.asarray(sorted(at, key=lambda i: ids[idxs[i]])[:need], dtype=np.intp)
        chosen = np.concatenate([above, at]).tolist()
    chosen.sort(key=lambda i: (-scores[i], ids[idxs[i]]))
    return tuple((ids[idxs[i]], float(scores[i])) for i in chosen)


def topk(index, query: EmbeddingVector, k: int) -> CandidateSet:
    """Top-k candidates for one query. k larger than the index returns the
    full ranking."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if isinstance(index, ApproxIndex):
        return index.search(query, k)
    scores = index.score_all(query.values)
    all_idx = np.arange(len(index), dtype=np.intp)
    return CandidateSet(source_id=query.entity_id, candidates=_select_topk(index.ids, all_idx, scores, k))


def topk_all(index, queries: EmbeddingMatrix, k: int, block: int = 256) -> list[CandidateSet]:
    """Batched top-k for every row of queries; identical to calling topk per
    row, with blocked matrix products on the exact index."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    out: list[CandidateSet] = []
    if isinstance(index, ApproxIndex):
        for i, eid in enumerate(queries.ids):
            out.append(index.search(EmbeddingVector(eid, queries.vectors[i]), k))
        return out
    all_idx = np.arange(len(index), dtype=np.intp)
    q64 = queries.vectors.astype(np.float64)
    for start in range(0, len(queries), block):
        stop = min(start + block, len(queries))
        sims = q64[start:stop] @ index._vectors64.T
        for row, eid in enumerate(queries.ids[start:stop]):
            out.append(CandidateSet(source_id=eid, candidates=_select_topk(index.ids, all_idx, sims[row], k)))
    return out


class ApproxIndex:
    """Graph-based approximate index: exact KNN graph + beam search.

    Build is deterministic (blocked exact neighbor computation, seeded entry
    points); search is a pure function of the persisted structure, so saved
    and reloaded indexes answer identically.
    """

    kind = "approx"

    def __init__(
        self,
        ids: Sequence[str],
        vectors: np.ndarray,
        graph: np.ndarray,
        entries: np.ndarray,
        degree: int,
        beam: int,
        seed: int,
    ) -> None:
        self._inner = ExactIndex(ids, vectors)
        self.ids = self._inner.ids
        self.vectors = self._inner.vectors
        self.graph = np.asarray(graph, dtype=np.int32)
        self.entries = np.asarray(entries, dtype=np.int64)
        self.degree = int(degree)
        self.beam = int(beam)
        self.seed = int(seed)

    @property
    def dim(self) -> int:
        return self._inner.dim

    def __len__(self) -> int:
        return len(self.ids)

    def search(self, query: EmbeddingVector, k: int) -> CandidateSet:
        q = np.asarray(query.values, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatchError(f"query shape {q.shape}, index dim {self.dim}")
        vec64 = self._inner._vectors64
        scores: dict[int, float] = {}

        def score_nodes(nodes: list[int]) -> None:
            fresh = [i for i in nodes if i not in scores]
            if fresh:
                vals = vec64[fresh] @ q
                for i, s in zip(fresh, vals):
                    scores[i] = float(s)

        start = [int(i) for i in self.entries]
        score_nodes(start)
        frontier = [(-scores[i], i) for i in start]
        heapq.heapify(frontier)
        best: list[tuple[float, int]] = [(scores[i], i) for i in start]
        heapq.heapify(best)
        while len(best) > self.beam:
            heapq.heappop(best)
        expanded: set[int] = set()
        while frontier:
            neg, node = heapq.heappop(frontier)
            if len(best) >= self.beam and -neg < best[0][0]:
                break
            if node in expanded:
                continue
            expanded.add(node)
            nbrs = [int(j) for j in self.graph[node] if j >= 0]
            score_nodes(nbrs)
            for j in nbrs:
                if len(best) < self.beam or scores[j] > best[0][0]:
                    heapq.heappush(frontier, (-scores[j], j))
                    heapq.heappush(best, (scores[j], j))
                    while len(best) > self.beam:
                        heapq.heappop(best)
        idxs = np.fromiter(scores.keys(), dtype=np.intp, count=len(scores))
        vals = np.fromiter(scores.values(), dtype=np.float64, count=len(scores))
        return CandidateSet(source_id=query.entity_id, candidates=_select_topk(self.ids, idxs, vals, k))


def build_index(
    ids: Sequence[str],
    vectors: np.ndarray,
    kind: str = "exact",
    *,
    degree: int = DEFAULT_DEGREE,
    beam: int = DEFAULT_BEAM,
    n_entries: int = DEFAULT_ENTRIES,
    seed: int = 0,
    block: int = 512,
):
    """Build an index over (ids, vectors). kind is "exact" or "approx"."""
    if kind == "exact":
        return ExactIndex(ids, vectors)
    if kind != "approx":
        raise ValueError(f"unknown index kind {kind!r}")
    inner = ExactIndex(ids, vectors)
    n = len(inner)
    deg = min(degree, n - 1) if n > 1 else 0
    graph = np.full((n, degree), -1, dtype=np.int32)
    v64 = inner._vectors64
    for start in range(0, n, block):
        stop = min(start + block, n)
        sims = v64[start:stop] @ v64.T
        for row in range(stop - start):
            sims[row, start + row] = -np.inf  # no self loops
        if deg > 0:
            part = np.argpartition(-sims, deg - 1, axis=1)[:, :deg]
            order = np.take_along_axis(sims, part, axis=1).argsort(axis=1)[:, ::-1]
            graph[start:stop, :deg] = np.take_along_axis(part, order, axis=1)
    rng = np.random.default_rng(seed)
    n_ent = min(n_entries, n)
    entries = np.sort(rng.choice(n, size=n_ent, replace=False)).astype(np.int64)
    return ApproxIndex(ids, vectors, graph, entries, degree=degree, beam=beam, seed=seed)


def mine_negatives(
    index,
    query: EmbeddingVector,
    gold_id: str,
    *,
    pool_size: int,
    count: int,
    seed: int,
) -> list[str]:
    """Sample negatives uniformly from the top pool_size retrieved candidates
    after removing the gold target. Deterministic for a fixed seed; callers
    derive per-pair seeds so parallel mining equals sequential mining. Pools
    at or under the requested count are returned whole, in rank order."""
    pool = [tid for tid in topk(index, query, pool_size).target_ids() if tid != gold_id]
    if not pool:
        raise EmptyPoolError(f"no negatives available for {query.entity_id}")
    if len(pool) <= count:
        return pool
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=count, replace=False)
    return [pool[int(i)] for i in picks]


# ---------------------------------------------------------------------------
# Persistence


def _pack_ids(ids: Sequence[str]) -> bytes:
    parts = []
    for eid in ids:
        raw = eid.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def _unpack_ids(data: bytes, offset: int, count: int) -> tuple[list[str], int]:
    ids: list[str] = []
    for _ in range(count):
        (length,) = struct.unpack_from("<I", data, offset)
        offset += 4
        ids.append(data[offset : offset + length].decode("utf-8"))
        offset += length
    return ids, offset


def save_index(index, path: str | Path) -> None:
    """Binary layout: magic, version u32, kind u8, d u32, count u32, id
    table, row-major float32 vectors; approximate indexes append degree u32,
    beam u32, entry count u32, seed u64, entry ids u32 each, and the int32
    neighbor table."""
    kind = _KIND_APPROX if isinstance(index, ApproxIndex) else _KIND_EXACT
    parts = [
        struct.pack("<4sIBII", _IDX_MAGIC, _IDX_VERSION, kind, index.dim, len(index)),
        _pack_ids(index.ids),
        np.ascontiguousarray(index.vectors, dtype="<f4").tobytes(),
    ]
    if kind == _KIND_APPROX:
        parts.append(struct.pack("<IIIQ", index.degree, index.beam, len(index.entries), index.seed))
        parts.append(np.ascontiguousarray(index.entries, dtype="<u4").tobytes())
        parts.append(np.ascontiguousarray(index.graph, dtype="<i4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_index(path: str | Path):
    data = Path(path).read_bytes()
    head = struct.calcsize("<4sIBII")
    if len(data) < head:
        raise InputError(f"{path}: truncated index file")
    magic, version, kind, dim, count = struct.unpack("<4sIBII", data[:head])
    if magic != _IDX_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}, not an index file")
    if version != _IDX_VERSION:
        raise InputError(f"{path}: unsupported index version {version}")
    ids, offset = _unpack_ids(data, head, count)
    vec_bytes = count * dim * 4
    vectors = np.frombuffer(data, dtype="<f4", offset=offset, count=count * dim).reshape(count, dim).copy()
    offset += vec_bytes
    if kind == _KIND_EXACT:
        if offset != len(data):
            raise InputError(f"{path}: {len(data) - offset} trailing bytes")
        return ExactIndex(ids, vectors)
    if kind != _KIND_APPROX:
        raise InputError(f"{path}: unknown index kind {kind}")
    degree, beam, n_entries, seed = struct.unpack_from("<IIIQ", data, offset)
    offset += struct.calcsize("<IIIQ")
    entries = np.frombuffer(data, dtype="<u4", offset=offset, count=n_entries).astype(np.int64)
    offset += n_entries * 4
    graph = np.frombuffer(data, dtype="<i4", offset=offset, count=count * degree).reshape(count, degree).copy()
    offset += count * degree * 4
    if offset != len(data):
        raise InputError(f"{path}: {len(data) - offset} trailing bytes")
    return ApproxIndex(ids, vectors, graph, entries, degree=degree, beam=beam, seed=seed)


def save_candidates(candidate_sets: Sequence[CandidateSet], path: str | Path) -> None:
    """JSON lines, one object per source:
    {"source": id, "candidates": [[target_id, score], ...]}."""
    lines = []
    for cs in candidate_sets:
        obj = {"source": cs.source_id, "candidates": [[tid, s] for tid, s in cs.candidates]}
        lines.append(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")
    atomic_write_text(path, "".join(lines))


def load_candidates(path: str | Path) -> list[CandidateSet]:
    out: list[CandidateSet] = []
    p = Path(path)
    if not p.is_file():
        raise InputError(f"candidate file missing: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                source = obj["source"]
                cands = tuple((str(tid), float(s)) for tid, s in obj["candidates"])
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedLineError(str(p), line_no, f"bad candidate record: {exc}") from None
            out.append(CandidateSet(source_id=str(source), candidates=cands))
    return out
