"""Alignment decisions over ranked candidates.

Three strategies, all deterministic:

  * greedy: independent per-source argmax (ties by target id). Several
    sources may claim the same target; the result is not one-to-one.
  * hungarian: globally optimal one-to-one assignment on a similarity
    matrix, via the shortest-augmenting-path kernel in kgalign.core.
  * sinkhorn: entropic optimal transport with uniform marginals in the log
    domain, hardened to a one-to-one matching by greedy selection on
    transport mass. Non-convergence is reported in the diagnostics, never
    raised; the hardened result is still returned.

Matrices built from candidate sets give unobserved pairs a fill value three
score ranges below the observed minimum, so no strategy ever prefers an
unobserved pair over an observed one. Matches that land on fill cells anyway
(forced by conflicts) are dropped from the result, since there is no
retrieval evidence behind them.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import core
from .errors import EmptyCandidateSetError, InputError, MalformedLineError, NonFiniteMatrixError
from .retrieval import CandidateSet
from .util import atomic_write_text, canonical_json

LOGGER = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.05
DEFAULT_SINKHORN_ITERS = 1000
DEFAULT_SINKHORN_TOL = 1e-6


@dataclass(frozen=True)
class SimilarityMatrix:
    """Dense score matrix between row (source) and column (target) entities.

    fill_value marks entries with no retrieval evidence; None means every
    entry is an observed score.
    """

    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    scores: np.ndarray
    fill_value: float | None = None

    def __post_init__(self) -> None:
        if self.scores.shape != (len(self.row_ids), len(self.col_ids)):
            raise InputError(
                f"score matrix shape {self.scores.shape} does not match "
                f"{len(self.row_ids)} rows x {len(self.col_ids)} cols"
            )
        if not np.isfinite(self.scores).all():
            raise NonFiniteMatrixError("similarity matrix contains non-finite entries")


def matrix_from_candidates(candidate_sets: Sequence[CandidateSet]) -> SimilarityMatrix:
    """Rows are sources in sorted id order, columns the sorted union of all
    candidate targets. Unobserved entries get min - 3 * (max - min), or
    min - 1 when all observed scores are equal."""
    if not candidate_sets:
        raise EmptyCandidateSetError("no candidate sets")
    seen_sources: set[str] = set()
    for cs in candidate_sets:
        if cs.source_id in seen_sources:
            raise InputError(f"duplicate candidate set for source {cs.source_id}")
        seen_sources.add(cs.source_id)

    row_ids = tuple(sorted(cs.source_id for cs in candidate_sets))
    col_ids = tuple(sorted({tid for cs in candidate_sets for tid, _ in cs.candidates}))
    if not col_ids:
        raise EmptyCandidateSetError("candidate sets contain no candidates")
    col_pos = {tid: j for j, tid in enumerate(col_ids)}
    row_pos = {sid: i for i, sid in enumerate(row_ids)}

    all_scores = np.array([s for cs in candidate_sets for _, s in cs.candidates], dtype=np.float64)
    if not np.isfinite(all_scores).all():
        raise NonFiniteMatrixError("candidate scores contain non-finite values")
    lo = float(all_scores.min())
    hi = float(all_scores.max())
    spread = hi - lo
    fill = lo - 3.0 * spread if spread > 0 else lo - 1.0

    scores = np.full((len(row_ids), len(col_ids)), fill, dtype=np.float64)
    for cs in candidate_sets:
        i = row_pos[cs.source_id]
        for tid, s in cs.candidates:
            scores[i, col_pos[tid]] = s
    return SimilarityMatrix(row_ids=row_ids, col_ids=col_ids, scores=scores, fill_value=fill)


@dataclass(frozen=True)
class SinkhornDiagnostics:
    converged: bool
    iterations: int
    marginal_violation: float
    epsilon: float


@dataclass(frozen=True)
class AlignmentResult:
    """Predicted pairs with their similarity scores.

    one_to_one records whether the strategy guarantees distinct sources and
    distinct targets; when set, the invariant is checked at construction.
    """

    pairs: tuple[tuple[str, str, float], ...]
    strategy: str
    one_to_one: bool
    diagnostics: SinkhornDiagnostics | None = None

    def __post_init__(self) -> None:
        if self.one_to_one:
            sources = [s for s, _, _ in self.pairs]
            targets = [t for _, t, _ in self.pairs]
            if len(set(sources)) != len(sources) or len(set(targets)) != len(targets):
                raise InputError("one_to_one result has duplicated source or target ids")

    def as_mapping(self) -> dict[str, str]:
        return {s: t for s, t, _ in self.pairs}

    def __len__(self) -> int:
        return len(self.pairs)


def decide_greedy(candidate_sets: Sequence[CandidateSet]) -> AlignmentResult:
    """Independent top-1 pick per source; score ties resolve to the lowest
    target id. Different sources may select the same target."""
    if not candidate_sets:
        raise EmptyCandidateSetError("no candidate sets")
    pairs: list[tuple[str, str, float]] = []
    for cs in candidate_sets:
        if not cs.candidates:
            raise EmptyCandidateSetError(f"candidate set for {cs.source_id} is empty")
        for tid, s in cs.candidates:
            if not np.isfinite(s):
                raise NonFiniteMatrixError(f"non-finite candidate score for {cs.source_id}")
        best_tid, best_score = min(cs.candidates, key=lambda c: (-c[1], c[0]))
        pairs.append((cs.source_id, best_tid, best_score))
    pairs.sort(key=lambda p: p[0])
    return AlignmentResult(pairs=tuple(pairs), strategy="greedy", one_to_one=False)


def decide_hungarian(matrix: SimilarityMatrix) -> AlignmentResult:
    """Maximum-total-score assignment. Matches on fill cells are dropped."""
    rows, cols = core.linear_assignment(matrix.scores, maximize=True)
    pairs: list[tuple[str, str, float]] = []
    for i, j in zip(rows.tolist(), cols.tolist()):
        score = float(matrix.scores[i, j])
        if matrix.fill_value is not None and score == matrix.fill_value:
            continue
        pairs.append((matrix.row_ids[i], matrix.col_ids[j], score))
    pairs.sort(key=lambda p: p[0])
    return AlignmentResult(pairs=tuple(pairs), strategy="hungarian", one_to_one=True)


def _logsumexp(arr: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(arr, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(arr - m), axis=axis, keepdims=True))).squeeze(axis)


def sinkhorn_plan(
    scores: np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_SINKHORN_ITERS,
    tol: float = DEFAULT_SINKHORN_TOL,
) -> tuple[np.ndarray, SinkhornDiagnostics]:
    """Entropic transport plan between uniform marginals, log-domain updates.

    Returns (plan, diagnostics); plan rows sum to 1/n and columns to 1/m at
    convergence, and the reported violation is the max absolute deviation of
    either marginal."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    S = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(S).all():
        raise NonFiniteMatrixError("sinkhorn needs finite scores")
    n, m = S.shape
    M = S / epsilon
    log_a = -np.log(n)
    log_b = -np.log(m)
    phi = np.zeros(n)
    gamma = np.zeros(m)
    it = 0
    violation = np.inf
    check_every = 10
    for it in range(1, max_iters + 1):
        gamma = log_b - _logsumexp(M + phi[:, None], axis=0)
        phi = log_a - _logsumexp(M + gamma[None, :], axis=1)
        if it % check_every == 0 or it == max_iters:
            plan = np.exp(phi[:, None] + gamma[None, :] + M)
            violation = max(
                float(np.abs(plan.sum(axis=1) - 1.0 / n).max()),
                float(np.abs(plan.sum(axis=0) - 1.0 / m).max()),
            )
            if violation <= tol:
                break
    plan = np.exp(phi[:, None] + gamma[None, :] + M)
    violation = max(
        float(np.abs(plan.sum(axis=1) - 1.0 / n).max()),
        float(np.abs(plan.sum(axis=0) - 1.0 / m).max()),
    )
    converged = violation <= tol
    if not converged:
        LOGGER.warning(
            "sinkhorn did not converge after %d iterations (marginal violation %.3e > %.0e)",
            it,
            violation,
            tol,
        )
    return plan, SinkhornDiagnostics(converged=converged, iterations=it, marginal_violation=violation, epsilon=epsilon)


def harden_plan(plan: np.ndarray) -> list[tuple[int, int]]:
    """Greedy matching on transport mass: repeatedly take the largest free
    cell. Ties resolve by row-major cell order."""
    n, m = plan.shape
    order = np.argsort(-plan.ravel(), kind="stable")
    used_r = np.zeros(n, dtype=bool)
    used_c = np.zeros(m, dtype=bool)
    picks: list[tuple[int, int]] = []
    want = min(n, m)
    for flat in order:
        i, j = divmod(int(flat), m)
        if used_r[i] or used_c[j]:
            continue
        used_r[i] = True
        used_c[j] = True
        picks.append((i, j))
        if len(picks) == want:
            break
    picks.sort()
    return picks


def decide_sinkhorn(
    matrix: SimilarityMatrix,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_SINKHORN_ITERS,
    tol: float = DEFAULT_SINKHORN_TOL,
) -> AlignmentResult:
    plan, diag = sinkhorn_plan(matrix.scores, epsilon=epsilon, max_iters=max_iters, tol=tol)
    pairs: list[tuple[str, str, float]] = []
    for i, j in harden_plan(plan):
        score = float(matrix.scores[i, j])
        if matrix.fill_value is not None and score == matrix.fill_value:
            continue
        pairs.append((matrix.row_ids[i], matrix.col_ids[j], score))
    pairs.sort(key=lambda p: p[0])
    return AlignmentResult(pairs=tuple(pairs), strategy="sinkhorn", one_to_one=True, diagnostics=diag)


def decide(
    candidate_sets: Sequence[CandidateSet],
    strategy: str,
    *,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_SINKHORN_ITERS,
) -> AlignmentResult:
    if strategy == "greedy":
        return decide_greedy(candidate_sets)
    if strategy == "hungarian":
        return decide_hungarian(matrix_from_candidates(candidate_sets))
    if strategy == "sinkhorn":
        return decide_sinkhorn(matrix_from_candidates(candidate_sets), epsilon=epsilon, max_iters=max_iters)
    raise ValueError(f"unknown decision strategy {strategy!r}")


# ---------------------------------------------------------------------------
# Persistence


def metadata_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def save_alignment(result: AlignmentResult, path: str | Path) -> None:
    """TSV: source<TAB>target<TAB>score, sorted by source id, score in repr
    form so reloads are exact. A JSON sidecar at <path>.meta.json records
    the strategy and, for sinkhorn, the transport diagnostics."""
    lines = [f"{s}\t{t}\t{score!r}\n" for s, t, score in result.pairs]
    atomic_write_text(path, "".join(lines))
    meta: dict[str, object] = {
        "strategy": result.strategy,
        "one_to_one": result.one_to_one,
        "pair_count": len(result.pairs),
    }
    if result.diagnostics is not None:
        d = result.diagnostics
        meta.update(
            {
                "epsilon": d.epsilon,
                "iterations": d.iterations,
                "marginal_violation": d.marginal_violation,
                "converged": d.converged,
            }
        )
    atomic_write_text(metadata_path(path), canonical_json(meta) + "\n")


def load_alignment(path: str | Path) -> AlignmentResult:
    """Reads the TSV and, when present, the JSON metadata sidecar; without
    a sidecar the strategy is "unknown" and one_to_one is not asserted."""
    pairs: list[tuple[str, str, float]] = []
    p = Path(path)
    with open(p, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise MalformedLineError(str(p), line_no, f"expected 3 tab-separated fields, got {len(fields)}")
            try:
                score = float(fields[2])
            except ValueError:
                raise MalformedLineError(str(p), line_no, f"score is not a float: {fields[2]!r}") from None
            pairs.append((fields[0], fields[1], score))

    strategy = "unknown"
    one_to_one = False
    diagnostics = None
    mp = metadata_path(p)
    if mp.exists():
        with open(mp, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        strategy = str(meta.get("strategy", "unknown"))
        one_to_one = bool(meta.get("one_to_one", False))
        if "epsilon" in meta:
            diagnostics = SinkhornDiagnostics(
                converged=bool(meta["converged"]),
                iterations=int(meta["iterations"]),
                marginal_violation=float(meta["marginal_violation"]),
                epsilon=float(meta["epsilon"]),
            )
    return AlignmentResult(pairs=tuple(pairs), strategy=strategy, one_to_one=one_to_one, diagnostics=diagnostics)
