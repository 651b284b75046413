"""Ranking and decision metrics, reports, and setting comparisons.

Ranking metrics (hits@k, MRR) are computed against gold test pairs over
ranked candidate sets; a gold target absent from its source's candidates
counts as a miss (reciprocal rank 0), and a gold source with no candidate
set at all is a logged miss. Decision metrics (precision/recall/F1) compare
predicted pairs against gold as sets.

Reports carry the run's config fingerprint so every number is traceable to
the exact configuration and seeds that produced it, and serialize to
canonical JSON (sorted keys, fixed separators) so identical runs emit
byte-identical documents.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .assign import AlignmentResult
from .errors import EmptyGoldError, InputError, KeyMismatchError
from .retrieval import CandidateSet
from .util import atomic_write_text, canonical_json

LOGGER = logging.getLogger(__name__)

DEFAULT_HITS_KS = (1, 10)


def _rank_map(ranked: Sequence[CandidateSet], gold: Sequence[tuple[str, str]]) -> list[int]:
    """1-based rank of each gold pair's target, 0 for a miss. Sources with
    no candidate set are misses and counted in one log line."""
    by_source: dict[str, CandidateSet] = {}
    for cs in ranked:
        by_source[cs.source_id] = cs
    ranks: list[int] = []
    missing_sets = 0
    for s, t in gold:
        cs = by_source.get(s)
        if cs is None:
            missing_sets += 1
            ranks.append(0)
            continue
        ranks.append(cs.rank_of(t))
    if missing_sets:
        LOGGER.warning("%d/%d gold sources have no candidate set; counted as misses", missing_sets, len(gold))
    return ranks


def hits_at_k(ranked: Sequence[CandidateSet], gold: Sequence[tuple[str, str]], k: int) -> float:
    """Fraction of gold pairs whose target is within the top k candidates."""
    if len(gold) == 0:
        raise EmptyGoldError("no gold pairs to evaluate")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    ranks = _rank_map(ranked, gold)
    return sum(1 for r in ranks if 1 <= r <= k) / len(gold)


def mrr(ranked: Sequence[CandidateSet], gold: Sequence[tuple[str, str]]) -> float:
    """Mean reciprocal rank of the gold target; misses contribute 0."""
    if len(gold) == 0:
        raise EmptyGoldError("no gold pairs to evaluate")
    ranks = _rank_map(ranked, gold)
    return sum(1.0 / r for r in ranks if r >= 1) / len(gold)


def prf1(predicted: AlignmentResult | Iterable[tuple[str, str]], gold: Sequence[tuple[str, str]]) -> tuple[float, float, float]:
    """Set precision/recall/F1 of predicted pairs against gold. Degenerate
    inputs (no predictions, no gold) produce zeros, never errors."""
    if isinstance(predicted, AlignmentResult):
        pred_pairs = {(s, t) for s, t, _ in predicted.pairs}
    else:
        pred_pairs = {(s, t) for s, t in predicted}
    gold_pairs = set(gold)
    correct = len(pred_pairs & gold_pairs)
    precision = correct / len(pred_pairs) if pred_pairs else 0.0
    recall = correct / len(gold_pairs) if gold_pairs else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class MetricsReport:
    """All evaluation numbers for one run setting, plus traceability."""

    hits_at: dict[int, float]
    mrr: float
    precision: float
    recall: float
    f1: float
    n_gold: int
    n_predicted: int
    setting: str  # regular | hard
    config_fingerprint: str
    prediction_scope: str = "test_sources"

    def __post_init__(self) -> None:
        values = [self.mrr, self.precision, self.recall, self.f1, *self.hits_at.values()]
        for v in values:
            if not (0.0 <= v <= 1.0):
                raise InputError(f"metric out of [0, 1]: {v}")
        ks = sorted(self.hits_at)
        for a, b in zip(ks, ks[1:]):
            if self.hits_at[a] > self.hits_at[b] + 1e-12:
                raise InputError(f"hits@{a}={self.hits_at[a]} exceeds hits@{b}={self.hits_at[b]}")
        denom = self.precision + self.recall
        expect_f1 = 2 * self.precision * self.recall / denom if denom > 0 else 0.0
        if abs(expect_f1 - self.f1) > 1e-9:
            raise InputError(f"f1={self.f1} inconsistent with precision/recall (expected {expect_f1})")

    def scalar_metrics(self) -> dict[str, float]:
        out = {f"hits@{k}": v for k, v in sorted(self.hits_at.items())}
        out.update({"mrr": self.mrr, "precision": self.precision, "recall": self.recall, "f1": self.f1})
        return out


def build_report(
    ranked: Sequence[CandidateSet],
    gold: Sequence[tuple[str, str]],
    predicted: AlignmentResult,
    *,
    ks: Sequence[int] = DEFAULT_HITS_KS,
    setting: str = "regular",
    config_fingerprint: str = "",
) -> MetricsReport:
    if setting not in ("regular", "hard"):
        raise InputError(f"setting must be 'regular' or 'hard', got {setting!r}")
    hits = {int(k): hits_at_k(ranked, gold, int(k)) for k in ks}
    p, r, f1 = prf1(predicted, gold)
    return MetricsReport(
        hits_at=hits,
        mrr=mrr(ranked, gold),
        precision=p,
        recall=r,
        f1=f1,
        n_gold=len(gold),
        n_predicted=len(predicted),
        setting=setting,
        config_fingerprint=config_fingerprint,
    )


# ---------------------------------------------------------------------------
# Rendering


def report_to_json(report: MetricsReport) -> str:
    doc = {
        "setting": report.setting,
        "prediction_scope": report.prediction_scope,
        "config_fingerprint": report.config_fingerprint,
        "n_gold": report.n_gold,
        "n_predicted": report.n_predicted,
        "hits_at": {str(k): v for k, v in sorted(report.hits_at.items())},
        "mrr": report.mrr,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
    }
    return canonical_json(doc)


def report_from_json(text: str) -> MetricsReport:
    doc = json.loads(text)
    return MetricsReport(
        hits_at={int(k): float(v) for k, v in doc["hits_at"].items()},
        mrr=float(doc["mrr"]),
        precision=float(doc["precision"]),
        recall=float(doc["recall"]),
        f1=float(doc["f1"]),
        n_gold=int(doc["n_gold"]),
        n_predicted=int(doc["n_predicted"]),
        setting=str(doc["setting"]),
        config_fingerprint=str(doc["config_fingerprint"]),
        prediction_scope=str(doc.get("prediction_scope", "test_sources")),
    )


def report_table(report: MetricsReport) -> str:
    """Aligned two-column plain-text table."""
    rows = [
        ("setting", report.setting),
        ("gold pairs", str(report.n_gold)),
        ("predicted pairs", str(report.n_predicted)),
        ("prediction scope", report.prediction_scope),
    ]
    rows += [(name, f"{value:.4f}") for name, value in report.scalar_metrics().items()]
    if report.config_fingerprint:
        rows.append(("config fingerprint", report.config_fingerprint))
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows) + "\n"


def save_report(report: MetricsReport, json_path: str | Path, table_path: str | Path | None = None) -> None:
    atomic_write_text(json_path, report_to_json(report) + "\n")
    if table_path is not None:
        atomic_write_text(table_path, report_table(report))


def ranks_csv(ranked: Sequence[CandidateSet], gold: Sequence[tuple[str, str]]) -> str:
    """CSV of per-source gold ranks (rank 0 = miss), sorted by source id."""
    ranks = _rank_map(ranked, gold)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["source", "gold_target", "rank"])
    for (s, t), r in sorted(zip(gold, ranks)):
        writer.writerow([s, t, r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Setting comparison


@dataclass(frozen=True)
class ComparisonReport:
    """Per-metric regular-vs-hard values and their difference (hard minus
    regular), preserving metric order."""

    rows: tuple[tuple[str, float, float, float], ...] = field(default_factory=tuple)

    def as_dict(self) -> dict[str, float]:
        return {name: delta for name, _, _, delta in self.rows}


def compare_settings(regular: MetricsReport, hard: MetricsReport) -> ComparisonReport:
    reg = regular.scalar_metrics()
    hrd = hard.scalar_metrics()
    if set(reg) != set(hrd):
        missing = set(reg).symmetric_difference(hrd)
        raise KeyMismatchError(f"reports disagree on metric keys: {sorted(missing)}")
    rows = tuple((name, reg[name], hrd[name], hrd[name] - reg[name]) for name in reg)
    return ComparisonReport(rows=rows)


def comparison_table(comparison: ComparisonReport) -> str:
    header = ("metric", "regular", "hard", "delta")
    body = [(name, f"{r:.4f}", f"{h:.4f}", f"{d:+.4f}") for name, r, h, d in comparison.rows]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(4)]
    lines = []
    for row in [header, *body]:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"
