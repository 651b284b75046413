"""Entity verbalization: neighborhoods and attributes to text.

serialize_triples turns an entity's one-hop context into a canonically
ordered TripleSequence under a character budget; render_template turns that
into a deterministic description; verbalize_external asks a generation
service for a fluent description instead, falling back to the template when
the service returns empty text.

Canonical order makes verbalization a pure function of graph content:
relational pairs sort by (relation label, neighbor name, direction), then
attribute pairs by (attribute, value). The budget drops whole pairs from the
tail and stops at the first pair that does not fit, which gives the prefix
property: a larger budget only ever extends the sequence, never reorders it.
The entity name is always retained, whatever the budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

from .errors import EmptyGenerationError, UnknownEntityError, UnknownEntityTypeError
from .kg import KnowledgeGraph

LOGGER = logging.getLogger(__name__)

DEFAULT_BUDGET = 2048
MAX_ATTR_VALUE_CHARS = 100

# Fixed vocabulary for prompt construction; build_prompt rejects anything else.
ENTITY_TYPES = (
    "person",
    "organization",
    "location",
    "city",
    "country",
    "river",
    "mountain",
    "building",
    "university",
    "company",
    "movie",
    "book",
    "album",
    "song",
    "band",
    "artist",
    "athlete",
    "politician",
    "scientist",
    "disease",
    "drug",
    "animal",
    "plant",
    "food",
    "event",
)


@dataclass(frozen=True)
class RelPair:
    relation: str
    neighbor: str
    inverse: bool


@dataclass(frozen=True)
class TripleSequence:
    """Canonically ordered, budget-limited one-hop context of an entity."""

    entity_id: str
    name: str
    rel_pairs: tuple[RelPair, ...]
    attr_pairs: tuple[tuple[str, str], ...]
    truncated: bool

    def tokens(self) -> tuple[str, ...]:
        toks: list[str] = []
        if self.name:
            toks.append(self.name)
        for p in self.rel_pairs:
            toks.append(p.relation)
            toks.append(p.neighbor)
        for attr, value in self.attr_pairs:
            toks.append(attr)
            toks.append(value)
        return tuple(toks)


@dataclass(frozen=True)
class VerbalizedEntity:
    entity_id: str
    text: str
    provenance: str  # "template" or "external_model"
    truncated: bool


def serialize_triples(
    kg: KnowledgeGraph,
    entity_id: str,
    budget: int = DEFAULT_BUDGET,
    *,
    include_name: bool = True,
    include_rels: bool = True,
    include_attrs: bool = True,
    neighbor_by_id: bool = False,
    name_overrides: Mapping[str, str] | None = None,
) -> TripleSequence:
    """Build the canonical TripleSequence for one entity.

    The include_* switches and neighbor_by_id implement the side-information
    modes; defaults give the full name+relations+attributes view. budget is
    a character budget over the rendered pair texts (the name is exempt).
    """
    if not kg.has_entity(entity_id):
        raise UnknownEntityError(f"unknown entity: {entity_id}")
    if budget < 0:
        raise ValueError(f"budget must be non-negative, got {budget}")

    def display(eid: str) -> str:
        if neighbor_by_id:
            return eid
        if name_overrides is not None and eid in name_overrides:
            return name_overrides[eid]
        return kg.name_for(eid)

    name = display(entity_id) if include_name else ""

    rel_pairs: list[RelPair] = []
    if include_rels:
        seen_rel: set[tuple[str, str, bool]] = set()
        for edge in kg.neighborhood(entity_id):
            key = (edge.relation, display(edge.other), edge.inverse)
            if key in seen_rel:
                continue
            seen_rel.add(key)
            rel_pairs.append(RelPair(edge.relation, display(edge.other), edge.inverse))
        rel_pairs.sort(key=lambda p: (p.relation, p.neighbor, p.inverse))

    attr_pairs: list[tuple[str, str]] = []
    value_shortened = False
    if include_attrs:
        seen_attr: set[tuple[str, str]] = set()
        for attr, value in kg.attributes_of(entity_id):
            if len(value) > MAX_ATTR_VALUE_CHARS:
                value = value[:MAX_ATTR_VALUE_CHARS] + "..."
                value_shortened = True
            if (attr, value) in seen_attr:
                continue
            seen_attr.add((attr, value))
            attr_pairs.append((attr, value))
        attr_pairs.sort()

    kept_rel: list[RelPair] = []
    kept_attr: list[tuple[str, str]] = []
    used = len(name)
    dropped = False
    for p in rel_pairs:
        cost = len(_pair_text(p.relation, p.neighbor, p.inverse)) + 2
        if used + cost > budget:
            dropped = True
            break
        used += cost
        kept_rel.append(p)
    if not dropped:
        for attr, value in attr_pairs:
            cost = len(f"{attr}: {value}") + 2
            if used + cost > budget:
                dropped = True
                break
            used += cost
            kept_attr.append((attr, value))
    else:
        dropped = True

    if len(kept_rel) < len(rel_pairs) or len(kept_attr) < len(attr_pairs):
        dropped = True

    return TripleSequence(
        entity_id=entity_id,
        name=name,
        rel_pairs=tuple(kept_rel),
        attr_pairs=tuple(kept_attr),
        truncated=dropped or value_shortened,
    )


def _pair_text(relation: str, other: str, inverse: bool) -> str:
    if inverse:
        return f"is {relation} of: {other}"
    return f"{relation}: {other}"


def render_template(seq: TripleSequence) -> VerbalizedEntity:
    """Deterministic description: name sentence, relation clause, attribute
    clause, each pair as "pred: obj" joined by semicolons."""
    segments: list[str] = []
    if seq.name:
        segments.append(seq.name)
    if seq.rel_pairs:
        segments.append("; ".join(_pair_text(p.relation, p.neighbor, p.inverse) for p in seq.rel_pairs))
    if seq.attr_pairs:
        segments.append("; ".join(f"{attr}: {value}" for attr, value in seq.attr_pairs))
    text = ". ".join(segments) + "." if segments else seq.entity_id
    return VerbalizedEntity(entity_id=seq.entity_id, text=text, provenance="template", truncated=seq.truncated)


def render_raw(seq: TripleSequence) -> VerbalizedEntity:
    """Crude serialization (ablation baseline): tokens joined by spaces, no
    clause structure, direction markers dropped."""
    toks = seq.tokens()
    text = " ".join(toks) if toks else seq.entity_id
    return VerbalizedEntity(entity_id=seq.entity_id, text=text, provenance="template", truncated=seq.truncated)


def _facts_block(seq: TripleSequence) -> str:
    lines: list[str] = []
    if seq.name:
        lines.append(f"name: {seq.name}")
    for p in seq.rel_pairs:
        lines.append(_pair_text(p.relation, p.neighbor, p.inverse))
    for attr, value in seq.attr_pairs:
        lines.append(f"{attr}: {value}")
    return "\n".join(lines)


_PROMPT_EXAMPLE = (
    "Example:\n"
    "name: Paris\n"
    "capitalOf: France\n"
    "population: 2.1M\n"
    "Description: Paris is the capital of France and has a population of 2.1M."
)


def build_prompt(entity_type: str, seq: TripleSequence) -> str:
    """Byte-deterministic generation prompt in four parts, in order: task
    instruction naming the entity type, the short-and-precise requirement,
    the input/output format specification, and one worked example. The
    entity's own facts follow the four parts. entity_type must come from
    ENTITY_TYPES."""
    if entity_type not in ENTITY_TYPES:
        raise UnknownEntityTypeError(
            f"unknown entity type {entity_type!r}; expected one of {len(ENTITY_TYPES)} predefined types"
        )
    return (
        f"Task: verbalize a knowledge-graph entity of type {entity_type} into text.\n"
        "Write a short and precise description of the entity.\n"
        "Input format: one fact per line, 'predicate: object', starting with the name line. "
        "Output format: a single description sentence after 'Description:'.\n"
        f"{_PROMPT_EXAMPLE}\n"
        f"{_facts_block(seq)}\n"
        "Description:"
    )


_GENERIC_PROMPT = (
    "Write one precise English sentence describing the entity below from its facts. "
    "Mention the entity name and its most identifying facts.\n"
    "Facts:\n{facts}\n"
    "Output: a single sentence, nothing else."
)


def verbalize_external(
    client,
    seq: TripleSequence,
    *,
    max_tokens: int = 256,
    entity_type: str | None = None,
) -> VerbalizedEntity:
    """Ask a generation service to describe the entity.

    client is a services.GenerationClient (or anything with the same
    generate method); it owns retries and response caching. An empty
    generation falls back to the template rendering with a warning, so the
    pipeline never stalls on a lazy model.
    """
    prompt = build_prompt(entity_type, seq) if entity_type is not None else _GENERIC_PROMPT.format(facts=_facts_block(seq))
    try:
        text = client.generate(prompt, max_tokens=max_tokens)
    except EmptyGenerationError:
        LOGGER.warning("empty generation for entity %s; falling back to template text", seq.entity_id)
        return render_template(seq)
    text = text.strip()
    if not text:
        LOGGER.warning("empty generation for entity %s; falling back to template text", seq.entity_id)
        return render_template(seq)
    return VerbalizedEntity(entity_id=seq.entity_id, text=text, provenance="external_model", truncated=seq.truncated)
