"""Knowledge-graph store: dataset parsing, graph views, seed splits.

Two on-disk dataset layouts are supported:

OpenEA layout (a directory):
    rel_triples_1, rel_triples_2    subject<TAB>relation<TAB>object, one per line
    attr_triples_1, attr_triples_2  subject<TAB>attribute<TAB>literal value
    ent_links                       source_id<TAB>target_id gold pairs
Entities are derived from the triples (rel subjects/objects plus attr
subjects). Attribute literals may contain tabs: the first two fields are
subject and attribute, the rest of the line is the value.

DBP15K layout (a directory):
    ent_ids_1, ent_ids_2            integer_id<TAB>uri
    triples_1, triples_2            integer relation triples
    rel_ids_1, rel_ids_2            optional integer_id<TAB>uri relation names
    sup_ent_ids, ref_ent_ids        optional integer id pairs (gold links)
URIs become the entity ids; attribute triples are absent in this layout.

Malformed lines abort parsing with MalformedLineError carrying the path and
1-based line number. Blank lines are skipped.

Splits are deterministic functions of (pairs, ratios, seed) and invariant to
the input order of the pairs; counts use half-up rounding with the remainder
going to test.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    DuplicateEntityIdError,
    EmbedderFailureError,
    EmptySeedsError,
    InputError,
    MalformedLineError,
    MissingFileError,
    NotOneToOneError,
    RatioSumError,
    UnknownEntityError,
)
from .util import atomic_write_text

LOGGER = logging.getLogger(__name__)


class Triple(NamedTuple):
    subject: str
    relation: str
    object: str


class AttrTriple(NamedTuple):
    subject: str
    attribute: str
    value: str


class Edge(NamedTuple):
    """One adjacency entry. inverse=True means the entity is the object of
    the underlying triple and other is its subject."""

    relation: str
    other: str
    inverse: bool


@dataclass(frozen=True)
class KgStats:
    n_entities: int
    n_relations: int
    n_attributes: int
    n_rel_triples: int
    n_attr_triples: int


def local_name(entity_id: str) -> str:
    """Readable name derived from a URI-style id: the fragment after the last
    '/' or '#', with underscores as spaces. Non-URI ids pass through."""
    tail = entity_id
    for sep in ("#", "/"):
        pos = tail.rfind(sep)
        if pos != -1:
            tail = tail[pos + 1 :]
    return tail.replace("_", " ")


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable graph over string entity ids.

    name_of carries explicit display names; name_for() falls back to the
    URI local name, then the raw id.
    """

    entities: tuple[str, ...]
    rel_triples: tuple[Triple, ...]
    attr_triples: tuple[AttrTriple, ...]
    name_of: Mapping[str, str] = field(default_factory=dict)

    @staticmethod
    def build(
        rel_triples: Iterable[Triple],
        attr_triples: Iterable[AttrTriple] = (),
        name_of: Mapping[str, str] | None = None,
        extra_entities: Iterable[str] = (),
    ) -> "KnowledgeGraph":
        rel = tuple(Triple(*t) for t in rel_triples)
        attr = tuple(AttrTriple(*t) for t in attr_triples)
        ents: set[str] = set(extra_entities)
        for t in rel:
            ents.add(t.subject)
            ents.add(t.object)
        for a in attr:
            ents.add(a.subject)
        return KnowledgeGraph(
            entities=tuple(sorted(ents)),
            rel_triples=rel,
            attr_triples=attr,
            name_of=dict(name_of or {}),
        )

    @cached_property
    def _entity_set(self) -> frozenset[str]:
        return frozenset(self.entities)

    @cached_property
    def _out(self) -> dict[str, tuple[Edge, ...]]:
        acc: dict[str, list[Edge]] = {}
        for t in self.rel_triples:
            acc.setdefault(t.subject, []).append(Edge(t.relation, t.object, False))
        return {k: tuple(v) for k, v in acc.items()}

    @cached_property
    def _in(self) -> dict[str, tuple[Edge, ...]]:
        acc: dict[str, list[Edge]] = {}
        for t in self.rel_triples:
            acc.setdefault(t.object, []).append(Edge(t.relation, t.subject, True))
        return {k: tuple(v) for k, v in acc.items()}

    @cached_property
    def _attrs(self) -> dict[str, tuple[tuple[str, str], ...]]:
        acc: dict[str, list[tuple[str, str]]] = {}
        for a in self.attr_triples:
            acc.setdefault(a.subject, []).append((a.attribute, a.value))
        return {k: tuple(v) for k, v in acc.items()}

    def has_entity(self, entity_id: str) -> bool:
        return entity_id in self._entity_set

    def name_for(self, entity_id: str) -> str:
        explicit = self.name_of.get(entity_id)
        if explicit:
            return explicit
        derived = local_name(entity_id)
        return derived if derived else entity_id

    def out_edges(self, entity_id: str) -> tuple[Edge, ...]:
        return self._out.get(entity_id, ())

    def in_edges(self, entity_id: str) -> tuple[Edge, ...]:
        return self._in.get(entity_id, ())

    def neighborhood(self, entity_id: str) -> tuple[Edge, ...]:
        """Out-edges followed by inverse-flagged in-edges."""
        return self.out_edges(entity_id) + self.in_edges(entity_id)

    def attributes_of(self, entity_id: str) -> tuple[tuple[str, str], ...]:
        return self._attrs.get(entity_id, ())

    def stats(self) -> KgStats:
        return KgStats(
            n_entities=len(self.entities),
            n_relations=len({t.relation for t in self.rel_triples}),
            n_attributes=len({a.attribute for a in self.attr_triples}),
            n_rel_triples=len(self.rel_triples),
            n_attr_triples=len(self.attr_triples),
        )


SPLIT_TAGS = ("train", "val", "test")


@dataclass(frozen=True)
class SeedAlignments:
    """Gold one-to-one links between the two graphs, order preserved.

    tags, when present, is parallel to pairs and assigns each pair to
    train, val, or test. Parsers produce untagged seed sets (tags=None);
    the split constructors return tagged ones.
    """

    pairs: tuple[tuple[str, str], ...]
    tags: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        seen_s: set[str] = set()
        seen_t: set[str] = set()
        for s, t in self.pairs:
            if s in seen_s:
                raise NotOneToOneError(f"source entity linked twice: {s}")
            if t in seen_t:
                raise NotOneToOneError(f"target entity linked twice: {t}")
            seen_s.add(s)
            seen_t.add(t)
        if self.tags is not None:
            if len(self.tags) != len(self.pairs):
                raise InputError(f"{len(self.tags)} tags for {len(self.pairs)} pairs")
            for tag in self.tags:
                if tag not in SPLIT_TAGS:
                    raise InputError(f"unknown split tag {tag!r} (expected one of {SPLIT_TAGS})")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def is_tagged(self) -> bool:
        return self.tags is not None

    def by_tag(self, tag: str) -> tuple[tuple[str, str], ...]:
        if tag not in SPLIT_TAGS:
            raise InputError(f"unknown split tag {tag!r} (expected one of {SPLIT_TAGS})")
        if self.tags is None:
            raise InputError("seed set has no split tags; build one with make_split or make_hard_split")
        return tuple(p for p, t in zip(self.pairs, self.tags) if t == tag)

    @property
    def train(self) -> tuple[tuple[str, str], ...]:
        return self.by_tag("train")

    @property
    def val(self) -> tuple[tuple[str, str], ...]:
        return self.by_tag("val")

    @property
    def test(self) -> tuple[tuple[str, str], ...]:
        return self.by_tag("test")

    def counts(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.val), len(self.test))


@dataclass(frozen=True)
class DatasetBundle:
    source: KnowledgeGraph
    target: KnowledgeGraph
    seeds: SeedAlignments

    def __post_init__(self) -> None:
        for s, t in self.seeds.pairs:
            if not self.source.has_entity(s):
                raise UnknownEntityError(f"seed pair references unknown source entity: {s}")
            if not self.target.has_entity(t):
                raise UnknownEntityError(f"seed pair references unknown target entity: {t}")


# ---------------------------------------------------------------------------
# Parsing


def _read_lines(path: Path) -> list[tuple[int, str]]:
    if not path.is_file():
        raise MissingFileError(f"required dataset file missing: {path}")
    out: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.strip() == "":
                continue
            out.append((line_no, line))
    return out


def _parse_rel_file(path: Path) -> list[Triple]:
    triples: list[Triple] = []
    for line_no, line in _read_lines(path):
        fields = line.split("\t")
        if len(fields) != 3:
            raise MalformedLineError(str(path), line_no, f"expected 3 tab-separated fields, got {len(fields)}")
        triples.append(Triple(fields[0], fields[1], fields[2]))
    return triples


def _parse_attr_file(path: Path) -> list[AttrTriple]:
    triples: list[AttrTriple] = []
    for line_no, line in _read_lines(path):
        fields = line.split("\t")
        if len(fields) < 3:
            raise MalformedLineError(str(path), line_no, f"expected at least 3 tab-separated fields, got {len(fields)}")
        triples.append(AttrTriple(fields[0], fields[1], "\t".join(fields[2:])))
    return triples


def parse_openea(dataset_dir: str | Path) -> DatasetBundle:
    """Parse an OpenEA-layout directory into a validated bundle."""
    root = Path(dataset_dir)
    rel_1 = _parse_rel_file(root / "rel_triples_1")
    rel_2 = _parse_rel_file(root / "rel_triples_2")
    attr_1 = _parse_attr_file(root / "attr_triples_1")
    attr_2 = _parse_attr_file(root / "attr_triples_2")
    source = KnowledgeGraph.build(rel_1, attr_1)
    target = KnowledgeGraph.build(rel_2, attr_2)

    links_path = root / "ent_links"
    pairs: list[tuple[str, str]] = []
    for line_no, line in _read_lines(links_path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise MalformedLineError(str(links_path), line_no, f"expected 2 tab-separated fields, got {len(fields)}")
        s, t = fields
        if not source.has_entity(s):
            raise UnknownEntityError(f"{links_path}:{line_no}: unknown source entity {s!r}")
        if not target.has_entity(t):
            raise UnknownEntityError(f"{links_path}:{line_no}: unknown target entity {t!r}")
        pairs.append((s, t))
    return DatasetBundle(source=source, target=target, seeds=SeedAlignments(tuple(pairs)))


def _parse_id_map(path: Path) -> dict[int, str]:
    mapping: dict[int, str] = {}
    uris: set[str] = set()
    for line_no, line in _read_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise MalformedLineError(str(path), line_no, f"expected 2 tab-separated fields, got {len(fields)}")
        try:
            num = int(fields[0])
        except ValueError:
            raise MalformedLineError(str(path), line_no, f"first field is not an integer: {fields[0]!r}") from None
        uri = fields[1]
        if num in mapping:
            raise DuplicateEntityIdError(f"{path}:{line_no}: duplicate id {num}")
        if uri in uris:
            raise DuplicateEntityIdError(f"{path}:{line_no}: duplicate uri {uri!r}")
        mapping[num] = uri
        uris.add(uri)
    return mapping


def _parse_int_triples(path: Path) -> list[tuple[int, int, int]]:
    out: list[tuple[int, int, int]] = []
    for line_no, line in _read_lines(path):
        fields = line.split("\t")
        if len(fields) != 3:
            raise MalformedLineError(str(path), line_no, f"expected 3 tab-separated fields, got {len(fields)}")
        try:
            out.append((int(fields[0]), int(fields[1]), int(fields[2])))
        except ValueError:
            raise MalformedLineError(str(path), line_no, "triple fields must be integers") from None
    return out


def _parse_int_pairs(path: Path) -> list[tuple[int, int, int]]:
    out: list[tuple[int, int, int]] = []
    for line_no, line in _read_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise MalformedLineError(str(path), line_no, f"expected 2 tab-separated fields, got {len(fields)}")
        try:
            out.append((line_no, int(fields[0]), int(fields[1])))
        except ValueError:
            raise MalformedLineError(str(path), line_no, "pair fields must be integers") from None
    return out


def parse_dbp15k(dataset_dir: str | Path) -> DatasetBundle:
    """Parse a DBP15K-layout directory. URIs become entity ids; names derive
    from URI local names. Gold links are sup_ent_ids + ref_ent_ids in file
    order (splitting is a separate, seeded stage)."""
    root = Path(dataset_dir)
    ent_1 = _parse_id_map(root / "ent_ids_1")
    ent_2 = _parse_id_map(root / "ent_ids_2")

    rel_names: dict[int, str] = {}
    for rel_file in ("rel_ids_1", "rel_ids_2"):
        path = root / rel_file
        if path.is_file():
            for num, uri in _parse_id_map(path).items():
                rel_names.setdefault(num, uri)

    def build_side(ids: dict[int, str], triples_file: str) -> KnowledgeGraph:
        path = root / triples_file
        triples: list[Triple] = []
        for line_no, line in _read_lines(path):
            fields = line.split("\t")
            if len(fields) != 3:
                raise MalformedLineError(str(path), line_no, f"expected 3 tab-separated fields, got {len(fields)}")
            try:
                h, r, t = (int(f) for f in fields)
            except ValueError:
                raise MalformedLineError(str(path), line_no, "triple fields must be integers") from None
            if h not in ids:
                raise MalformedLineError(str(path), line_no, f"unknown entity id {h}")
            if t not in ids:
                raise MalformedLineError(str(path), line_no, f"unknown entity id {t}")
            rel_label = rel_names.get(r, f"rel_{r}")
            triples.append(Triple(ids[h], local_name(rel_label) or rel_label, ids[t]))
        return KnowledgeGraph.build(triples, extra_entities=ids.values())

    source = build_side(ent_1, "triples_1")
    target = build_side(ent_2, "triples_2")

    pairs: list[tuple[str, str]] = []
    for link_file in ("sup_ent_ids", "ref_ent_ids"):
        path = root / link_file
        if not path.is_file():
            continue
        for line_no, a, b in _parse_int_pairs(path):
            if a not in ent_1:
                raise MalformedLineError(str(path), line_no, f"unknown source entity id {a}")
            if b not in ent_2:
                raise MalformedLineError(str(path), line_no, f"unknown target entity id {b}")
            pairs.append((ent_1[a], ent_2[b]))
    return DatasetBundle(source=source, target=target, seeds=SeedAlignments(tuple(pairs)))


def load_bundle(dataset_dir: str | Path, fmt: str) -> DatasetBundle:
    if fmt == "openea":
        return parse_openea(dataset_dir)
    if fmt == "dbp15k":
        return parse_dbp15k(dataset_dir)
    raise ValueError(f"unknown dataset format {fmt!r} (expected 'openea' or 'dbp15k')")


def write_openea(bundle: DatasetBundle, dataset_dir: str | Path) -> None:
    """Write a bundle back out in the OpenEA layout (canonical file order)."""
    root = Path(dataset_dir)
    root.mkdir(parents=True, exist_ok=True)

    def rel_lines(kg: KnowledgeGraph) -> str:
        return "".join(f"{t.subject}\t{t.relation}\t{t.object}\n" for t in kg.rel_triples)

    def attr_lines(kg: KnowledgeGraph) -> str:
        return "".join(f"{a.subject}\t{a.attribute}\t{a.value}\n" for a in kg.attr_triples)

    atomic_write_text(root / "rel_triples_1", rel_lines(bundle.source))
    atomic_write_text(root / "rel_triples_2", rel_lines(bundle.target))
    atomic_write_text(root / "attr_triples_1", attr_lines(bundle.source))
    atomic_write_text(root / "attr_triples_2", attr_lines(bundle.target))
    atomic_write_text(root / "ent_links", "".join(f"{s}\t{t}\n" for s, t in bundle.seeds.pairs))


# ---------------------------------------------------------------------------
# Splits


def _check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise RatioSumError(f"expected 3 ratios (train, val, test), got {len(ratios)}")
    r_train, r_val, r_test = (float(r) for r in ratios)
    if min(r_train, r_val, r_test) < 0:
        raise RatioSumError(f"ratios must be non-negative, got {ratios}")
    total = r_train + r_val + r_test
    if abs(total - 1.0) > 1e-9:
        raise RatioSumError(f"ratios must sum to 1, got {total}")
    return r_train, r_val, r_test


def _split_counts(n: int, r_train: float, r_val: float) -> tuple[int, int, int]:
    """Half-up rounded train/val counts; the remainder is test."""
    n_train = int(np.floor(r_train * n + 0.5))
    n_val = int(np.floor(r_val * n + 0.5))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def _tagged(pairs: list[tuple[str, str]], assignment: dict[tuple[str, str], str]) -> SeedAlignments:
    return SeedAlignments(pairs=tuple(pairs), tags=tuple(assignment[p] for p in pairs))


def make_split(
    seeds: SeedAlignments,
    ratios: Sequence[float] = (0.3, 0.1, 0.6),
    seed: int = 0,
) -> SeedAlignments:
    """Seeded random split. Pairs are sorted before shuffling, so the
    resulting tags are invariant to the order of the input pairs."""
    r_train, r_val, _ = _check_ratios(ratios)
    if len(seeds) == 0:
        raise EmptySeedsError("cannot split an empty seed set")
    pairs = sorted(seeds.pairs)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(pairs))
    n_train, n_val, _ = _split_counts(len(pairs), r_train, r_val)
    assignment: dict[tuple[str, str], str] = {}
    for rank, i in enumerate(perm.tolist()):
        if rank < n_train:
            tag = "train"
        elif rank < n_train + n_val:
            tag = "val"
        else:
            tag = "test"
        assignment[pairs[i]] = tag
    return _tagged(pairs, assignment)


HARD_SPLIT_RATIOS = (0.3, 0.1, 0.6)


def make_hard_split(
    bundle: DatasetBundle,
    name_embedder,
    seed: int = 0,
) -> SeedAlignments:
    """Adversarial split: the 60% of gold pairs whose entity names are least
    similar under the injected embedding provider become the test set, so
    models cannot lean on trivial name matches. The remaining pairs are
    shuffled (seeded) into 30% train / 10% validation.

    name_embedder must expose embed_batch(list[str]) -> (n, d) array; rows
    are compared by dot product. Entities without any usable name fall back
    to their raw id string (logged). Similarity ties break by pair id, and
    the resulting tags are invariant to the input order of the pairs.
    """
    r_train, r_val, _ = HARD_SPLIT_RATIOS
    if len(bundle.seeds) == 0:
        raise EmptySeedsError("cannot split an empty seed set")
    pairs = sorted(bundle.seeds.pairs)

    fallback_ids: list[str] = []

    def display_name(kg: KnowledgeGraph, eid: str) -> str:
        explicit = kg.name_of.get(eid)
        if explicit:
            return explicit
        derived = local_name(eid)
        if derived and derived != eid:
            return derived
        fallback_ids.append(eid)
        return eid

    names_s = [display_name(bundle.source, s) for s, _ in pairs]
    names_t = [display_name(bundle.target, t) for _, t in pairs]
    if fallback_ids:
        LOGGER.warning(
            "hard split: %d seed entities have no name, using raw ids (first: %s)",
            len(fallback_ids),
            fallback_ids[0],
        )
    try:
        emb_s = np.asarray(name_embedder.embed_batch(names_s), dtype=np.float64)
        emb_t = np.asarray(name_embedder.embed_batch(names_t), dtype=np.float64)
    except Exception as exc:
        raise EmbedderFailureError(f"name embedder failed: {exc}") from exc
    if emb_s.ndim != 2 or emb_s.shape[0] != len(pairs) or emb_t.shape != emb_s.shape:
        raise EmbedderFailureError(
            f"name embedder returned shapes {emb_s.shape} and {emb_t.shape} for {len(pairs)} pairs"
        )
    sims = np.einsum("ij,ij->i", emb_s, emb_t)

    n_train, n_val, n_test = _split_counts(len(pairs), r_train, r_val)
    order = sorted(range(len(pairs)), key=lambda i: (sims[i], pairs[i]))
    assignment: dict[tuple[str, str], str] = {pairs[i]: "test" for i in order[:n_test]}

    rest = [pairs[i] for i in sorted(set(range(len(pairs))) - set(order[:n_test]))]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(rest))
    for rank, i in enumerate(perm.tolist()):
        assignment[rest[i]] = "train" if rank < n_train else "val"
    return _tagged(pairs, assignment)


def save_split(seeds: SeedAlignments, path: str | Path) -> None:
    """TSV: source<TAB>target<TAB>tag, one line per pair in pair order."""
    if seeds.tags is None:
        raise InputError("cannot save an untagged seed set as a split")
    lines = [f"{s}\t{t}\t{tag}\n" for (s, t), tag in zip(seeds.pairs, seeds.tags)]
    atomic_write_text(path, "".join(lines))


def load_split(path: str | Path) -> SeedAlignments:
    pairs: list[tuple[str, str]] = []
    tags: list[str] = []
    seen: set[tuple[str, str]] = set()
    p = Path(path)
    for line_no, line in _read_lines(p):
        fields = line.split("\t")
        if len(fields) != 3:
            raise MalformedLineError(str(p), line_no, f"expected 3 tab-separated fields, got {len(fields)}")
        s, t, tag = fields
        if tag not in SPLIT_TAGS:
            raise MalformedLineError(str(p), line_no, f"unknown split tag {tag!r}")
        if (s, t) in seen:
            raise MalformedLineError(str(p), line_no, f"duplicate pair {s!r} -> {t!r}")
        seen.add((s, t))
        pairs.append((s, t))
        tags.append(tag)
    return SeedAlignments(pairs=tuple(pairs), tags=tuple(tags))
