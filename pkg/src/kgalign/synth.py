"""Synthetic aligned KG pairs with controllable hardness.

A procedural base graph is generated from a seed, then cloned into a second
namespace; the clone can be perturbed to make alignment harder while the
gold mapping stays known by construction:

  * attr_dropout: each attribute triple of the clone is dropped i.i.d.
  * triple_dropout: each relational triple of the clone is dropped i.i.d.
  * synonym substitution: relation labels, attribute labels, and whole
    words inside literal values are rewritten through a lexicon, so the two
    sides describe the same facts in different vocabulary.
  * name_corruption: a fraction of clone entities get a locally mangled
    name (and URI local name), weakening the trivial name-match signal.

With every perturbation at zero the clone's descriptions are character for
character identical to the source's, which pins the noise-free end-to-end
expectation (every source retrieves its own clone first).

All randomness is drawn from per-purpose generators derived with
stable_seed, so results are reproducible and independent of generation
order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import InputError, MalformedLineError, MissingFileError
from .kg import AttrTriple, DatasetBundle, KnowledgeGraph, SeedAlignments, Triple
from .util import stable_seed

_SYLLABLES = (
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du",
    "fa", "fe", "fi", "fo", "fu", "ga", "ge", "gi", "go", "gu",
    "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu",
    "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu",
)

_TYPE_WORDS = ("City", "Lake", "River", "Mountain", "Museum", "Bridge", "Island", "Harbor")

# (attribute label, kind) per type; numeric kinds draw from the stated range
_TYPE_ATTRS: dict[str, tuple[tuple[str, str], ...]] = {
    "City": (("population", "int:1000:2000000"), ("founded", "year"), ("motto", "words")),
    "Lake": (("area", "int:2:9000"), ("depth", "int:1:300"), ("shore", "words")),
    "River": (("length", "int:10:6000"), ("discharge", "int:1:9000"), ("basin", "words")),
    "Mountain": (("elevation", "int:300:8800"), ("first_ascent", "year"), ("range", "words")),
    "Museum": (("established", "year"), ("collection_size", "int:100:900000"), ("theme", "words")),
    "Bridge": (("length", "int:20:4000"), ("opened", "year"), ("design", "words")),
    "Island": (("area", "int:1:100000"), ("population", "int:0:500000"), ("coast", "words")),
    "Harbor": (("opened", "year"), ("traffic", "int:100:800000"), ("pier", "words")),
}

_REL_LABELS = ("located_in", "adjacent_to", "part_of", "flows_into", "near")

_VALUE_WORDS = (
    "ancient", "brave", "strong", "silver", "golden", "northern", "southern",
    "quiet", "rapid", "stone", "iron", "green", "white", "royal", "free",
    "united", "grand", "high", "deep", "long", "wide", "old", "new", "red",
)

# Built-in lexicon for synonym substitution: type words, relation labels,
# attribute labels, and value words all have a counterpart, so a fully
# substituted clone shares almost no content words with the source.
DEFAULT_SYNONYMS: dict[str, str] = {
    "City": "Metropolis",
    "Lake": "Loch",
    "River": "Stream",
    "Mountain": "Peak",
    "Museum": "Gallery",
    "Bridge": "Crossing",
    "Island": "Isle",
    "Harbor": "Port",
    "located_in": "situated_in",
    "adjacent_to": "next_to",
    "part_of": "member_of",
    "flows_into": "drains_into",
    "near": "close_to",
    "population": "inhabitants",
    "founded": "established_in",
    "motto": "slogan",
    "area": "extent",
    "depth": "deepness",
    "shore": "waterfront",
    "length": "span",
    "discharge": "outflow",
    "basin": "catchment",
    "elevation": "altitude",
    "first_ascent": "first_climb",
    "range": "massif",
    "established": "founded_on",
    "collection_size": "holdings",
    "theme": "subject",
    "opened": "inaugurated",
    "design": "structure",
    "coast": "shoreline",
    "traffic": "throughput",
    "pier": "quay",
    "label": "designation",
    "ancient": "olden",
    "brave": "valiant",
    "strong": "mighty",
    "silver": "argent",
    "golden": "gilded",
    "northern": "boreal",
    "southern": "austral",
    "quiet": "tranquil",
    "rapid": "swift",
    "stone": "rock",
    "iron": "ferrous",
    "green": "verdant",
    "white": "pale",
    "royal": "regal",
    "free": "liberated",
    "united": "joined",
    "grand": "stately",
    "high": "lofty",
    "deep": "profound",
    "long": "extended",
    "wide": "broad",
    "old": "aged",
    "new": "recent",
    "red": "crimson",
}


def _index_word(i: int) -> str:
    """Bijective base-40 syllable encoding: every index gets a distinct
    pronounceable word."""
    if i < 0:
        raise InputError(f"index must be >= 0, got {i}")
    parts = [_SYLLABLES[i % len(_SYLLABLES)]]
    i //= len(_SYLLABLES)
    while i > 0:
        i -= 1
        parts.append(_SYLLABLES[i % len(_SYLLABLES)])
        i //= len(_SYLLABLES)
    return "".join(reversed(parts)).capitalize()


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; all-zero perturbations produce an exact clone."""

    n_entities: int = 2000
    seed: int = 0
    attr_dropout: float = 0.0
    triple_dropout: float = 0.0
    apply_synonyms: bool = False
    synonyms: Mapping[str, str] | None = None  # None = DEFAULT_SYNONYMS
    name_corruption: float = 0.0
    source_namespace: str = "http://one.example.org/resource"
    target_namespace: str = "http://two.example.org/resource"

    def __post_init__(self) -> None:
        if self.n_entities < 2:
            raise InputError(f"n_entities must be >= 2, got {self.n_entities}")
        for name, rate in (
            ("attr_dropout", self.attr_dropout),
            ("triple_dropout", self.triple_dropout),
            ("name_corruption", self.name_corruption),
        ):
            if not 0.0 <= rate <= 1.0:
                raise InputError(f"{name} must be in [0, 1], got {rate}")
        if self.source_namespace == self.target_namespace:
            raise InputError("source and target namespaces must differ")

    def lexicon(self) -> Mapping[str, str]:
        return DEFAULT_SYNONYMS if self.synonyms is None else self.synonyms


def load_lexicon(path: str | Path) -> dict[str, str]:
    """TSV lexicon: word<TAB>replacement per line, blank lines skipped."""
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"lexicon file missing: {p}")
    out: dict[str, str] = {}
    with open(p, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise MalformedLineError(str(p), line_no, "expected word<TAB>replacement")
            out[fields[0]] = fields[1]
    return out


def _entity_name(i: int) -> str:
    return f"{_index_word(i)} {_TYPE_WORDS[i % len(_TYPE_WORDS)]}"


def _uri(namespace: str, name: str) -> str:
    return f"{namespace}/{name.replace(' ', '_')}"


def _base_value(kind: str, rng: np.random.Generator) -> str:
    if kind == "year":
        return str(int(rng.integers(1400, 2020)))
    if kind == "words":
        k = int(rng.integers(2, 4))
        picks = rng.choice(len(_VALUE_WORDS), size=k, replace=False)
        return " ".join(_VALUE_WORDS[int(j)] for j in picks)
    _, lo, hi = kind.split(":")
    return str(int(rng.integers(int(lo), int(hi))))


def generate_base(config: SynthConfig) -> KnowledgeGraph:
    """Procedural source graph: one entity per index with a distinct name,
    a label attribute, type-specific attributes, and 2-4 out-edges (a ring
    edge keeps the graph connected)."""
    n = config.n_entities
    names = [_entity_name(i) for i in range(n)]
    uris = [_uri(config.source_namespace, name) for name in names]

    attr_triples: list[AttrTriple] = []
    rel_triples: list[Triple] = []
    for i in range(n):
        rng = np.random.default_rng(stable_seed("synth-entity", config.seed, i))
        type_word = _TYPE_WORDS[i % len(_TYPE_WORDS)]
        attr_triples.append(AttrTriple(uris[i], "label", names[i]))
        for attr_label, kind in _TYPE_ATTRS[type_word]:
            attr_triples.append(AttrTriple(uris[i], attr_label, _base_value(kind, rng)))
        rel_triples.append(Triple(uris[i], "adjacent_to", uris[(i + 1) % n]))
        for _ in range(int(rng.integers(1, 4))):
            j = int(rng.integers(0, n - 1))
            if j >= i:
                j += 1  # uniform over the other entities
            label = _REL_LABELS[int(rng.integers(0, len(_REL_LABELS)))]
            rel_triples.append(Triple(uris[i], label, uris[j]))
    return KnowledgeGraph.build(rel_triples, attr_triples, extra_entities=uris)


def _substituter(lexicon: Mapping[str, str]):
    if not lexicon:
        return lambda text: text
    pattern = re.compile(r"\b(" + "|".join(re.escape(w) for w in sorted(lexicon, key=len, reverse=True)) + r")\b")
    return lambda text: pattern.sub(lambda m: lexicon[m.group(1)], text)


def _corrupt_word(word: str, rng: np.random.Generator) -> str:
    """One local mangle: drop a vowel, swap adjacent characters, or double
    a character; the result always differs from the input for len >= 2."""
    if len(word) < 2:
        return word + "x"
    op = int(rng.integers(0, 3))
    vowel_positions = [k for k, ch in enumerate(word) if ch.lower() in "aeiou"]
    if op == 0 and vowel_positions:
        k = vowel_positions[int(rng.integers(0, len(vowel_positions)))]
        return word[:k] + word[k + 1 :]
    if op == 1:
        k = int(rng.integers(0, len(word) - 1))
        swapped = word[:k] + word[k + 1] + word[k] + word[k + 2 :]
        if swapped != word:
            return swapped
    k = int(rng.integers(0, len(word)))
    return word[: k + 1] + word[k] + word[k + 1 :]


def generate_bundle(config: SynthConfig) -> DatasetBundle:
    """Source graph plus its (optionally perturbed) clone and the full gold
    mapping. Every entity keeps at least its ring edge, so no clone entity
    loses all its triples to dropout."""
    source = generate_base(config)
    n = config.n_entities
    sub = _substituter(config.lexicon()) if config.apply_synonyms else (lambda text: text)

    names = [_entity_name(i) for i in range(n)]
    src_uris = [_uri(config.source_namespace, name) for name in names]
    tgt_names: list[str] = []
    for i in range(n):
        name = names[i]
        if config.name_corruption > 0.0:
            rng = np.random.default_rng(stable_seed("synth-name", config.seed, i))
            if rng.random() < config.name_corruption:
                first, rest = name.split(" ", 1)
                name = f"{_corrupt_word(first, rng)} {rest}"
        tgt_names.append(sub(name))
    tgt_uris = [_uri(config.target_namespace, tname) for tname in tgt_names]
    if len(set(tgt_uris)) != n:
        raise InputError("name corruption produced colliding target ids; use a different seed")
    mapping = dict(zip(src_uris, tgt_uris))

    drop_rng = np.random.default_rng(stable_seed("synth-dropout", config.seed))
    rel_triples: list[Triple] = []
    ring = {(src_uris[i], "adjacent_to", src_uris[(i + 1) % n]) for i in range(n)}
    for t in source.rel_triples:
        is_ring = (t.subject, t.relation, t.object) in ring
        if not is_ring and config.triple_dropout > 0.0 and drop_rng.random() < config.triple_dropout:
            continue
        rel_triples.append(Triple(mapping[t.subject], sub(t.relation), mapping[t.object]))

    attr_triples: list[AttrTriple] = []
    by_subject_name = dict(zip(src_uris, tgt_names))
    for a in source.attr_triples:
        if config.attr_dropout > 0.0 and drop_rng.random() < config.attr_dropout:
            continue
        value = by_subject_name[a.subject] if a.attribute == "label" else sub(a.value)
        attr_triples.append(AttrTriple(mapping[a.subject], sub(a.attribute), value))

    target = KnowledgeGraph.build(rel_triples, attr_triples, extra_entities=tgt_uris)
    seeds = SeedAlignments(pairs=tuple(sorted(mapping.items())))
    return DatasetBundle(source=source, target=target, seeds=seeds)
