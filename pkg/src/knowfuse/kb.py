"""Knowledge base loading, dictionary entity linking, and the token-entity
matching matrix.

The KB lives in three TSV files inside one directory:

* ``entities.tsv``  — ``entity_id \\t canonical_name \\t syn1|syn2|...``
* ``relations.tsv`` — ``relation_id \\t name``
* ``triples.tsv``   — ``head_id \\t relation_id \\t tail_id``

Linking is a deterministic greedy left-to-right longest match against the
synonym lexicon; matched spans are consumed, so no token ever belongs to two
entities and the matching matrix has row sums in {0, 1}.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import FormatError, IntegrityError

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; separators are dropped."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Entity:
    entity_id: str
    canonical_name: str
    synonyms: tuple[str, ...]  # lowercase, canonical first


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str


class KnowledgeBase:
    """Entities, relations, triples, and the surface-form lexicon."""

    def __init__(self, entities: Sequence[Entity], relations: dict[str, str], triples: Sequence[Triple]):
        self.entities: dict[str, Entity] = {}
        for ent in entities:
            if ent.entity_id in self.entities:
                raise FormatError(f"duplicate entity id {ent.entity_id!r}")
            self.entities[ent.entity_id] = ent
        self.relations = dict(relations)
        for tr in triples:
            if tr.head not in self.entities or tr.tail not in self.entities:
                raise IntegrityError(f"triple {tr} references an unknown entity")
            if tr.relation not in self.relations:
                raise IntegrityError(f"triple {tr} references an unknown relation")
        self.triples = list(triples)

        # Surface form -> entity id; first claim wins (file order priority).
        self.lexicon: dict[str, str] = {}
        self.max_key_tokens = 0
        for ent in self.entities.values():
            for surface in ent.synonyms:
                toks = tokenize(surface)
                if not toks:
                    continue
                key = " ".join(toks)
                self.lexicon.setdefault(key, ent.entity_id)
                self.max_key_tokens = max(self.max_key_tokens, len(toks))

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_triples(self) -> int:
        return len(self.triples)

    def entity_ids(self) -> list[str]:
        return list(self.entities.keys())

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return (self.entities == other.entities and self.relations == other.relations
                and self.triples == other.triples)


def _normalize_entity(entity_id: str, canonical: str, synonyms: Iterable[str]) -> Entity:
    canonical = canonical.strip()
    seen: list[str] = [canonical.lower()]
    for s in synonyms:
        s = s.strip().lower()
        if s and s not in seen:
            seen.append(s)
    return Entity(entity_id=entity_id, canonical_name=canonical, synonyms=tuple(seen))


def load_kb(path) -> KnowledgeBase:
    """Load a KB directory; raises FormatError/IntegrityError on bad files."""
    root = Path(path)
    entities: list[Entity] = []
    for line_no, parts in _tsv_rows(root / "entities.tsv"):
        if len(parts) != 3:
            raise FormatError(f"entities.tsv line {line_no}: expected 3 columns, got {len(parts)}")
        entity_id, canonical, syn_field = parts
        entities.append(_normalize_entity(entity_id, canonical, syn_field.split("|") if syn_field else []))

    relations: dict[str, str] = {}
    for line_no, parts in _tsv_rows(root / "relations.tsv"):
        if len(parts) != 2:
            raise FormatError(f"relations.tsv line {line_no}: expected 2 columns, got {len(parts)}")
        if parts[0] in relations:
            raise FormatError(f"relations.tsv line {line_no}: duplicate relation id {parts[0]!r}")
        relations[parts[0]] = parts[1]

    triples: list[Triple] = []
    for line_no, parts in _tsv_rows(root / "triples.tsv"):
        if len(parts) != 3:
            raise FormatError(f"triples.tsv line {line_no}: expected 3 columns, got {len(parts)}")
        triples.append(Triple(head=parts[0], relation=parts[1], tail=parts[2]))

    return KnowledgeBase(entities, relations, triples)


def save_kb(kb: KnowledgeBase, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "entities.tsv", "w", encoding="utf-8") as fh:
        for ent in kb.entities.values():
            fh.write(f"{ent.entity_id}\t{ent.canonical_name}\t{'|'.join(ent.synonyms)}\n")
    with open(root / "relations.tsv", "w", encoding="utf-8") as fh:
        for rid, name in kb.relations.items():
            fh.write(f"{rid}\t{name}\n")
    with open(root / "triples.tsv", "w", encoding="utf-8") as fh:
        for tr in kb.triples:
            fh.write(f"{tr.head}\t{tr.relation}\t{tr.tail}\n")


def _tsv_rows(path: Path):
    if not path.exists():
        raise FormatError(f"missing KB file {path}")
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            yield line_no, line.split("\t")


@dataclass
class LinkedText:
    """A token sequence with its ordered entity mentions.

    ``entity_seq`` holds ``(entity_id, (start, stop))`` with half-open,
    non-overlapping spans in text order. ``token_ids`` is attached once a
    vocabulary exists.
    """

    tokens: list[str]
    entity_seq: list[tuple[str, tuple[int, int]]]
    token_ids: Optional[np.ndarray] = None

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def n_entities(self) -> int:
        return len(self.entity_seq)

    def entity_ids(self) -> list[str]:
        return [eid for eid, _ in self.entity_seq]


def link_entities(tokens: Sequence[str], kb: KnowledgeBase) -> LinkedText:
    """Greedy left-to-right longest match; consumed spans never overlap."""
    tokens = list(tokens)
    n = len(tokens)
    spans: list[tuple[str, tuple[int, int]]] = []
    i = 0
    while i < n:
        hit = None
        for width in range(min(kb.max_key_tokens, n - i), 0, -1):
            eid = kb.lexicon.get(" ".join(tokens[i:i + width]))
            if eid is not None:
                hit = (eid, (i, i + width))
                break
        if hit is None:
            i += 1
        else:
            spans.append(hit)
            i = hit[1][1]
    return LinkedText(tokens=tokens, entity_seq=spans)


def build_matching_matrix(linked: LinkedText) -> np.ndarray:
    """Binary token-by-entity incidence matrix: 1 iff token i is inside span j."""
    p = np.zeros((linked.n_tokens, linked.n_entities), dtype=np.float64)
    for j, (_, (start, stop)) in enumerate(linked.entity_seq):
        if not (0 <= start < stop <= linked.n_tokens):
            raise IntegrityError(f"span ({start}, {stop}) outside text of {linked.n_tokens} tokens")
        p[start:stop, j] = 1.0
    return p


def extract_subgraph(kb: KnowledgeBase, entity_set: set[str]) -> list[Triple]:
    """Triples whose head and tail both lie inside entity_set."""
    return [tr for tr in kb.triples if tr.head in entity_set and tr.tail in entity_set]


def corpus_entity_set(corpus: Iterable[LinkedText]) -> set[str]:
    out: set[str] = set()
    for linked in corpus:
        out.update(linked.entity_ids())
    return out


class Vocabulary:
    """Closed word vocabulary with [UNK] and [MASK]; built from training text."""

    UNK = "[UNK]"
    MASK = "[MASK]"

    def __init__(self, words: Sequence[str]):
        self.id_to_token = [self.UNK, self.MASK] + [w for w in words if w not in (self.UNK, self.MASK)]
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise FormatError("vocabulary contains duplicate words")

    @classmethod
    def from_token_lists(cls, token_lists: Iterable[Sequence[str]]) -> "Vocabulary":
        return cls(sorted({tok for toks in token_lists for tok in toks}))

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def mask_id(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.token_to_id.get(tok, self.unk_id) for tok in tokens], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]


@dataclass
class CorpusSample:
    sample_id: str
    image: str
    text: str
    split: str


def load_corpus(path) -> list[CorpusSample]:
    """Read corpus.jsonl: one {"id", "image", "text", "split"} object per line."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"corpus line {line_no}: invalid JSON ({exc})") from exc
            missing = {"id", "image", "text", "split"} - obj.keys()
            if missing:
                raise FormatError(f"corpus line {line_no}: missing keys {sorted(missing)}")
            if obj["split"] not in ("train", "val", "test"):
                raise FormatError(f"corpus line {line_no}: bad split {obj['split']!r}")
            samples.append(CorpusSample(str(obj["id"]), obj["image"], obj["text"], obj["split"]))
    return samples


def write_corpus(samples: Iterable[CorpusSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({"id": s.sample_id, "image": s.image, "text": s.text, "split": s.split}) + "\n")
