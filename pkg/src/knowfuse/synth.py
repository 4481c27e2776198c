"""Deterministic synthetic knowledge base plus paired images and texts.

Every pair names a small entity subset. The image is a superposition of
per-entity glyphs (axis-aligned intensity blocks on a 4x4 cell grid, cell
choice and texture hashed from the entity id and the corpus seed), and the
text mentions each entity verbatim via one of its synonyms, separated by
"and" so the dictionary linker recovers the gold entities with recall 1.0.
All randomness flows through named substreams of one seed; per-pair streams
are keyed by pair id, so regeneration is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .images import write_pgm
from .kb import CorpusSample, Entity, KnowledgeBase, Triple, save_kb, tokenize, write_corpus
from .rng import substream

_SYLLABLES = ["ka", "ro", "mel", "tin", "vor", "za", "lu", "bex", "nor", "fi",
              "gam", "pol", "dra", "sen", "qua", "lim", "tor", "ven", "spi", "dul"]

_RELATION_NAMES = ["relates to", "located in", "derived from", "adjacent to",
                   "part of", "associated with"]

# 60 everyday words; the generator never uses them as entity surfaces, and the
# 2-token synonym suffix "pattern" is deliberately absent.
_FILLER_MASTER = [
    "while", "soft", "texture", "remains", "visible", "near", "faint", "edge",
    "region", "bright", "dark", "broad", "narrow", "upper", "lower", "left",
    "right", "central", "diffuse", "sharp", "smooth", "rough", "large", "small",
    "round", "linear", "curved", "dense", "sparse", "clear", "blurred", "even",
    "uneven", "mild", "strong", "weak", "thin", "thick", "outer", "inner",
    "distal", "medial", "apex", "base", "margin", "zone", "band", "layer",
    "field", "area", "axis", "corner", "border", "stripe", "patch", "spot",
    "halo", "shade", "trace", "grain",
]

_GLYPH_GRID = 4  # glyph cells per image side


@dataclass
class GeneratorConfig:
    n_entities: int = 24
    n_relations: int = 3
    triple_density: float = 0.08
    n_pairs: int = 500
    entities_per_pair: int = 2
    image_size: int = 32
    n_filler_words: int = 50
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.triple_density <= 1.0):
            raise ConfigError(f"triple_density must lie in [0, 1], got {self.triple_density}")
        if self.entities_per_pair < 1:
            raise ConfigError("entities_per_pair must be >= 1")
        if self.image_size % _GLYPH_GRID:
            raise ConfigError(f"image_size must be divisible by {_GLYPH_GRID}")
        if self.n_filler_words > len(_FILLER_MASTER):
            raise ConfigError(f"at most {len(_FILLER_MASTER)} filler words available")


@dataclass
class SyntheticPair:
    pair_id: str
    image: np.ndarray
    text: str
    gold_entities: list[str]
    split: str = ""


def _pseudo_word(rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        n_syl = int(rng.integers(2, 4))
        word = "".join(rng.choice(_SYLLABLES) for _ in range(n_syl))
        if word not in taken and word not in _FILLER_MASTER:
            taken.add(word)
            return word


def generate_kb(cfg: GeneratorConfig) -> KnowledgeBase:
    """Entities with 1-3 unique synonyms, relations, and density-sampled triples."""
    rng = substream(cfg.seed, "kb")
    taken: set[str] = set()
    entities = []
    for i in range(cfg.n_entities):
        canonical = _pseudo_word(rng, taken)
        synonyms = [canonical]
        if rng.random() < 0.4:
            synonyms.append(_pseudo_word(rng, taken))
        if rng.random() < 0.4:
            synonyms.append(f"{canonical} pattern")
        entities.append(Entity(entity_id=f"E{i:03d}", canonical_name=canonical,
                               synonyms=tuple(synonyms)))

    relations = {f"R{j}": _RELATION_NAMES[j % len(_RELATION_NAMES)]
                 for j in range(cfg.n_relations)}

    candidates = [(h, r, t)
                  for h in range(cfg.n_entities)
                  for t in range(cfg.n_entities) if t != h
                  for r in range(cfg.n_relations)]
    n_sample = int(round(cfg.triple_density * len(candidates)))
    chosen = substream(cfg.seed, "triples").choice(len(candidates), size=n_sample, replace=False)
    triples = [Triple(f"E{candidates[k][0]:03d}", f"R{candidates[k][1]}", f"E{candidates[k][2]:03d}")
               for k in sorted(int(c) for c in chosen)]
    return KnowledgeBase(entities, relations, triples)


def _glyph_canvas(entity_id: str, seed: int, image_size: int) -> np.ndarray:
    """Deterministic per-entity glyph: three textured cells on the block grid."""
    rng = substream(seed, f"glyph:{entity_id}")
    cell = image_size // _GLYPH_GRID
    canvas = np.zeros((image_size, image_size))
    cells = rng.choice(_GLYPH_GRID * _GLYPH_GRID, size=3, replace=False)
    for c in cells:
        row, col = divmod(int(c), _GLYPH_GRID)
        intensity = float(rng.uniform(0.35, 0.95))
        style = int(rng.integers(0, 3))
        block = np.full((cell, cell), intensity)
        if style == 1:  # checkerboard
            yy, xx = np.indices((cell, cell))
            block *= np.where((yy // 2 + xx // 2) % 2 == 0, 1.0, 0.45)
        elif style == 2:  # horizontal stripes
            block *= np.where((np.arange(cell) // 2 % 2 == 0)[:, None], 1.0, 0.45)
        canvas[row * cell:(row + 1) * cell, col * cell:(col + 1) * cell] = block
    return canvas


def render_image(entity_ids, seed: int, image_size: int) -> np.ndarray:
    """Superpose glyphs of the given entities; depends only on (ids, seed)."""
    canvas = np.zeros((image_size, image_size))
    for eid in sorted(entity_ids):
        canvas = np.maximum(canvas, _glyph_canvas(eid, seed, image_size))
    return canvas


def generate_pair(kb: KnowledgeBase, entity_subset, cfg: GeneratorConfig,
                  rng: np.random.Generator, pair_id: str = "p0") -> SyntheticPair:
    """One image-text pair naming the subset's entities."""
    subset = list(entity_subset)
    if not subset:
        raise ConfigError("entity subset must be non-empty")
    for eid in subset:
        if eid not in kb.entities:
            raise ConfigError(f"unknown entity id {eid!r}")

    mentions = []
    for eid in subset:
        synonyms = kb.entities[eid].synonyms
        mentions.append(synonyms[int(rng.integers(0, len(synonyms)))])
    fillers = list(rng.choice(_FILLER_MASTER[:cfg.n_filler_words],
                              size=int(rng.integers(5, 17)), replace=True))
    text = "the image shows " + " and ".join(mentions) + " with " + " ".join(fillers) + " ."
    image = render_image(subset, cfg.seed, cfg.image_size)
    return SyntheticPair(pair_id=pair_id, image=image, text=text, gold_entities=subset)


def split_pairs(n_pairs: int, seed: int) -> list[str]:
    """Disjoint 80/10/10 split tags, shuffled deterministically by pair index."""
    order = substream(seed, "split").permutation(n_pairs)
    n_train = int(0.8 * n_pairs)
    n_val = int(0.1 * n_pairs)
    tags = [""] * n_pairs
    for rank, idx in enumerate(order):
        if rank < n_train:
            tags[idx] = "train"
        elif rank < n_train + n_val:
            tags[idx] = "val"
        else:
            tags[idx] = "test"
    return tags


def generate_corpus(cfg: GeneratorConfig, out_dir) -> dict:
    """Write kb/, images/, corpus.jsonl, and a generation manifest."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    kb = generate_kb(cfg)
    save_kb(kb, out / "kb")

    entity_ids = kb.entity_ids()
    tags = split_pairs(cfg.n_pairs, cfg.seed)
    samples = []
    for i in range(cfg.n_pairs):
        pair_rng = substream(cfg.seed, f"pair:{i}")
        subset_idx = pair_rng.choice(len(entity_ids), size=cfg.entities_per_pair, replace=False)
        subset = [entity_ids[int(k)] for k in subset_idx]
        pair = generate_pair(kb, subset, cfg, pair_rng, pair_id=f"p{i:05d}")
        pair.split = tags[i]
        image_rel = f"images/{pair.pair_id}.pgm"
        write_pgm(out / image_rel, pair.image)
        samples.append(CorpusSample(pair.pair_id, image_rel, pair.text, pair.split))
    write_corpus(samples, out / "corpus.jsonl")

    manifest = {
        "n_pairs": cfg.n_pairs,
        "n_entities": cfg.n_entities,
        "n_relations": cfg.n_relations,
        "image_size": cfg.image_size,
        "seed": cfg.seed,
        "splits": {tag: tags.count(tag) for tag in ("train", "val", "test")},
    }
    with open(out / "gen_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
