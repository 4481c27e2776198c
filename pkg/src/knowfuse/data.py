"""Corpus preparation: linking, vocabulary, patch grids, and the frozen
entity representation table consumed by the model.

The two-stage knowledge extraction lives here as well: stage one links every
text and collects the corpus entity set, stage two keeps exactly the triples
whose endpoints both belong to that set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .exceptions import ConfigError
from .images import read_pgm, to_patch_grid
from .kb import (KnowledgeBase, LinkedText, Triple, Vocabulary, build_matching_matrix,
                 corpus_entity_set, extract_subgraph, link_entities, load_corpus, load_kb,
                 tokenize)
from .kge import GraphAttentionParams, KGEmbeddings, gat_aggregate, load_kge
from .rng import substream


@dataclass
class PreparedSample:
    sample_id: str
    split: str
    patches: np.ndarray        # (N_v, P^2*C) floats in [0, 1]
    token_ids: np.ndarray      # content-token ids (no specials)
    linked: LinkedText
    entity_indices: np.ndarray  # positions in the embedding table order
    p_tokens: np.ndarray        # (N_l, N_es) over kept entities

    @property
    def n_tokens(self) -> int:
        return len(self.token_ids)


def link_corpus_texts(texts, kb: KnowledgeBase) -> list[LinkedText]:
    return [link_entities(tokenize(t), kb) for t in texts]


def extract_knowledge(kb: KnowledgeBase, linked_texts) -> tuple[list[str], list[Triple]]:
    """Two-stage extraction: corpus entity set, then the induced subgraph.

    The entity order follows KB file order restricted to the corpus set, which
    fixes the embedding-table order downstream.
    """
    present = corpus_entity_set(linked_texts)
    entity_ids = [eid for eid in kb.entity_ids() if eid in present]
    return entity_ids, extract_subgraph(kb, set(entity_ids))


@dataclass
class DataBundle:
    cfg: RunConfig
    kb: KnowledgeBase
    vocab: Vocabulary
    kge: KGEmbeddings
    entity_matrix: np.ndarray          # (N_e, D_e) frozen vectors fed to the model
    samples: dict[str, list[PreparedSample]] = field(default_factory=dict)
    dropped_entity_mentions: int = 0

    @property
    def n_entities(self) -> int:
        return self.entity_matrix.shape[0]

    def split(self, name: str) -> list[PreparedSample]:
        return self.samples.get(name, [])


def entity_representation_table(kge: KGEmbeddings, kb: KnowledgeBase, cfg: RunConfig) -> np.ndarray:
    """Frozen entity vectors: graph-attention aggregated by default, or the raw
    translational embeddings behind the ``use_gat_vectors`` flag."""
    if not cfg.use_gat_vectors:
        return np.asarray(kge.entity_vecs, dtype=np.float64)
    triples = extract_subgraph(kb, set(kge.entity_ids))
    params = GraphAttentionParams.create(kge.dim, seed=cfg.seed)
    return gat_aggregate(kge, triples, params)


def prepare_sample(sample_id: str, split: str, image_path, text: str, kb: KnowledgeBase,
                   vocab: Vocabulary, kge: KGEmbeddings, patch_size: int) -> tuple[PreparedSample, int]:
    linked = link_entities(tokenize(text), kb)
    kept = [(eid, span) for eid, span in linked.entity_seq if eid in kge.entity_index]
    dropped = len(linked.entity_seq) - len(kept)
    kept_linked = LinkedText(tokens=linked.tokens, entity_seq=kept)
    prepared = PreparedSample(
        sample_id=sample_id,
        split=split,
        patches=to_patch_grid(read_pgm(image_path), patch_size),
        token_ids=vocab.encode(linked.tokens),
        linked=kept_linked,
        entity_indices=np.array([kge.entity_index[eid] for eid, _ in kept], dtype=np.int64),
        p_tokens=build_matching_matrix(kept_linked),
    )
    return prepared, dropped


def build_bundle(corpus_dir, kge_path, cfg: RunConfig) -> DataBundle:
    """Load everything pre-training and evaluation need."""
    corpus_dir = Path(corpus_dir)
    kb = load_kb(corpus_dir / "kb")
    corpus = load_corpus(corpus_dir / "corpus.jsonl")
    if not corpus:
        raise ConfigError(f"empty corpus at {corpus_dir}")
    kge = load_kge(kge_path)

    train_tokens = [tokenize(s.text) for s in corpus if s.split == "train"]
    if not train_tokens:
        raise ConfigError("corpus has no train split")
    vocab = Vocabulary.from_token_lists(train_tokens)

    bundle = DataBundle(cfg=cfg, kb=kb, vocab=vocab, kge=kge,
                        entity_matrix=entity_representation_table(kge, kb, cfg))
    for s in corpus:
        prepared, dropped = prepare_sample(
            s.sample_id, s.split, corpus_dir / s.image, s.text, kb, vocab, kge, cfg.patch_size)
        if len(prepared.token_ids) > cfg.max_text_len:
            raise ConfigError(
                f"sample {s.sample_id} has {len(prepared.token_ids)} tokens; "
                f"raise max_text_len (currently {cfg.max_text_len})")
        bundle.dropped_entity_mentions += dropped
        bundle.samples.setdefault(s.split, []).append(prepared)
    return bundle
