"""Knowledge-graph embeddings: translational training over extracted triples,
single-layer graph-attention aggregation, and the on-disk embedding format.

Training follows the canonical TransE recipe: margin ranking loss with L2
distance, one uniformly corrupted negative per positive (head or tail with
p=0.5 each), SGD, and entity renormalization to the unit sphere after every
epoch. The aggregation stage ignores relation types and works on the
undirected adjacency plus self-loops.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DimensionError, FormatError
from .kb import Triple

F32 = np.dtype("<f4")


@dataclass
class TransEConfig:
    dim: int = 32
    margin: float = 1.0
    lr: float = 0.1
    epochs: int = 300
    neg_per_pos: int = 1
    batch_size: int = 128
    seed: int = 0


@dataclass
class KGEmbeddings:
    entity_ids: list[str]
    relation_ids: list[str]
    entity_vecs: np.ndarray  # (N_e, D_e)
    relation_vecs: np.ndarray  # (N_r, D_e)

    def __post_init__(self):
        self.entity_index = {eid: i for i, eid in enumerate(self.entity_ids)}
        self.relation_index = {rid: i for i, rid in enumerate(self.relation_ids)}

    @property
    def dim(self) -> int:
        return self.entity_vecs.shape[1]


def transe_score(h: np.ndarray, r: np.ndarray, t: np.ndarray) -> float:
    """Translational plausibility: ||h + r - t||_2, lower is more plausible."""
    h, r, t = (np.asarray(v, dtype=np.float64) for v in (h, r, t))
    if not (h.shape == r.shape == t.shape) or h.ndim != 1:
        raise DimensionError(f"transe_score: widths differ ({h.shape}, {r.shape}, {t.shape})")
    return float(np.linalg.norm(h + r - t))


def _triples_to_indices(triples: Sequence[Triple], entity_ids: Sequence[str],
                        relation_ids: Sequence[str]) -> np.ndarray:
    e_index = {eid: i for i, eid in enumerate(entity_ids)}
    r_index = {rid: i for i, rid in enumerate(relation_ids)}
    out = np.empty((len(triples), 3), dtype=np.int64)
    for k, tr in enumerate(triples):
        out[k] = (e_index[tr.head], r_index[tr.relation], e_index[tr.tail])
    return out


def train_transe(triples: Sequence[Triple], entity_ids: Sequence[str],
                 relation_ids: Sequence[str], cfg: TransEConfig) -> KGEmbeddings:
    """Margin-ranking TransE over the given triples.

    ``entity_ids``/``relation_ids`` fix the table order, so entities that
    appear in no triple still receive (unit-norm random) embeddings.
    """
    if not triples:
        raise ValueError("train_transe: empty triple set")
    idx = _triples_to_indices(triples, entity_ids, relation_ids)
    n_e, n_r, dim = len(entity_ids), len(relation_ids), cfg.dim
    rng = np.random.default_rng(cfg.seed)

    bound = 6.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, (n_e, dim))
    rel = rng.uniform(-bound, bound, (max(n_r, 1), dim))
    rel /= np.maximum(np.linalg.norm(rel, axis=1, keepdims=True), 1e-12)
    ent /= np.maximum(np.linalg.norm(ent, axis=1, keepdims=True), 1e-12)

    n = idx.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = idx[order[start:start + cfg.batch_size]]
            for _ in range(cfg.neg_per_pos):
                neg = batch.copy()
                corrupt_head = rng.random(len(batch)) < 0.5
                draws = rng.integers(0, n_e, len(batch))
                neg[corrupt_head, 0] = draws[corrupt_head]
                neg[~corrupt_head, 2] = draws[~corrupt_head]

                d_pos = ent[batch[:, 0]] + rel[batch[:, 1]] - ent[batch[:, 2]]
                d_neg = ent[neg[:, 0]] + rel[neg[:, 1]] - ent[neg[:, 2]]
                dist_pos = np.linalg.norm(d_pos, axis=1)
                dist_neg = np.linalg.norm(d_neg, axis=1)
                active = cfg.margin + dist_pos - dist_neg > 0
                if not active.any():
                    continue
                u_pos = np.where(dist_pos[:, None] > 1e-12, d_pos / np.maximum(dist_pos, 1e-12)[:, None], 0.0)
                u_neg = np.where(dist_neg[:, None] > 1e-12, d_neg / np.maximum(dist_neg, 1e-12)[:, None], 0.0)
                u_pos[~active] = 0.0
                u_neg[~active] = 0.0

                step = cfg.lr
                np.add.at(ent, batch[:, 0], -step * u_pos)
                np.add.at(ent, batch[:, 2], step * u_pos)
                np.add.at(rel, batch[:, 1], -step * (u_pos - u_neg))
                np.add.at(ent, neg[:, 0], step * u_neg)
                np.add.at(ent, neg[:, 2], -step * u_neg)
        ent /= np.maximum(np.linalg.norm(ent, axis=1, keepdims=True), 1e-12)

    return KGEmbeddings(list(entity_ids), list(relation_ids), ent, rel[:n_r])


def filtered_tail_rank(emb: KGEmbeddings, triples: Sequence[Triple], query: Triple) -> int:
    """Rank (1-based) of the true tail among all entities, filtering other
    known true tails for the same (head, relation)."""
    h = emb.entity_vecs[emb.entity_index[query.head]]
    r = emb.relation_vecs[emb.relation_index[query.relation]]
    known = {emb.entity_index[tr.tail] for tr in triples
             if tr.head == query.head and tr.relation == query.relation and tr.tail != query.tail}
    scores = np.linalg.norm(h + r - emb.entity_vecs, axis=1)
    true_idx = emb.entity_index[query.tail]
    rank = 1
    for cand in range(len(emb.entity_ids)):
        if cand == true_idx or cand in known:
            continue
        if scores[cand] < scores[true_idx]:
            rank += 1
    return rank


@dataclass
class GraphAttentionParams:
    transform: np.ndarray  # (D_e, D_e)
    attention_vec: np.ndarray  # (2*D_e,)
    leaky_slope: float = 0.2

    @classmethod
    def create(cls, dim: int, seed: int = 0, leaky_slope: float = 0.2) -> "GraphAttentionParams":
        rng = np.random.default_rng(seed)
        limit = np.sqrt(6.0 / (dim + dim))
        return cls(transform=rng.uniform(-limit, limit, (dim, dim)),
                   attention_vec=rng.uniform(-limit, limit, 2 * dim),
                   leaky_slope=leaky_slope)


def _leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def neighborhoods(n_entities: int, edges: Sequence[tuple[int, int]]) -> list[np.ndarray]:
    """Undirected adjacency plus a self-loop for every node."""
    neigh = [{i} for i in range(n_entities)]
    for a, b in edges:
        neigh[a].add(b)
        neigh[b].add(a)
    return [np.array(sorted(s), dtype=np.int64) for s in neigh]


def gat_aggregate(emb: KGEmbeddings, triples: Sequence[Triple],
                  params: GraphAttentionParams, return_alpha: bool = False):
    """Single-head graph attention over the triple graph.

    Output row i is sum_j alpha_ij (W e_j) with alpha softmax-normalized over
    the undirected neighborhood of i (including i itself); relation types do
    not enter the aggregation.
    """
    vecs = np.asarray(emb.entity_vecs, dtype=np.float64)
    n = vecs.shape[0]
    edges = [(emb.entity_index[t.head], emb.entity_index[t.tail]) for t in triples]
    neigh = neighborhoods(n, edges)

    we = vecs @ params.transform.T  # row j = transform @ e_j
    dim = vecs.shape[1]
    s_self = we @ params.attention_vec[:dim]
    s_peer = we @ params.attention_vec[dim:]

    out = np.zeros_like(we)
    alphas: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(n):
        js = neigh[i]
        logits = _leaky_relu(s_self[i] + s_peer[js], params.leaky_slope)
        logits = logits - logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        out[i] = weights @ we[js]
        if return_alpha:
            alphas.append((js, weights))
    if return_alpha:
        return out, alphas
    return out


def project_entities(aggregated: np.ndarray, w_proj: np.ndarray) -> np.ndarray:
    """Bridge entity space into the fusion width with a linear map."""
    aggregated = np.asarray(aggregated)
    w_proj = np.asarray(w_proj)
    if aggregated.ndim != 2 or w_proj.ndim != 2 or aggregated.shape[1] != w_proj.shape[0]:
        raise DimensionError(f"project_entities: {aggregated.shape} x {w_proj.shape}")
    return aggregated @ w_proj


def save_kge(emb: KGEmbeddings, path) -> None:
    """Write little-endian f32 matrices plus a JSON manifest sidecar."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(emb.entity_vecs, dtype=F32).tobytes())
        fh.write(np.ascontiguousarray(emb.relation_vecs, dtype=F32).tobytes())
    manifest = {
        "n_entities": len(emb.entity_ids),
        "n_relations": len(emb.relation_ids),
        "dim": int(emb.entity_vecs.shape[1]),
        "entity_ids": list(emb.entity_ids),
        "relation_ids": list(emb.relation_ids),
    }
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=0, sort_keys=True)


def load_kge(path) -> KGEmbeddings:
    path = Path(path)
    manifest_path = path.with_suffix(".json")
    if not path.exists() or not manifest_path.exists():
        raise FormatError(f"missing embedding file or manifest for {path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    n_e, n_r, dim = manifest["n_entities"], manifest["n_relations"], manifest["dim"]
    raw = path.read_bytes()
    expected = (n_e + n_r) * dim * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype=F32)
    entity_vecs = flat[:n_e * dim].reshape(n_e, dim).copy()
    relation_vecs = flat[n_e * dim:].reshape(n_r, dim).copy()
    return KGEmbeddings(list(manifest["entity_ids"]), list(manifest["relation_ids"]),
                        entity_vecs, relation_vecs)
