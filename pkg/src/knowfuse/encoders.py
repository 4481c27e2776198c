"""Uni-modal encoders: patch and token embedding plus transformer stacks.

The image side prepends a learnable aggregation token to linearly projected
patches; the text side wraps token embeddings between learnable
start-of-sequence and boundary vectors. Learned position embeddings are added
to every row, aggregation/special rows included. Blocks default to
pre-layer-norm ordering for small-scale training stability; post-norm is
available via ``norm_style="post"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError, DimensionError, VocabularyError
from .params import ParamStore


@dataclass
class EncoderConfig:
    image_size: int = 32
    channels: int = 1
    patch_size: int = 8
    width: int = 64
    vision_layers: int = 2
    text_layers: int = 2
    heads: int = 4
    vocab_size: int = 64
    max_text_len: int = 32
    ffn_mult: int = 4
    norm_style: str = "pre"

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(f"image size {self.image_size} not divisible by patch {self.patch_size}")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.norm_style not in ("pre", "post"):
            raise ConfigError(f"norm_style must be 'pre' or 'post', got {self.norm_style!r}")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2 * self.channels


class MultiHeadAttention:
    """softmax(Q Kᵀ / sqrt(D_k)) V with per-head column splits and an output
    projection. ``record`` collects head-averaged attention maps for
    diagnostics."""

    def __init__(self, store: ParamStore, prefix: str, width: int, heads: int):
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.wq = store.matrix(f"{prefix}.wq", width, width)
        self.bq = store.vector(f"{prefix}.bq", width)
        self.wk = store.matrix(f"{prefix}.wk", width, width)
        self.bk = store.vector(f"{prefix}.bk", width)
        self.wv = store.matrix(f"{prefix}.wv", width, width)
        self.bv = store.vector(f"{prefix}.bv", width)
        self.wo = store.matrix(f"{prefix}.wo", width, width)
        self.bo = store.vector(f"{prefix}.bo", width)

    def __call__(self, query_in: Tensor, kv_in: Tensor, record: list | None = None) -> Tensor:
        q = ad.add(ad.matmul(query_in, self.wq), self.bq)
        k = ad.add(ad.matmul(kv_in, self.wk), self.bk)
        v = ad.add(ad.matmul(kv_in, self.wv), self.bv)
        scale = 1.0 / math.sqrt(self.head_dim)
        outs = []
        maps = []
        for h in range(self.heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh = ad.slice_rows(q, lo, hi, axis=1)
            kh = ad.slice_rows(k, lo, hi, axis=1)
            vh = ad.slice_rows(v, lo, hi, axis=1)
            weights = ad.softmax(ad.scale(ad.matmul(qh, ad.transpose(kh)), scale), axis=1)
            if record is not None:
                maps.append(weights.data)
            outs.append(ad.matmul(weights, vh))
        if record is not None:
            record.append(np.mean(maps, axis=0))
        return ad.add(ad.matmul(ad.concat(outs, axis=1), self.wo), self.bo)


class FeedForward:
    def __init__(self, store: ParamStore, prefix: str, width: int, mult: int):
        hidden = width * mult
        self.w1 = store.matrix(f"{prefix}.w1", width, hidden)
        self.b1 = store.vector(f"{prefix}.b1", hidden)
        self.w2 = store.matrix(f"{prefix}.w2", hidden, width)
        self.b2 = store.vector(f"{prefix}.b2", width)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(x, self.w1), self.b1)), self.w2), self.b2)


class LayerNormParams:
    def __init__(self, store: ParamStore, prefix: str, width: int):
        self.gain = store.vector(f"{prefix}.gain", width, init="ones")
        self.bias = store.vector(f"{prefix}.bias", width)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)


class TransformerBlock:
    """Self-attention block with residuals; pre- or post-norm ordering."""

    def __init__(self, store: ParamStore, prefix: str, width: int, heads: int,
                 ffn_mult: int, norm_style: str):
        self.norm_style = norm_style
        self.attn = MultiHeadAttention(store, f"{prefix}.attn", width, heads)
        self.ln1 = LayerNormParams(store, f"{prefix}.ln1", width)
        self.ffn = FeedForward(store, f"{prefix}.ffn", width, ffn_mult)
        self.ln2 = LayerNormParams(store, f"{prefix}.ln2", width)

    def __call__(self, x: Tensor, record: list | None = None) -> Tensor:
        if self.norm_style == "pre":
            normed = self.ln1(x)
            h = ad.add(x, self.attn(normed, normed, record))
            return ad.add(h, self.ffn(self.ln2(h)))
        h = self.ln1(ad.add(x, self.attn(x, x, record)))
        return self.ln2(ad.add(h, self.ffn(h)))


class UniModalEncoder:
    def __init__(self, store: ParamStore, prefix: str, cfg: EncoderConfig, layers: int):
        self.blocks = [
            TransformerBlock(store, f"{prefix}.block{i}", cfg.width, cfg.heads,
                             cfg.ffn_mult, cfg.norm_style)
            for i in range(layers)
        ]

    def __call__(self, x: Tensor, record: list | None = None) -> Tensor:
        for block in self.blocks:
            x = block(x, record)
        return x


class ImageEmbedder:
    """Aggregation token + linear patch projection + position table.

    Masked-patch indices (for masked image modeling) replace projected rows
    with a learned mask token before positions are added.
    """

    def __init__(self, store: ParamStore, prefix: str, cfg: EncoderConfig):
        self.cfg = cfg
        self.proj = store.matrix(f"{prefix}.patch_proj", cfg.patch_dim, cfg.width)
        self.proj_bias = store.vector(f"{prefix}.patch_bias", cfg.width)
        self.agg_token = store.matrix(f"{prefix}.agg_token", 1, cfg.width, init="normal")
        self.mask_token = store.matrix(f"{prefix}.mask_token", 1, cfg.width, init="normal")
        self.pos = store.matrix(f"{prefix}.pos", cfg.n_patches + 1, cfg.width, init="normal")

    def __call__(self, patches: np.ndarray, masked: np.ndarray | None = None) -> Tensor:
        n_v = self.cfg.n_patches
        if patches.shape != (n_v, self.cfg.patch_dim):
            raise DimensionError(
                f"patch grid {patches.shape} incompatible with projection "
                f"({n_v}, {self.cfg.patch_dim})")
        rows = ad.add(ad.matmul(Tensor(patches.astype(self.proj.data.dtype)), self.proj), self.proj_bias)
        if masked is not None and len(masked):
            keep = np.ones((n_v, 1), dtype=rows.data.dtype)
            keep[np.asarray(masked, dtype=np.int64)] = 0.0
            keep_full = Tensor(np.repeat(keep, self.cfg.width, axis=1))
            drop_full = Tensor(np.repeat(1.0 - keep, self.cfg.width, axis=1))
            tiled_mask = ad.matmul(Tensor(np.ones((n_v, 1), dtype=rows.data.dtype)), self.mask_token)
            rows = ad.add(ad.mul(rows, keep_full), ad.mul(tiled_mask, drop_full))
        return ad.add(ad.concat([self.agg_token, rows], axis=0), self.pos)


class TextEmbedder:
    """Vocabulary lookup wrapped in start-of-sequence and boundary vectors."""

    def __init__(self, store: ParamStore, prefix: str, cfg: EncoderConfig):
        self.cfg = cfg
        self.table = store.matrix(f"{prefix}.tok_table", cfg.vocab_size, cfg.width, init="normal")
        self.start_token = store.matrix(f"{prefix}.start_token", 1, cfg.width, init="normal")
        self.boundary_token = store.matrix(f"{prefix}.boundary_token", 1, cfg.width, init="normal")
        self.pos = store.matrix(f"{prefix}.pos", cfg.max_text_len + 2, cfg.width, init="normal")

    def __call__(self, token_ids: np.ndarray) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and ids.max() >= self.cfg.vocab_size:
            raise VocabularyError(f"token id {ids.max()} >= vocab size {self.cfg.vocab_size}")
        if ids.size and ids.min() < 0:
            raise VocabularyError("negative token id")
        if len(ids) > self.cfg.max_text_len:
            raise DimensionError(f"text length {len(ids)} exceeds max {self.cfg.max_text_len}")
        pieces = [self.start_token]
        if len(ids):
            pieces.append(ad.gather(self.table, ids))
        pieces.append(self.boundary_token)
        seq = ad.concat(pieces, axis=0)
        return ad.add(seq, ad.slice_rows(self.pos, 0, len(ids) + 2))
