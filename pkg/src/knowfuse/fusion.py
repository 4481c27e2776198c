"""Multi-modal fusion: dual-stream co-attention extended with an entity stream.

Each fusion layer runs, per stream, self-attention -> residual+norm, then
cross-attention -> residual+norm, then a feed-forward sub-layer ->
residual+norm (post-norm, matching how the composition is defined). The
entity stream self-attends, cross-attends to the vision stream's
self-attention output, and is routed into the text stream through the binary
token-entity matching matrix:

    fused_text = P @ entity_cross + text_cross

followed by normalization and the text feed-forward sub-layer. Every stream
applies that same pre-feed-forward normalization in every configuration (also
with the entity stream disabled or empty), so an empty entity stream
reproduces the knowledge-free co-attention baseline exactly and tied
vision/language weights yield symmetric outputs.

Entities only ever attend to vision; the vision stream is never modified by
knowledge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import FeedForward, LayerNormParams, MultiHeadAttention
from .exceptions import DimensionError
from .params import ParamStore


@dataclass
class FusionConfig:
    layers: int = 2
    width: int = 64
    heads: int = 4
    ffn_mult: int = 4
    rk_enabled: bool = True


@dataclass
class AttentionTrace:
    """Per-layer head-averaged attention maps captured for diagnostics."""
    text_to_image: list[np.ndarray] = field(default_factory=list)
    entity_to_image: list[np.ndarray] = field(default_factory=list)


def _empty_like_width(width: int, dtype) -> Tensor:
    return Tensor(np.zeros((0, width), dtype=dtype))


class FusionLayer:
    def __init__(self, store: ParamStore, prefix: str, width: int, heads: int, ffn_mult: int):
        self.width = width
        # vision stream
        self.v_self = MultiHeadAttention(store, f"{prefix}.vision.self_attn", width, heads)
        self.v_self_ln = LayerNormParams(store, f"{prefix}.vision.self_ln", width)
        self.v_cross = MultiHeadAttention(store, f"{prefix}.vision.cross_attn", width, heads)
        self.v_cross_ln = LayerNormParams(store, f"{prefix}.vision.cross_ln", width)
        self.v_pre_ffn_ln = LayerNormParams(store, f"{prefix}.vision.pre_ffn_ln", width)
        self.v_ffn = FeedForward(store, f"{prefix}.vision.ffn", width, ffn_mult)
        self.v_ffn_ln = LayerNormParams(store, f"{prefix}.vision.ffn_ln", width)
        # language stream
        self.l_self = MultiHeadAttention(store, f"{prefix}.text.self_attn", width, heads)
        self.l_self_ln = LayerNormParams(store, f"{prefix}.text.self_ln", width)
        self.l_cross = MultiHeadAttention(store, f"{prefix}.text.cross_attn", width, heads)
        self.l_cross_ln = LayerNormParams(store, f"{prefix}.text.cross_ln", width)
        self.fuse_ln = LayerNormParams(store, f"{prefix}.text.fuse_ln", width)
        self.l_ffn = FeedForward(store, f"{prefix}.text.ffn", width, ffn_mult)
        self.l_ffn_ln = LayerNormParams(store, f"{prefix}.text.ffn_ln", width)
        # entity stream
        self.e_self = MultiHeadAttention(store, f"{prefix}.entity.self_attn", width, heads)
        self.e_self_ln = LayerNormParams(store, f"{prefix}.entity.self_ln", width)
        self.e_cross = MultiHeadAttention(store, f"{prefix}.entity.cross_attn", width, heads)
        self.e_cross_ln = LayerNormParams(store, f"{prefix}.entity.cross_ln", width)
        self.e_pre_ffn_ln = LayerNormParams(store, f"{prefix}.entity.pre_ffn_ln", width)
        self.e_ffn = FeedForward(store, f"{prefix}.entity.ffn", width, ffn_mult)
        self.e_ffn_ln = LayerNormParams(store, f"{prefix}.entity.ffn_ln", width)

    # -- stages ------------------------------------------------------------

    def self_stage(self, h_v: Tensor, h_l: Tensor) -> tuple[Tensor, Tensor]:
        h_vs = self.v_self_ln(ad.add(h_v, self.v_self(h_v, h_v)))
        h_ls = self.l_self_ln(ad.add(h_l, self.l_self(h_l, h_l)))
        return h_vs, h_ls

    def cross_stage(self, h_vs: Tensor, h_ls: Tensor,
                    record_text: list | None = None) -> tuple[Tensor, Tensor]:
        h_vc = self.v_cross_ln(ad.add(h_vs, self.v_cross(h_vs, h_ls)))
        h_lc = self.l_cross_ln(ad.add(h_ls, self.l_cross(h_ls, h_vs, record_text)))
        return h_vc, h_lc

    def entity_stream_step(self, h_e: Tensor, h_vs: Tensor,
                           record: list | None = None) -> Tensor:
        """Entity self-attention then cross-attention into the vision stream."""
        if h_e.shape[0] == 0:
            return h_e
        h_es = self.e_self_ln(ad.add(h_e, self.e_self(h_e, h_e)))
        return self.e_cross_ln(ad.add(h_es, self.e_cross(h_es, h_vs, record)))

    def fuse_text_with_entities(self, h_ec: Tensor, h_lc: Tensor, p_matrix: Tensor | None) -> Tensor:
        """Route entity features to their token rows, then normalize."""
        if p_matrix is not None and h_ec.shape[0] > 0:
            if p_matrix.shape != (h_lc.shape[0], h_ec.shape[0]):
                raise DimensionError(
                    f"matching matrix {p_matrix.shape} incompatible with text "
                    f"{h_lc.shape} and entities {h_ec.shape}")
            h_lc = ad.add(ad.matmul(p_matrix, h_ec), h_lc)
        return self.fuse_ln(h_lc)

    def _finish_vision(self, h_vc: Tensor) -> Tensor:
        x = self.v_pre_ffn_ln(h_vc)
        return self.v_ffn_ln(ad.add(x, self.v_ffn(x)))

    def _finish_text(self, fused: Tensor) -> Tensor:
        return self.l_ffn_ln(ad.add(fused, self.l_ffn(fused)))

    def _finish_entity(self, h_ec: Tensor) -> Tensor:
        if h_ec.shape[0] == 0:
            return h_ec
        x = self.e_pre_ffn_ln(h_ec)
        return self.e_ffn_ln(ad.add(x, self.e_ffn(x)))

    # -- full layers ---------------------------------------------------------

    def co_attention(self, h_v: Tensor, h_l: Tensor) -> tuple[Tensor, Tensor]:
        """Knowledge-free co-attention layer (entity stream disabled)."""
        return self.forward(h_v, h_l, None, None)[:2]

    def forward(self, h_v: Tensor, h_l: Tensor, h_e: Tensor | None, p_matrix: Tensor | None,
                trace: AttentionTrace | None = None) -> tuple[Tensor, Tensor, Tensor]:
        if h_v.shape[1] != h_l.shape[1]:
            raise DimensionError(f"stream widths differ: {h_v.shape} vs {h_l.shape}")
        rec_text = trace.text_to_image if trace is not None else None
        rec_ent = trace.entity_to_image if trace is not None else None
        h_vs, h_ls = self.self_stage(h_v, h_l)
        h_vc, h_lc = self.cross_stage(h_vs, h_ls, rec_text)
        if h_e is not None and h_e.shape[0] > 0:
            h_ec = self.entity_stream_step(h_e, h_vs, rec_ent)
            fused = self.fuse_text_with_entities(h_ec, h_lc, p_matrix)
            z_e = self._finish_entity(h_ec)
        else:
            fused = self.fuse_ln(h_lc)
            z_e = _empty_like_width(self.width, h_l.data.dtype)
        return self._finish_vision(h_vc), self._finish_text(fused), z_e


class FusionStack:
    """L_m chained fusion layers; entity representations feed layer-to-layer."""

    def __init__(self, store: ParamStore, prefix: str, cfg: FusionConfig):
        self.cfg = cfg
        self.layers = [
            FusionLayer(store, f"{prefix}.layer{i}", cfg.width, cfg.heads, cfg.ffn_mult)
            for i in range(cfg.layers)
        ]

    def forward(self, h_v: Tensor, h_l: Tensor, h_e: Tensor | None, p_matrix: Tensor | None,
                trace: AttentionTrace | None = None) -> tuple[Tensor, Tensor, Tensor]:
        use_entities = self.cfg.rk_enabled and h_e is not None and h_e.shape[0] > 0
        z_v, z_l = h_v, h_l
        z_e = h_e if use_entities else _empty_like_width(self.cfg.width, h_l.data.dtype)
        for layer in self.layers:
            z_v, z_l, z_e = layer.forward(
                z_v, z_l, z_e if use_entities else None,
                p_matrix if use_entities else None, trace)
        return z_v, z_l, z_e


def pad_matching_matrix(p_tokens: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Align a token-level matching matrix with the (N_l + 2)-row text stream
    by inserting all-zero rows for the start-of-sequence and boundary tokens."""
    n_l, n_es = p_tokens.shape
    padded = np.zeros((n_l + 2, n_es), dtype=dtype)
    padded[1:n_l + 1] = p_tokens
    return padded
