"""Pretext-task machinery: mask planning, knowledge-alignment scores and
losses, masked-prediction losses, matching loss, and the summed objective.

Masking policy: the token target count is ``max(1, round(ratio * n_tokens))``.
Entity-driven plans sample whole entities without replacement until the
masked-token count first reaches that target (never truncating a span); if
the text runs out of entity tokens first, the plan tops up with uniformly
chosen non-entity tokens. Texts without entities fall back to uniform token
masking. Patch plans mask exactly ``round(ratio * n_patches)`` patches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import DimensionError
from .kb import LinkedText
from .params import ParamStore


@dataclass
class AblationFlags:
    """The three knowledge-injection toggles."""
    ak: bool = True   # align through knowledge (bilinear alignment losses)
    rk: bool = True   # reason using knowledge (entity stream in fusion)
    lk: bool = True   # learn from knowledge (entity-span masking)

    def label(self) -> str:
        return "".join(ch if on else "-" for ch, on in
                       zip("ARL", (self.ak, self.rk, self.lk)))


@dataclass
class MaskPlan:
    token_positions: np.ndarray
    patch_positions: np.ndarray
    policy: str = "uniform"  # "entity-span" | "uniform"


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def token_mask_target(n_tokens: int, ratio: float) -> int:
    return max(1, _round_half_up(ratio * n_tokens)) if n_tokens else 0


def uniform_token_mask(n_tokens: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    if n_tokens == 0:
        return np.empty(0, dtype=np.int64)
    target = token_mask_target(n_tokens, ratio)
    return np.sort(rng.choice(n_tokens, size=target, replace=False)).astype(np.int64)


def knowledge_token_mask(linked: LinkedText, ratio: float, rng: np.random.Generator) -> tuple[np.ndarray, str]:
    """Entity-span masking; whole spans of sampled entities are always masked."""
    n = linked.n_tokens
    if n == 0:
        return np.empty(0, dtype=np.int64), "entity-span"
    if not linked.entity_seq:
        return uniform_token_mask(n, ratio, rng), "uniform"
    target = token_mask_target(n, ratio)
    order = rng.permutation(len(linked.entity_seq))
    masked: list[int] = []
    for j in order:
        _, (start, stop) = linked.entity_seq[j]
        masked.extend(range(start, stop))
        if len(masked) >= target:
            break
    if len(masked) < target:
        remaining = np.setdiff1d(np.arange(n), np.asarray(masked, dtype=np.int64))
        extra = rng.choice(remaining, size=target - len(masked), replace=False)
        masked.extend(int(i) for i in extra)
    return np.sort(np.asarray(masked, dtype=np.int64)), "entity-span"


def patch_mask(n_patches: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    count = _round_half_up(ratio * n_patches)
    return np.sort(rng.choice(n_patches, size=count, replace=False)).astype(np.int64)


def make_mask_plan(linked: LinkedText, n_patches: int, mlm_ratio: float, mim_ratio: float,
                   rng: np.random.Generator, lk_enabled: bool = True) -> MaskPlan:
    if lk_enabled:
        tokens, policy = knowledge_token_mask(linked, mlm_ratio, rng)
    else:
        tokens, policy = uniform_token_mask(linked.n_tokens, mlm_ratio, rng), "uniform"
    return MaskPlan(token_positions=tokens,
                    patch_positions=patch_mask(n_patches, mim_ratio, rng),
                    policy=policy)


def apply_token_mask(token_ids: np.ndarray, positions: np.ndarray, mask_id: int) -> np.ndarray:
    masked = token_ids.copy()
    masked[positions] = mask_id
    return masked


# --------------------------------------------------------------------------
# heads


class AlignmentHead:
    """Bilinear image-knowledge / text-knowledge similarity weights."""

    def __init__(self, store: ParamStore, prefix: str, entity_dim: int, width: int):
        self.w_vk = store.matrix(f"{prefix}.w_vk", entity_dim, width)
        self.w_lk = store.matrix(f"{prefix}.w_lk", entity_dim, width)


class LinearHead:
    def __init__(self, store: ParamStore, prefix: str, width: int, out_dim: int):
        self.weight = store.matrix(f"{prefix}.weight", width, out_dim)
        self.bias = store.vector(f"{prefix}.bias", out_dim)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)


class TwoLayerHead:
    def __init__(self, store: ParamStore, prefix: str, in_dim: int, hidden: int, out_dim: int):
        self.w1 = store.matrix(f"{prefix}.w1", in_dim, hidden)
        self.b1 = store.vector(f"{prefix}.b1", hidden)
        self.w2 = store.matrix(f"{prefix}.w2", hidden, out_dim)
        self.b2 = store.vector(f"{prefix}.b2", out_dim)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(x, self.w1), self.b1)), self.w2), self.b2)


# --------------------------------------------------------------------------
# losses


def alignment_scores(h_v_row: Tensor, h_l_row: Tensor, entity_matrix: Tensor,
                     head: AlignmentHead) -> tuple[Tensor, Tensor]:
    """Per-entity sigmoid similarities against the aggregated uni-modal rows.

    Returns column vectors of shape (N_e, 1).
    """
    if h_v_row.shape[0] != 1 or h_l_row.shape[0] != 1:
        raise DimensionError("alignment expects single aggregated rows")
    p_v = ad.sigmoid(ad.matmul(ad.matmul(entity_matrix, head.w_vk), ad.transpose(h_v_row)))
    p_l = ad.sigmoid(ad.matmul(ad.matmul(entity_matrix, head.w_lk), ad.transpose(h_l_row)))
    return p_v, p_l


def alignment_labels(n_entities: int, present: np.ndarray, dtype=np.float64) -> np.ndarray:
    y = np.zeros((n_entities, 1), dtype=dtype)
    if len(present):
        y[np.asarray(present, dtype=np.int64)] = 1.0
    return y


def alignment_loss(p_v: Tensor, p_l: Tensor, labels: np.ndarray) -> tuple[Tensor, Tensor]:
    """Binary cross-entropy summed over the full entity set, per modality."""
    target = Tensor(labels.astype(p_v.data.dtype))
    return (ad.binary_cross_entropy(p_v, target, reduction="sum"),
            ad.binary_cross_entropy(p_l, target, reduction="sum"))


def mlm_loss(z_l: Tensor, token_positions: np.ndarray, target_ids: np.ndarray,
             head: LinearHead) -> Tensor | None:
    """Cross-entropy over masked content-token rows; None when nothing is masked."""
    if len(token_positions) == 0:
        return None
    rows = ad.gather(z_l, np.asarray(token_positions, dtype=np.int64) + 1)  # +1 skips start row
    return ad.categorical_cross_entropy(head(rows), np.asarray(target_ids, dtype=np.int64))


def mim_loss(z_v: Tensor, patch_positions: np.ndarray, patches: np.ndarray,
             head: LinearHead) -> Tensor | None:
    """Masked-patch reconstruction error in normalized pixel space."""
    if len(patch_positions) == 0:
        return None
    idx = np.asarray(patch_positions, dtype=np.int64)
    rows = ad.gather(z_v, idx + 1)  # +1 skips the aggregation row
    target = Tensor(patches[idx].astype(z_v.data.dtype))
    return ad.mean_squared_error(head(rows), target)


def itm_logits(z_v: Tensor, z_l: Tensor, head: TwoLayerHead) -> Tensor:
    """Two-way matched/unmatched logits from concatenated aggregate rows."""
    pooled = ad.concat([ad.slice_rows(z_v, 0, 1), ad.slice_rows(z_l, 0, 1)], axis=1)
    return head(pooled)


def itm_loss(logits: Tensor, matched: bool) -> Tensor:
    return ad.categorical_cross_entropy(logits, np.array([1 if matched else 0], dtype=np.int64))


LOSS_KEYS = ("mlm", "mim", "itm", "l_vk", "l_lk")


def total_loss(components: dict[str, Tensor | None],
               weights: dict[str, float] | None = None) -> Tensor:
    """Weighted sum over the enabled pretext components; missing entries drop out."""
    weights = weights or {}
    total: Tensor | None = None
    for key, value in components.items():
        if value is None:
            continue
        term = ad.scale(value, weights.get(key, 1.0))
        total = term if total is None else ad.add(total, term)
    return total if total is not None else Tensor(np.asarray(0.0))
