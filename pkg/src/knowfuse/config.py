"""Flat key/value run configuration (TOML), shared by CLI and library entry
points. Unknown keys are rejected so typos fail loudly."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .exceptions import ConfigError


@dataclass
class RunConfig:
    seed: int = 0
    precision: str = "float32"  # training dtype; tests build float64 models directly

    # synthetic corpus
    n_entities: int = 24
    n_relations: int = 3
    triple_density: float = 0.08
    n_pairs: int = 500
    entities_per_pair: int = 2
    image_size: int = 32
    n_filler_words: int = 50

    # model
    channels: int = 1
    patch_size: int = 8
    width: int = 64
    vision_layers: int = 2
    text_layers: int = 2
    fusion_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    max_text_len: int = 40
    norm_style: str = "pre"
    kge_dim: int = 32
    use_gat_vectors: bool = True

    # knowledge-graph embedding stage
    kge_margin: float = 1.0
    kge_lr: float = 0.1
    kge_epochs: int = 300
    kge_neg_per_pos: int = 1

    # pretext tasks
    mlm_ratio: float = 0.15
    mim_ratio: float = 0.75
    itm_negative_prob: float = 0.5
    w_mlm: float = 1.0
    w_mim: float = 1.0
    w_itm: float = 1.0
    w_vk: float = 1.0
    w_lk: float = 1.0
    ak: bool = True
    rk: bool = True
    lk: bool = True

    # pre-training
    batch_size: int = 16
    steps: int = 1200
    warmup_fraction: float = 0.10
    lr_encoders: float = 1e-3
    lr_rest: float = 3e-3
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    checkpoint_every: int = 0  # 0 = final checkpoint only

    # fine-tuning / evaluation
    retrieval_negatives: int = 15
    finetune_epochs: int = 1
    finetune_lr: float = 3e-4
    classifier_epochs: int = 5
    classifier_lr: float = 1e-3
    ablation_steps: int = 300

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1)")


# Fields that determine parameter shapes / forward semantics; a checkpoint can
# only be loaded by a run whose values all agree.
STRUCTURE_KEYS = (
    "precision", "channels", "patch_size", "image_size", "width", "vision_layers",
    "text_layers", "fusion_layers", "heads", "ffn_mult", "max_text_len",
    "norm_style", "kge_dim", "use_gat_vectors",
)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(values: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**values)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values: dict = {}
    if path is not None:
        raw = Path(path).read_bytes()
        try:
            values.update(tomllib.loads(raw.decode("utf-8")))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(values)


def structure_fingerprint(cfg: RunConfig, vocab_size: int, n_model_entities: int) -> str:
    payload = {key: getattr(cfg, key) for key in STRUCTURE_KEYS}
    payload["vocab_size"] = vocab_size
    payload["n_model_entities"] = n_model_entities
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
