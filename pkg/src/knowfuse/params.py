"""Trainable-parameter registry.

All model weights live in one store, addressable by dotted path
(``"vision_encoder.block0.attn.wq"``). Creation order is fixed by the model
constructors, which makes seeded initialization reproducible.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .exceptions import ConfigError
from .rng import substream


class ParamStore:
    def __init__(self, seed: int, dtype=np.float64):
        self._rng = substream(seed, "params")
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def _register(self, path: str, data: np.ndarray) -> Tensor:
        if path in self._params:
            raise ConfigError(f"parameter path {path!r} registered twice")
        tensor = Tensor(data.astype(self.dtype), requires_grad=True, name=path)
        self._params[path] = tensor
        return tensor

    def matrix(self, path: str, rows: int, cols: int, init: str = "xavier") -> Tensor:
        if init == "xavier":
            limit = np.sqrt(6.0 / (rows + cols))
            data = self._rng.uniform(-limit, limit, (rows, cols))
        elif init == "normal":
            data = self._rng.normal(0.0, 0.02, (rows, cols))
        elif init == "zeros":
            data = np.zeros((rows, cols))
        else:
            raise ConfigError(f"unknown init {init!r}")
        return self._register(path, data)

    def vector(self, path: str, size: int, init: str = "zeros") -> Tensor:
        if init == "zeros":
            data = np.zeros(size)
        elif init == "ones":
            data = np.ones(size)
        elif init == "normal":
            data = self._rng.normal(0.0, 0.02, size)
        else:
            raise ConfigError(f"unknown init {init!r}")
        return self._register(path, data)

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def paths(self) -> list[str]:
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None
