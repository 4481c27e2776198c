"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays. Each operation records its inputs and
a backward closure on the output tensor, so the computation graph is implicit
in the tensor objects. ``backward(loss)`` topologically sorts that graph and
accumulates gradients into the leaves that were created with
``requires_grad=True``.

Conventions kept deliberately strict so gradient code stays auditable:

* no broadcasting except adding a 1-D bias row vector to a 2-D matrix,
* every op validates shapes up front and raises ``DimensionError``,
* any op whose output contains NaN/Inf raises ``NonFiniteError`` immediately,
* scalars are 0-d arrays.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .exceptions import DimensionError, GraphError, NonFiniteError, VocabularyError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# When False, ops skip recording backward closures (cheap inference mode).
_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense real-valued array participating in reverse-mode autodiff.

    ``grad`` is only populated on leaves (tensors without parents) that were
    created with ``requires_grad=True``; repeated ``backward`` calls without
    ``zero_grad`` accumulate additively.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        arr = np.array(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, backward: Optional[Callable], op: str) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        if _grad_enabled and backward is not None and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; the module-level functions are the canonical API.
    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


def _accumulate(store: dict, node: Tensor, grad: np.ndarray) -> None:
    key = id(node)
    if key in store:
        store[key] = store[key] + grad
    else:
        store[key] = grad


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients accumulate additively into every reachable requires-grad leaf;
    call ``zero_grad`` on the leaves between steps.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    # Iterative topological order over the subgraph that requires grad.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._backward is not None:
            node._backward(grad, grads)
        elif node.requires_grad:
            node.grad = grad if node.grad is None else node.grad + grad


def _binop_shapes_equal(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias added to each row of a 2-D matrix."""
    bias_mode = 0
    if a.data.shape != b.data.shape:
        if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
            bias_mode = 2  # b is the bias
        elif b.data.ndim == 2 and a.data.ndim == 1 and b.data.shape[1] == a.data.shape[0]:
            bias_mode = 1  # a is the bias
        else:
            raise DimensionError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data

    def bwd(grad, store):
        ga = grad.sum(axis=0) if bias_mode == 1 else grad
        gb = grad.sum(axis=0) if bias_mode == 2 else grad
        if a.requires_grad:
            _accumulate(store, a, ga)
        if b.requires_grad:
            _accumulate(store, b, gb)

    return Tensor._from_op(out_data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    _binop_shapes_equal(a, b, "mul")
    out_data = a.data * b.data

    def bwd(grad, store):
        if a.requires_grad:
            _accumulate(store, a, grad * b.data)
        if b.requires_grad:
            _accumulate(store, b, grad * a.data)

    return Tensor._from_op(out_data, (a, b), bwd, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar."""
    factor = float(factor)
    out_data = a.data * factor

    def bwd(grad, store):
        if a.requires_grad:
            _accumulate(store, a, grad * factor)

    return Tensor._from_op(out_data, (a,), bwd, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with the classic dA = dC Bᵀ, dB = Aᵀ dC gradients."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul: expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(grad, store):
        if a.requires_grad:
            _accumulate(store, a, grad @ b.data.T)
        if b.requires_grad:
            _accumulate(store, b, a.data.T @ grad)

    return Tensor._from_op(out_data, (a, b), bwd, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expects a 2-D tensor, got {a.data.shape}")
    out_data = a.data.T.copy()

    def bwd(grad, store):
        if a.requires_grad:
            _accumulate(store, a, grad.T)

    return Tensor._from_op(out_data, (a,), bwd, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate 2-D tensors along rows (axis 0) or columns (axis 1)."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: needs at least one tensor")
    if axis not in (0, 1):
        raise DimensionError(f"concat: axis must be 0 or 1, got {axis}")
    for t in tensors:
        if t.data.ndim != 2:
            raise DimensionError(f"concat: expects 2-D tensors, got {t.data.shape}")
        if t.data.shape[1 - axis] != tensors[0].data.shape[1 - axis]:
            raise DimensionError("concat: non-concatenated extents differ")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(grad, store):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                piece = grad[offset:offset + size] if axis == 0 else grad[:, offset:offset + size]
                _accumulate(store, t, piece)
            offset += size

    return Tensor._from_op(out_data, tuple(tensors), bwd, "concat")


def slice_rows(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice along axis 0 or 1 of a 2-D tensor."""
    if a.data.ndim != 2:
        raise DimensionError(f"slice: expects a 2-D tensor, got {a.data.shape}")
    if axis not in (0, 1):
        raise DimensionError(f"slice: axis must be 0 or 1, got {axis}")
    extent = a.data.shape[axis]
    if not (0 <= start <= stop <= extent):
        raise DimensionError(f"slice: range [{start}, {stop}) outside extent {extent}")
    out_data = (a.data[start:stop] if axis == 0 else a.data[:, start:stop]).copy()

    def bwd(grad, store):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            if axis == 0:
                full[start:stop] = grad
            else:
                full[:, start:stop] = grad
            _accumulate(store, a, full)

    return Tensor._from_op(out_data, (a,), bwd, "slice")


def gather(table: Tensor, ids) -> Tensor:
    """Row lookup (embedding gather); gradients scatter-add back to the table."""
    if table.data.ndim != 2:
        raise DimensionError(f"gather: table must be 2-D, got {table.data.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather: ids must be 1-D, got shape {idx.shape}")
    n_rows = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise VocabularyError(f"gather: id outside table of {n_rows} rows")
    out_data = table.data[idx].copy()

    def bwd(grad, store):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, idx, grad)
            _accumulate(store, table, full)

    return Tensor._from_op(out_data, (table,), bwd, "gather")


def sum_all(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum())

    def bwd(grad, store):
        if a.requires_grad:
            _accumulate(store, a, np.full_like(a.data, float(grad)))

    return Tensor._from_op(out_data, (a,), bwd, "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise DimensionError("mean: empty tensor")
    out_data = np.asarray(a.data.mean())

    def bwd(grad, store):
        if a.requires_grad:
            _accumulate(store, a, np.full_like(a.data, float(grad) / n))

    return Tensor._from_op(out_data, (a,), bwd, "mean")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Shift-invariant softmax along one axis."""
    if a.data.size == 0:
        out_data = a.data.copy()
    else:
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(grad, store):
        if a.requires_grad:
            dot = (grad * out_data).sum(axis=axis, keepdims=True)
            _accumulate(store, a, out_data * (grad - dot))

    return Tensor._from_op(out_data, (a,), bwd, "softmax")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
                        np.exp(np.clip(x, None, 0)) / (1.0 + np.exp(np.clip(x, None, 0))))

    def bwd(grad, store):
        if a.requires_grad:
            _accumulate(store, a, grad * out_data * (1.0 - out_data))

    return Tensor._from_op(out_data, (a,), bwd, "sigmoid")


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = x * cdf

    def bwd(grad, store):
        if a.requires_grad:
            local = cdf + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI
            _accumulate(store, a, grad * local)

    return Tensor._from_op(out_data, (a,), bwd, "gelu")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of a 2-D tensor to zero mean / unit variance, then affine."""
    if a.data.ndim != 2:
        raise DimensionError(f"layer_norm: expects a 2-D tensor, got {a.data.shape}")
    d = a.data.shape[1]
    if d < 1:
        raise DimensionError("layer_norm: normalized extent must be >= 1")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = a.data.mean(axis=1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    out_data = x_hat * gain.data + bias.data

    def bwd(grad, store):
        if gain.requires_grad:
            _accumulate(store, gain, (grad * x_hat).sum(axis=0))
        if bias.requires_grad:
            _accumulate(store, bias, grad.sum(axis=0))
        if a.requires_grad:
            g = grad * gain.data
            term = g - g.mean(axis=1, keepdims=True) - x_hat * (g * x_hat).mean(axis=1, keepdims=True)
            _accumulate(store, a, term * inv_std)

    return Tensor._from_op(out_data, (a, gain, bias), bwd, "layer_norm")


def mean_squared_error(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference; scalar output."""
    _binop_shapes_equal(pred, target, "mse")
    diff = pred.data - target.data
    n = diff.size
    out_data = np.asarray((diff * diff).sum() / n)

    def bwd(grad, store):
        coeff = 2.0 * float(grad) / n
        if pred.requires_grad:
            _accumulate(store, pred, coeff * diff)
        if target.requires_grad:
            _accumulate(store, target, -coeff * diff)

    return Tensor._from_op(out_data, (pred, target), bwd, "mse")


def binary_cross_entropy(p: Tensor, targets: Tensor, reduction: str = "sum", eps: float = 1e-12) -> Tensor:
    """BCE on probabilities. ``targets`` holds 0/1 labels and is not differentiated."""
    _binop_shapes_equal(p, targets, "bce")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"bce: unknown reduction {reduction!r}")
    q = np.clip(p.data, eps, 1.0 - eps)
    y = targets.data
    per = -(y * np.log(q) + (1.0 - y) * np.log(1.0 - q))
    n = per.size
    total = per.sum()
    out_data = np.asarray(total / n if reduction == "mean" else total)

    def bwd(grad, store):
        if p.requires_grad:
            g = (-(y / q) + (1.0 - y) / (1.0 - q)) * float(grad)
            if reduction == "mean":
                g = g / n
            _accumulate(store, p, g)

    return Tensor._from_op(out_data, (p, targets), bwd, "bce")


def categorical_cross_entropy(logits: Tensor, target_ids) -> Tensor:
    """Mean negative log-likelihood of integer targets under row-wise softmax."""
    if logits.data.ndim != 2:
        raise DimensionError(f"cce: logits must be 2-D, got {logits.data.shape}")
    idx = np.asarray(target_ids, dtype=np.int64)
    n, v = logits.data.shape
    if idx.shape != (n,):
        raise DimensionError(f"cce: targets must have shape ({n},), got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise VocabularyError(f"cce: target id outside {v} classes")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    out_data = np.asarray(-log_probs[np.arange(n), idx].mean())

    def bwd(grad, store):
        if logits.requires_grad:
            probs = np.exp(log_probs)
            probs[np.arange(n), idx] -= 1.0
            _accumulate(store, logits, probs * (float(grad) / n))

    return Tensor._from_op(out_data, (logits,), bwd, "cce")


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm over all elements; scalar output."""
    norm = float(np.sqrt((a.data * a.data).sum()))
    out_data = np.asarray(norm)

    def bwd(grad, store):
        if a.requires_grad:
            denom = max(norm, 1e-30)
            _accumulate(store, a, (a.data / denom) * float(grad))

    return Tensor._from_op(out_data, (a,), bwd, "l2_norm")
