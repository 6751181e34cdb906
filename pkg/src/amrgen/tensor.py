"""Dense float64 tensors with a reverse-mode gradient tape, SGD and
checkpoint serialization. Everything is 64-bit and CPU-only by design:
desk-scale problem sizes make gradient checks reliable and speed irrelevant.
"""
from __future__ import annotations

import json
import zipfile

import numpy as np


class ShapeError(ValueError):
    pass


_DEBUG_CHECK_FINITE = False


def set_debug_nan_checks(enabled: bool) -> None:
    global _DEBUG_CHECK_FINITE
    _DEBUG_CHECK_FINITE = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


class Tape:
    """Ordered record of differentiable operations.

    Execution order is the topological order; backward replays it in reverse.
    A tape is single-use: backward() consumes it.
    """

    def __init__(self):
        self._ops = []  # (output tensor, backward fn)
        self._consumed = False
        self._prev = None

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False

    def __len__(self):
        return len(self._ops)


_ACTIVE_TAPE = None


def _record(out: Tensor, backward) -> None:
    if out.requires_grad and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE._ops.append((out, backward))
    if _DEBUG_CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite value produced by a kernel")


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if tape._consumed:
        raise RuntimeError("tape already consumed")
    tape._consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape._ops):
        if out.grad is not None:
            fn(out.grad)


# --------------------------------------------------------------------------
# Kernels


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    _record(out, bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from None
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    _record(out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}") from None
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    _record(out, bwd)
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    out = Tensor(a.data * factor, requires_grad=a.requires_grad)

    def bwd(g):
        _accumulate(a, g * factor)

    _record(out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        requires_grad=any(t.requires_grad for t in tensors),
    )
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            _accumulate(t, g[tuple(index)])
            offset += size

    _record(out, bwd)
    return out


def sum_rows(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(axis=0, keepdims=True), requires_grad=a.requires_grad)

    def bwd(g):
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    _record(out, bwd)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum().reshape(1, 1), requires_grad=a.requires_grad)

    def bwd(g):
        _accumulate(a, np.full(a.shape, g.reshape(-1)[0]))

    _record(out, bwd)
    return out


def tanh(a: Tensor) -> Tensor:
    value = np.tanh(a.data)
    out = Tensor(value, requires_grad=a.requires_grad)

    def bwd(g):
        _accumulate(a, g * (1.0 - value * value))

    _record(out, bwd)
    return out


def sigmoid(a: Tensor) -> Tensor:
    value = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(value, requires_grad=a.requires_grad)

    def bwd(g):
        _accumulate(a, g * value * (1.0 - value))

    _record(out, bwd)
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0), requires_grad=a.requires_grad)

    def bwd(g):
        _accumulate(a, g * mask)

    _record(out, bwd)
    return out


def softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    value = exp / exp.sum(axis=-1, keepdims=True)
    out = Tensor(value, requires_grad=a.requires_grad)

    def bwd(g):
        dot = (g * value).sum(axis=-1, keepdims=True)
        _accumulate(a, value * (g - dot))

    _record(out, bwd)
    return out


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    value = shifted - logsum
    out = Tensor(value, requires_grad=a.requires_grad)
    soft = np.exp(value)

    def bwd(g):
        _accumulate(a, g - soft * g.sum(axis=-1, keepdims=True))

    _record(out, bwd)
    return out


def dropout(a: Tensor, keep_prob: float, rng, training: bool = True) -> Tensor:
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep probability must be in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return a
    mask = (rng.random(a.shape) < keep_prob) / keep_prob
    out = Tensor(a.data * mask, requires_grad=a.requires_grad)

    def bwd(g):
        _accumulate(a, g * mask)

    _record(out, bwd)
    return out


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.intp)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    out = Tensor(table.data[idx], requires_grad=table.requires_grad)

    def bwd(g):
        if not table.requires_grad:
            return
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accumulate(table, full)

    _record(out, bwd)
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[:, start:stop], requires_grad=a.requires_grad)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accumulate(a, full)

    _record(out, bwd)
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[start:stop, :], requires_grad=a.requires_grad)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[start:stop, :] = g
        _accumulate(a, full)

    _record(out, bwd)
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T, requires_grad=a.requires_grad)

    def bwd(g):
        _accumulate(a, g.T)

    _record(out, bwd)
    return out


def pick(a: Tensor, row: int, col: int) -> Tensor:
    """Select a single entry as a (1, 1) tensor."""
    out = Tensor(a.data[row, col].reshape(1, 1), requires_grad=a.requires_grad)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[row, col] = g.reshape(-1)[0]
        _accumulate(a, full)

    _record(out, bwd)
    return out


# --------------------------------------------------------------------------
# Optimization


def uniform_param(shape, rng, limit: float = 0.1) -> Tensor:
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def sgd_step(params, lr: float) -> None:
    """p <- p - lr * grad(p); grads are cleared."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ValueError("sgd_step called with a parameter missing its gradient")
    for p in params:
        p.data -= lr * p.grad
        p.grad = None


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most max_norm."""
    total = 0.0
    params = [p for p in params if p.grad is not None]
    for p in params:
        total += float((p.grad * p.grad).sum())
    norm = total ** 0.5
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params:
            p.grad *= factor
    return norm


class LrSchedule:
    """Multiplicative decay whenever the dev metric fails to improve."""

    def __init__(self, initial_lr: float = 1.0, decay: float = 0.8):
        self.lr = float(initial_lr)
        self.decay = float(decay)
        self.best = None

    def update(self, dev_metric: float) -> float:
        if self.best is None or dev_metric > self.best:
            self.best = dev_metric
        else:
            self.lr *= self.decay
        return self.lr


# --------------------------------------------------------------------------
# Checkpoint archive: JSON manifest + raw little-endian float64 payloads


def save_arrays(path, manifest: dict, arrays: dict) -> None:
    manifest = dict(manifest)
    manifest["arrays"] = {name: list(a.shape) for name, a in arrays.items()}
    # fixed timestamps and no compression keep checkpoints byte-reproducible
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        info = zipfile.ZipInfo("manifest.json", date_time=(1980, 1, 1, 0, 0, 0))
        archive.writestr(info, json.dumps(manifest, sort_keys=True, indent=1))
        for name in sorted(arrays):
            payload = np.ascontiguousarray(arrays[name], dtype="<f8").tobytes()
            info = zipfile.ZipInfo(f"data/{name}", date_time=(1980, 1, 1, 0, 0, 0))
            archive.writestr(info, payload)


def load_arrays(path):
    with zipfile.ZipFile(path) as archive:
        manifest = json.loads(archive.read("manifest.json"))
        arrays = {}
        for name, shape in manifest["arrays"].items():
            raw = archive.read(f"data/{name}")
            arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return manifest, arrays
