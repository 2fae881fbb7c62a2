"""Dense 2-D numeric kernel with reverse-mode differentiation.

Everything the attention encoder/decoder needs is expressed through a
small set of primitives on `Tensor2` (a 2-D double-precision array with an
optional backward closure). Calling `backward` on a scalar result
accumulates gradients into every reachable parameter. The set is fixed on
purpose: no fusion, no broadcasting beyond 2-D rules, no GPU.

`ParameterStore` owns named parameter tensors plus their Adam moments and
offers a flat view for optimizer steps and finite-difference checks.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Operands with incompatible shapes; message names both."""


class MaskError(ValueError):
    """Masked softmax received a row with no admissible entries."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the context (forward-only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor2:
    """A rows x cols float64 array, optionally part of a backward graph."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"Tensor2 requires a 2-D array, got shape {arr.shape}")
        self.value = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __repr__(self):
        return f"Tensor2(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(value):
    return Tensor2(value, requires_grad=False)


def parameter(value):
    return Tensor2(value, requires_grad=True)


def _node(value, parents, backward_fn):
    """Result tensor; records the graph only when gradients are enabled
    and some parent requires them."""
    out = Tensor2(value)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss):
    """Backpropagate from a (1, 1) scalar, accumulating into .grad."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward requires a (1, 1) scalar, got {loss.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            topo.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones((1, 1))
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        for p, g in zip(node._parents, node._backward(node.grad)):
            if not p.requires_grad or g is None:
                continue
            if p.grad is None:
                p.grad = g if g.base is None else g.copy()
            else:
                p.grad = p.grad + g


# -- Primitives ---------------------------------------------------------------

def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return _node(a.value @ b.value, (a, b),
                 lambda g: (g @ b.value.T, a.value.T @ g))


def matmul_t(a, b):
    """a @ b.T without materializing a transpose node."""
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"matmul_t: column counts differ, {a.shape} @ {b.shape}.T")
    return _node(a.value @ b.value.T, (a, b),
                 lambda g: (g @ b.value, g.T @ a.value))


def _reduce_to(grad, shape):
    """Sum `grad` over the axes that were broadcast up from `shape`."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _broadcastable(sa, sb):
    return all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb))


def add(a, b):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _node(a.value + b.value, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    return _node(a.value - b.value, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a, b):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return _node(a.value * b.value, (a, b),
                 lambda g: (_reduce_to(g * b.value, a.shape),
                            _reduce_to(g * a.value, b.shape)))


def scale(a, c):
    c = float(c)
    return _node(a.value * c, (a,), lambda g: (g * c,))


def relu(a):
    out = np.maximum(a.value, 0.0)
    return _node(out, (a,), lambda g: (g * (a.value > 0.0),))


def tanh(a):
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def log(a):
    if np.any(a.value <= 0.0):
        raise ValueError("log requires strictly positive entries")
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def concat_cols(parts):
    parts = list(parts)
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(
                f"concat_cols: row counts differ, {p.shape} vs ({rows}, *)")
    widths = [p.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]
    return _node(np.concatenate([p.value for p in parts], axis=1), tuple(parts),
                 lambda g: tuple(np.split(g, splits, axis=1)))


def concat_rows(parts):
    parts = list(parts)
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError(
                f"concat_rows: column counts differ, {p.shape} vs (*, {cols})")
    heights = [p.shape[0] for p in parts]
    splits = np.cumsum(heights)[:-1]
    return _node(np.concatenate([p.value for p in parts], axis=0), tuple(parts),
                 lambda g: tuple(np.split(g, splits, axis=0)))


def reshape(a, rows, cols):
    if rows * cols != a.shape[0] * a.shape[1]:
        raise ShapeError(f"reshape: {a.shape} has no ({rows}, {cols}) view")
    return _node(a.value.reshape(rows, cols), (a,),
                 lambda g: (g.reshape(a.shape),))


def transpose(a):
    return _node(a.value.T.copy(), (a,), lambda g: (g.T,))


def gather_rows(a, indices):
    idx = np.asarray(indices, dtype=np.intp)

    def bwd(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], (a,), bwd)


def mean_rows(a):
    n = a.shape[0]
    return _node(a.value.mean(axis=0, keepdims=True), (a,),
                 lambda g: (np.repeat(g / n, n, axis=0),))


def sum_rows(a):
    n = a.shape[0]
    return _node(a.value.sum(axis=0, keepdims=True), (a,),
                 lambda g: (np.repeat(g, n, axis=0),))


def softmax_masked(logits, mask):
    """Row-wise softmax restricted to mask==True entries.

    Masked entries get probability exactly 0.0 and receive no gradient.
    A row with no admissible entry raises MaskError; callers that can
    produce isolated rows must handle them before the softmax.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ShapeError(f"softmax_masked: logits {logits.shape} vs mask {mask.shape}")
    if not mask.any(axis=1).all():
        bad = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise MaskError(f"softmax_masked: row {bad} has all entries masked")
    neg = np.where(mask, logits.value, -np.inf)
    shifted = neg - neg.max(axis=1, keepdims=True)
    ex = np.where(mask, np.exp(shifted), 0.0)
    probs = ex / ex.sum(axis=1, keepdims=True)

    def bwd(g):
        inner = (g * probs).sum(axis=1, keepdims=True)
        return (probs * (g - inner),)

    return _node(probs, (logits,), bwd)


def instance_norm(x, gain, bias, eps=1e-5):
    """Column-wise standardization over the row (node) dimension, with a
    learned per-column gain and bias. Population variance; eps keeps the
    single-row case defined."""
    if gain.shape != (1, x.shape[1]) or bias.shape != (1, x.shape[1]):
        raise ShapeError(f"instance_norm: x {x.shape} needs gain/bias of shape "
                         f"(1, {x.shape[1]}), got {gain.shape} and {bias.shape}")
    n = x.shape[0]
    mu = x.value.mean(axis=0, keepdims=True)
    var = ((x.value - mu) ** 2).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv
    out = xhat * gain.value + bias.value

    def bwd(g):
        gg = g * gain.value
        dx = inv * (gg - gg.mean(axis=0, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=0, keepdims=True))
        return (dx,
                (g * xhat).sum(axis=0, keepdims=True),
                g.sum(axis=0, keepdims=True))

    return _node(out, (x, gain, bias), bwd)


def linear(x, w):
    """x @ w.T for a weight stored as (out_dim, in_dim)."""
    return matmul_t(x, w)


def affine(x, w, b):
    return add(linear(x, w), b)


# -- Parameter store ----------------------------------------------------------

class ParameterStore:
    """Named parameter matrices with Adam moments and a flat index space."""

    def __init__(self, seed=0):
        self.params = {}
        self.adam_m = {}
        self.adam_v = {}
        self.step = 0
        self.seed = seed

    def add(self, name, value):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = parameter(np.array(value, dtype=np.float64))
        self.params[name] = t
        self.adam_m[name] = np.zeros_like(t.value)
        self.adam_v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name):
        return self.params[name]

    def names(self):
        return list(self.params)

    @property
    def num_values(self):
        return sum(t.value.size for t in self.params.values())

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    def grad_vector(self):
        chunks = []
        for t in self.params.values():
            g = t.grad if t.grad is not None else np.zeros_like(t.value)
            chunks.append(g.ravel())
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def value_vector(self):
        return np.concatenate([t.value.ravel() for t in self.params.values()])

    def set_value_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_values:
            raise ShapeError(f"set_value_vector: expected {self.num_values} values, "
                             f"got {vec.size}")
        pos = 0
        for t in self.params.values():
            n = t.value.size
            t.value = vec[pos:pos + n].reshape(t.value.shape).copy()
            pos += n

    def nudge(self, flat_index, delta):
        """Add `delta` to one scalar parameter component (for FD probes)."""
        pos = 0
        for t in self.params.values():
            n = t.value.size
            if flat_index < pos + n:
                t.value.flat[flat_index - pos] += delta
                return
            pos += n
        raise IndexError(flat_index)

    def to_json_dict(self):
        return {
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "step": self.step,
            "params": {name: {"shape": list(t.value.shape),
                              "values": t.value.ravel().tolist()}
                       for name, t in self.params.items()},
            "adam_m": {name: m.ravel().tolist() for name, m in self.adam_m.items()},
            "adam_v": {name: v.ravel().tolist() for name, v in self.adam_v.items()},
        }

    @classmethod
    def from_json_dict(cls, obj):
        if obj.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
        store = cls(seed=obj["seed"])
        store.step = obj["step"]
        for name, spec in obj["params"].items():
            shape = tuple(spec["shape"])
            store.add(name, np.array(spec["values"], dtype=np.float64).reshape(shape))
            store.adam_m[name] = np.array(obj["adam_m"][name],
                                          dtype=np.float64).reshape(shape)
            store.adam_v[name] = np.array(obj["adam_v"][name],
                                          dtype=np.float64).reshape(shape)
        return store

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def init_parameters(shape_table, seed):
    """Create a store from an ordered {name: (rows, cols)} table.

    Every matrix is drawn uniformly from [-1/sqrt(d), 1/sqrt(d)] with d its
    input (column) dimension; deterministic in `seed`.
    """
    rng = np.random.default_rng(seed)
    store = ParameterStore(seed=seed)
    for name, (rows, cols) in shape_table.items():
        bound = 1.0 / np.sqrt(cols)
        store.add(name, rng.uniform(-bound, bound, size=(rows, cols)))
    return store


def grad_global_norm(store):
    vec = store.grad_vector()
    return float(np.sqrt(np.sum(vec * vec)))


def clip_grads(store, max_norm):
    """Scale all gradients so the global norm is at most max_norm."""
    norm = grad_global_norm(store)
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        for t in store.params.values():
            if t.grad is not None:
                t.grad = t.grad * factor
    return norm


def adam_step(store, grads=None, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8,
              step=None):
    """One Adam update over every parameter in the store.

    `grads` maps names to gradient arrays; omitted entries (or None) fall
    back to the tensors' accumulated .grad, treating missing gradients as
    zero. Moments and the step counter persist in the store.
    """
    if step is None:
        store.step += 1
        step = store.step
    else:
        store.step = step
    for name, t in store.params.items():
        g = grads.get(name) if grads is not None else t.grad
        if g is None:
            g = np.zeros_like(t.value)
        if g.shape != t.value.shape:
            raise ShapeError(f"adam_step: gradient for {name!r} has shape "
                             f"{g.shape}, parameter has {t.value.shape}")
        m = store.adam_m[name]
        v = store.adam_v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        store.adam_m[name] = m
        store.adam_v[name] = v
        mhat = m / (1.0 - beta1 ** step)
        vhat = v / (1.0 - beta2 ** step)
        t.value = t.value - lr * mhat / (np.sqrt(vhat) + eps)
