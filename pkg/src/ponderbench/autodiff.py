"""Dense float64 tensors with a dynamically recorded reverse-mode graph.

Every op accepts either a single vector ``[n]`` or a batch of row vectors
``[B, n]``; the only broadcasting supported is a trailing-shape operand
(bias, per-row scale) against a batch.
"""
from __future__ import annotations

from typing import Callable, Iterable, Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(FloatingPointError):
    """A value that must be finite is NaN or infinite."""


class Tensor:
    __slots__ = ("value", "grad", "name", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(()))

    def check_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.value)):
            raise NonFiniteError(f"non-finite values in {self!r}")
        return self

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    # Only keep graph edges when some parent needs a gradient.
    if any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or not sa or not sb:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if long_[len(long_) - len(short):] != short:
        raise DimensionError(f"cannot combine shapes {sa} and {sb}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale_rows(x: Tensor, w) -> Tensor:
    """Multiply row ``i`` of ``x[B, n]`` by ``w[i]``; ``w`` may be a Tensor[B] or array."""
    w = as_tensor(w)
    if x.value.ndim != 2 or w.shape != (x.shape[0],):
        raise DimensionError(f"scale_rows needs x[B, n] and w[B], got {x.shape} and {w.shape}")
    xv, wv = x.value, w.value
    return _node(xv * wv[:, None], (x, w),
                 lambda g: (g * wv[:, None], np.einsum("bn,bn->b", g, xv)))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.value)
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form: cannot overflow and is exactly complementary in v and -v
    y = np.tanh(0.5 * v)
    y += 1.0
    y *= 0.5
    return y


def activate(kind: str, x: Tensor) -> Tensor:
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.value)
    return _node(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xv = x.value
    return _node(np.log(xv), (x,), lambda g: (g / xv,))


# ---------------------------------------------------------------------------
# linear algebra and structure


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``W·x + b`` for a vector ``x[n]``, or row-wise ``x·Wᵀ + b`` for ``x[B, n]``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.value.ndim != 2 or x.value.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"affine: W{W.shape} does not accept x{x.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise DimensionError(f"affine: bias {b.shape} does not match W{W.shape}")
    xv, Wv = x.value, W.value
    out = xv @ Wv.T
    if b is None:
        return _node(out, (x, W), lambda g: (g @ Wv, _outer_sum(g, xv)))
    out = out + b.value
    return _node(out, (x, W, b),
                 lambda g: (g @ Wv, _outer_sum(g, xv), g if g.ndim == 1 else g.sum(axis=0)))


def _outer_sum(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.outer(g, x) if g.ndim == 1 else g.T @ x


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if len({p.value.ndim for p in parts}) != 1:
        raise DimensionError("concat: operands differ in rank")
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    value = np.concatenate([p.value for p in parts], axis=axis)
    return _node(value, parts, lambda g: tuple(np.split(g, cuts, axis=axis)))


def take(x: Tensor, index) -> Tensor:
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _node(x.value[index], (x,), back)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def total(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    if axis is None:
        return _node(np.asarray(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % x.value.ndim
    return _node(x.value.sum(axis=ax), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.value.size
    return mul(total(x), 1.0 / n)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _node(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def log_softmax(x: Tensor) -> Tensor:
    z = x.value - x.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _node(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def weighted_sum(states: Sequence[Tensor], weights: Sequence) -> Tensor:
    """``Σ weights[i]·states[i]``.

    A weight is a float, a scalar Tensor, or a Tensor[B] applied per row of a
    batched state. Gradients reach both states and tensor-valued weights.
    """
    if len(states) != len(weights):
        raise DimensionError(f"{len(states)} states but {len(weights)} weights")
    if not states:
        raise DimensionError("weighted_sum of nothing")
    shape = states[0].shape
    acc = None
    for s, w in zip(states, weights):
        s = as_tensor(s)
        if s.shape != shape:
            raise DimensionError(f"state shapes differ: {shape} vs {s.shape}")
        w = as_tensor(w)
        term = scale_rows(s, w) if w.value.ndim == 1 and s.value.ndim == 2 else mul(s, w)
        acc = term if acc is None else add(acc, term)
    return acc


# ---------------------------------------------------------------------------
# fused losses


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    z = logits.value
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != z.shape:
        raise DimensionError(f"targets {y.shape} vs logits {z.shape}")
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    p = _sigmoid(z)
    return _node(loss, (logits,), lambda g: (g * (p - y),))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Cross-entropy over the last axis; ``labels`` are integer class indices."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"labels {labels.shape} vs logits {logits.shape}")
    lp = log_softmax(logits)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    return neg(total(mul(lp, onehot), axis=-1))


# ---------------------------------------------------------------------------
# parameters and differentiation


class ParamStore:
    """Named trainable tensors, iterated in sorted-name order."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, t in (params or {}).items():
            self.add(name, t)

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.name = name
        t.requires_grad = trainable
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self:
            yield name, self._params[name]

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.items() if t.requires_grad]

    def zero_grad(self) -> None:
        for _, t in self.items():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (t.grad if t.grad is not None else np.zeros(t.shape)) for n, t in self.trainable()}

    def size(self) -> int:
        return sum(t.value.size for _, t in self.items())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, t in self.items():
            out.add(n, t.value.copy(), trainable=t.requires_grad)
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.value.copy() for n, t in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, v in state.items():
            if self._params[n].shape != np.shape(v):
                raise DimensionError(f"{n}: shape {np.shape(v)} != {self._params[n].shape}")
            self._params[n].value = np.array(v, dtype=np.float64)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: ParamStore | None = None) -> None:
    """Populate ``.grad`` on every node upstream of a scalar ``loss``.

    Grads are overwritten, never accumulated across calls. Parameters in
    ``params`` that the loss does not depend on get zero grads.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        params.zero_grad()
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones(loss.shape)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    if params is not None:
        for _, t in params.trainable():
            if t.grad is None:
                t.grad = np.zeros(t.shape)


def grad_check(f: Callable[[], Tensor], params: ParamStore, h: float = 1e-5,
               names: Iterable[str] | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    loss = f()
    if not np.isfinite(loss.value).all():
        raise NonFiniteError("loss is not finite")
    backward(loss, params)
    analytic = {n: params[n].grad.copy() for n, _ in params.trainable()}
    worst = 0.0
    for name in (names if names is not None else analytic):
        t = params[name]
        flat = t.value.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f().item()
            flat[i] = old - h
            down = f().item()
            flat[i] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"loss not finite when perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
