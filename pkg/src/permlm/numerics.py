"""Float64 tensors with tape-based reverse-mode differentiation, plus Adam.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient.  Outside a tape nothing is recorded,
which doubles as an inference mode::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = (x @ w).sum()
    backward(loss, tape)
    w.grad  # accumulated, caller zeroes between steps
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import NonFiniteError, ParameterError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "reshape",
    "swapaxes",
    "embedding",
    "stable_softmax",
    "log_softmax",
    "layer_norm",
    "gelu",
    "dropout",
    "cross_entropy",
    "AdamState",
    "adam_step",
    "Adam",
    "lr_at_step",
    "clip_grad_norm",
]

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Node(NamedTuple):
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], tuple]
    op: str


class Tape:
    """Ordered record of differentiable operations.

    Tapes are thread-confined: the active-tape stack is thread-local.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)


def current_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array that can take part in a :class:`Tape`."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    result = Tensor.__new__(Tensor)
    result.data = out
    result.grad = None
    result.name = None
    result.requires_grad = False
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.nodes.append(Node(tuple(inputs), result, backward_fn, op))
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# elementwise and structural ops
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _record(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bw, "mul")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _record(out, (a, b), bw, "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return _record(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out = np.swapaxes(x.data, a, b)
    return _record(out, (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def tensor_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())
    return _record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def tensor_mean(x: Tensor) -> Tensor:
    n = x.size
    out = np.asarray(x.data.mean())
    return _record(out, (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),), "mean")


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"id out of range for embedding with {weight.shape[0]} rows")
    out = weight.data[ids]

    def bw(g):
        grad = np.zeros_like(weight.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _record(out, (weight,), bw, "embedding")


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {x.shape}")
    if x.shape[axis] == 0:
        raise ShapeError(f"softmax over empty axis {axis} of shape {x.shape}")
    return axis


def stable_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    if not eps > 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}, {beta.shape} do not match last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = gxhat = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = inv * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            )
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0) if gamma.requires_grad else None
        gbeta = g.reshape(-1, d).sum(axis=0) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), bw, "layer_norm")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU (smooth, so finite differences stay clean)."""
    x = _as_tensor(x)
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _record(out, (x,), bw, "gelu")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under row-wise softmax."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects B x C logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if targets.shape[0] != n:
        raise ShapeError(f"{targets.shape[0]} targets for {n} logit rows")
    if n == 0:
        raise ShapeError("cross_entropy over an empty batch")
    if targets.min() < 0 or targets.max() >= c:
        raise IndexError(f"target index out of range for {c} classes")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    out = np.asarray(-logp[rows, targets].mean())

    def bw(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (g / n),)

    return _record(out, (logits,), bw, "cross_entropy")


# --------------------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> dict:
    """Replay ``tape`` in reverse, accumulating into ``.grad`` of every leaf.

    Leaves are tensors with ``requires_grad`` that were fed into the tape but
    not produced by it.  Leaves the loss does not depend on receive zeros.
    Returns a mapping from leaf tensor to its (accumulated) gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(node.output) for node in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss
    result = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        result[leaf] = leaf.grad
    return result


# --------------------------------------------------------------------------
# optimisation
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, shape, **kwargs) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), **kwargs)


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    Inputs are not modified.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError(
            f"adam_step shapes disagree: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    if lr < 0:
        raise ParameterError(f"learning rate must be non-negative, got {lr}")
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * grads
    v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new, replace(state, m=m, v=v, t=t)


@dataclass
class Adam:
    """Adam over a name -> Tensor mapping, updating ``Tensor.data`` in place."""

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict = field(default_factory=dict)

    def step(self, params: dict, lr: float):
        for name, p in params.items():
            if p.grad is None:
                continue
            state = self.states.get(name)
            if state is None:
                state = AdamState.zeros(p.shape, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)
            p.data, self.states[name] = adam_step(p.data, p.grad, state, lr)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


def lr_at_step(step: int, total_steps: int, max_lr: float) -> float:
    """Linear warmup over the first 10% of steps, then linear decay to zero."""
    if total_steps <= 0:
        raise ParameterError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    if max_lr <= 0:
        raise ParameterError(f"max_lr must be positive, got {max_lr}")
    warmup = -(-total_steps // 10)
    if step == warmup:
        return max_lr
    if step < warmup:
        return max_lr * step / warmup
    return max_lr * (total_steps - step) / (total_steps - warmup)
