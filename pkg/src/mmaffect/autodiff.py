"""Dense float64 tensors with reverse-mode differentiation.

Every learnable operation in the pipeline is expressed through the ops in
this module. Ops link their result to their inputs, so the computation
graph is the web of parent references (acyclic by construction: a result
can only point at tensors that already exist). `backward` replays the
chain rule from a scalar loss; `grad_check` verifies any composition
against central finite differences.

Everything is float64: the artifact is desk-scale and gradient-check
fidelity beats speed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

Array = np.ndarray
TensorLike = Union["Tensor", Array, float, int, list, tuple]


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonScalarLoss(ValueError):
    """backward() needs a scalar (size-1) loss tensor."""


class InvalidProbability(ValueError):
    """Dropout rate must satisfy 0 <= p < 1."""


class Tensor:
    """N-dimensional float64 array, optionally tracked for differentiation.

    After `backward(loss)`, every tensor with ``requires_grad=True`` that
    the loss depends on holds d(loss)/d(tensor) in ``.grad``. Gradients
    accumulate across backward calls until ``zero_grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data: TensorLike, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Optional[Callable[[Array], tuple[Optional[Array], ...]]] = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # Thin operator sugar; the named functions below do the work.
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        # No differentiable ancestry: drop the links so the graph stays small.
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the operand's original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward_fn(g: Array):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _make(a.data + b.data, (a, b), backward_fn, "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward_fn(g: Array):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return _make(a.data - b.data, (a, b), backward_fn, "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward_fn(g: Array):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _make(a.data * b.data, (a, b), backward_fn, "mul")


def scale(x: TensorLike, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)

    def backward_fn(g: Array):
        return (g * c,)

    return _make(x.data * c, (x,), backward_fn, "scale")


# ---------------------------------------------------------------------------
# matmul


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product with broadcasting over leading (batch) axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch(f"matmul: batch dimensions do not broadcast, {a.shape} vs {b.shape}") from None

    def backward_fn(g: Array):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward_fn, "matmul")


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: TensorLike, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    data = x.data.reshape(shape)

    def backward_fn(g: Array):
        return (g.reshape(x.shape),)

    return _make(data, (x,), backward_fn, "reshape")


def transpose(x: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g: Array):
        return (g.transpose(inverse),)

    return _make(x.data.transpose(axes), (x,), backward_fn, "transpose")


def concat(xs: Sequence[TensorLike], axis: int = -1) -> Tensor:
    ts = [_as_tensor(x) for x in xs]
    if not ts:
        raise ShapeMismatch("concat: need at least one input")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    ax = axis % data.ndim
    sizes = [t.shape[ax] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g: Array):
        pieces = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[ax] = slice(lo, hi)
                pieces.append(g[tuple(index)])
            else:
                pieces.append(None)
        return tuple(pieces)

    return _make(data, tuple(ts), backward_fn, "concat")


def take_rows(x: TensorLike, indices) -> Tensor:
    """Select rows along the first axis; gradients scatter back additively."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)

    def backward_fn(g: Array):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.data[idx], (x,), backward_fn, "take_rows")


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g: Array):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(data, (x,), backward_fn, "sum")


def reduce_mean(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x: TensorLike) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def backward_fn(g: Array):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0.0), (x,), backward_fn, "relu")


def sigmoid(x: TensorLike) -> Tensor:
    x = _as_tensor(x)
    # Piecewise form avoids exp overflow on large-magnitude logits.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def backward_fn(g: Array):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), backward_fn, "sigmoid")


def log(x: TensorLike) -> Tensor:
    x = _as_tensor(x)

    def backward_fn(g: Array):
        return (g / x.data,)

    return _make(np.log(x.data), (x,), backward_fn, "log")


def clip(x: TensorLike, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through strictly interior entries."""
    x = _as_tensor(x)
    interior = (x.data > lo) & (x.data < hi)

    def backward_fn(g: Array):
        return (g * interior,)

    return _make(np.clip(x.data, lo, hi), (x,), backward_fn, "clip")


def softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeMismatch(f"softmax: axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g: Array):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), backward_fn, "softmax")


def log_softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward_fn(g: Array):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward_fn, "log_softmax")


def layer_norm(x: TensorLike, gamma: TensorLike, beta: TensorLike, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if d < 1 or gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch(f"layer_norm: gamma/beta must be ({d},), got {gamma.shape} and {beta.shape}")
    if not eps > 0:
        raise ValueError(f"layer_norm: eps must be positive, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward_fn(g: Array):
        gx = ggamma = gbeta = None
        reduce_axes = tuple(range(g.ndim - 1))
        if beta.requires_grad:
            gbeta = g.sum(axis=reduce_axes)
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=reduce_axes)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward_fn, "layer_norm")


def conv1d(x: TensorLike, kernels: TensorLike, bias: TensorLike) -> Tensor:
    """Temporal cross-correlation with same-padding.

    x: (..., T, C_in), kernels: (C_out, C_in, k) with k odd, bias: (C_out,).
    Output length equals input length; padding is zeros on both sides.
    """
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    if x.ndim < 2 or kernels.ndim != 3:
        raise ShapeMismatch(f"conv1d: expected (..., T, C_in) and (C_out, C_in, k), got {x.shape} and {kernels.shape}")
    c_out, c_in, k = kernels.shape
    if k % 2 == 0:
        raise ShapeMismatch(f"conv1d: kernel size must be odd for same-padding, got {k}")
    if x.shape[-1] != c_in:
        raise ShapeMismatch(f"conv1d: input has {x.shape[-1]} channels, kernels expect {c_in}")
    if bias.shape != (c_out,):
        raise ShapeMismatch(f"conv1d: bias must be ({c_out},), got {bias.shape}")
    t = x.shape[-2]
    pad = (k - 1) // 2
    pad_spec = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, pad_spec)
    out = np.broadcast_to(bias.data, x.shape[:-1] + (c_out,)).copy()
    for j in range(k):
        out += xp[..., j : j + t, :] @ kernels.data[:, :, j].T

    def backward_fn(g: Array):
        gx = gk = gb = None
        lead = tuple(range(g.ndim - 1))
        if bias.requires_grad:
            gb = g.sum(axis=lead)
        if kernels.requires_grad:
            gk = np.empty_like(kernels.data)
            for j in range(k):
                # (C_out, C_in) from summing frames and batch entries
                gk[:, :, j] = np.tensordot(g, xp[..., j : j + t, :], axes=(lead, lead))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j : j + t, :] += g @ kernels.data[:, :, j]
            gx = gxp[..., pad : pad + t, :]
        return gx, gk, gb

    return _make(out, (x, kernels, bias), backward_fn, "conv1d")


def dropout(x: TensorLike, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Zero entries with probability p, rescaling survivors by 1/(1-p).

    Identity (and consumes no randomness) when training is False or p == 0.
    """
    if not 0.0 <= p < 1.0:
        raise InvalidProbability(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    x = _as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward_fn(g: Array):
        return (g * keep,)

    return _make(x.data * keep, (x,), backward_fn, "dropout")


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, Iterable[Tensor]]] = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into .grad for every reachable tracked tensor.

    Each call adds one full pass worth of gradient: running backward twice
    without zeroing doubles every .grad.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    topo = _toposort(loss)
    pass_grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = pass_grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward_fn is None:
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            held = pass_grads.get(key)
            pass_grads[key] = pg if held is None else held + pg


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    """Outcome of comparing backward gradients with finite differences."""

    max_rel_error: float
    tol: float
    per_tensor: dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(
    f: Callable[[], Tensor],
    wrt: Union[Tensor, Sequence[Tensor]],
    h: float = 1e-5,
    tol: float = 1e-4,
    names: Optional[Sequence[str]] = None,
) -> GradCheckReport:
    """Compare backward gradients of the scalar f() against central differences.

    f is re-evaluated with each checked entry perturbed by +-h in place, so
    it must be a pure function of the current tensor values (fix any rng
    consumption inside f).
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    tensors = [wrt] if isinstance(wrt, Tensor) else list(wrt)
    labels = list(names) if names is not None else [f"t{i}" for i in range(len(tensors))]
    zero_grads(tensors)
    loss = f()
    if loss.data.size != 1:
        raise NonScalarLoss(f"grad_check target must be scalar, got shape {loss.shape}")
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    per_tensor: dict[str, float] = {}
    worst = 0.0
    for t, a, label in zip(tensors, analytic, labels):
        flat = t.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * h)
        an = a.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(an), np.abs(numeric)), 1e-6)
        err = float(np.max(np.abs(an - numeric) / denom)) if flat.size else 0.0
        per_tensor[label] = err
        worst = max(worst, err)
    zero_grads(tensors)
    return GradCheckReport(max_rel_error=worst, tol=tol, per_tensor=per_tensor)


# ---------------------------------------------------------------------------
# deterministic randomness


def make_rng(*key_parts) -> np.random.Generator:
    """Counter-based generator for a named stream.

    Keyed by hashing the parts (seed, stream name, epoch, ...), so any
    stream can be reconstructed exactly from its labels; nothing depends
    on draw order elsewhere in the program.
    """
    label = "/".join(str(p) for p in key_parts)
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
