"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every public op takes and returns :class:`Tensor`. When a :class:`Tape` is
active (``with Tape() as tape:``) and at least one input requires a gradient,
the op appends a node to the tape; :func:`backward` then walks the tape in
reverse, visiting each node once.

Broadcasting follows numpy; gradients are summed back onto the input shape.
"""
from __future__ import annotations

import contextvars
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "DimensionError",
    "ConfigError",
    "ContractError",
    "Tensor",
    "Tape",
    "tensor",
    "constant",
    "matmul",
    "activation",
    "tanh",
    "sigmoid",
    "gelu",
    "leaky_relu",
    "softshrink",
    "dropout",
    "concat",
    "square",
    "absolute",
    "arctan",
    "record",
    "backward",
    "finite_diff_check",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """An op or model was configured with an invalid option."""


class ContractError(RuntimeError):
    """A call violated an op precondition (e.g. non-scalar loss)."""


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("tape", default=None)


@dataclass(eq=False)
class Node:
    inputs: tuple["Tensor", ...]
    output: "Tensor"
    kind: str
    grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class Tape:
    """Ordered record of primitive ops for one forward pass."""

    nodes: list[Node] = field(default_factory=list)
    visits: int = 0
    _token: contextvars.Token | None = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """Immutable n-d float64 array plus autodiff bookkeeping."""

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # arithmetic -------------------------------------------------------
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # shape ops --------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def record(
    out: np.ndarray,
    inputs: Sequence[Tensor],
    grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    kind: str,
) -> Tensor:
    """Wrap ``out`` as a Tensor and, if a tape is active, log its backward rule.

    ``grad_fn`` maps the output gradient to one gradient (or None) per input.
    Other modules use this to define primitives with hand-written adjoints.
    """
    needs = False
    for t in inputs:
        if t.requires_grad:
            needs = True
            break
    result = Tensor(out, requires_grad=needs)
    tape = _ACTIVE_TAPE.get()
    if needs and tape is not None:
        tape.nodes.append(Node(tuple(inputs), result, kind, grad_fn))
    return result


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


def _binary_shapes(a: Tensor, b: Tensor) -> None:
    if a.data.shape == b.data.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _binary_shapes(a, b)
    return record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _binary_shapes(a, b)
    return record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _binary_shapes(a, b)
    return record(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _binary_shapes(a, b)
    out = a.data / b.data
    return record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        ),
        "div",
    )


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def square(a: Tensor) -> Tensor:
    return record(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at 0
    return record(np.abs(a.data), (a,), lambda g: (np.sign(a.data) * g,), "abs")


def arctan(a: Tensor) -> Tensor:
    return record(np.arctan(a.data), (a,), lambda g: (g / (1.0 + a.data * a.data),), "arctan")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batching leading axes.

    A 2-d right operand is the usual weight-matrix case: ``(..., m, k) @ (k, n)``.
    """
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # fold batch axes into rows: one GEMM instead of a batched one
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return record(out, (a, b), grad_fn, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return record(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    inverse = tuple(np.argsort(axes))
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return record(np.array(a.data[index]), (a,), grad_fn, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [constant(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(out, (a,), grad_fn, "sum")


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    total = tensor_sum(a, axis, keepdims)
    return total * (total.size / a.size)


# activations ----------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def gelu(x: Tensor, exact: bool = False) -> Tensor:
    v = x.data
    if exact:
        cdf = 0.5 * (1.0 + erf(v / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * v * v) / math.sqrt(2.0 * math.pi)
        return record(v * cdf, (x,), lambda g: (g * (cdf + v * pdf),), "gelu")
    inner = _GELU_C * (v + 0.044715 * v**3)
    th = np.tanh(inner)
    out = 0.5 * v * (1.0 + th)

    def grad_fn(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner),)

    return record(out, (x,), grad_fn, "gelu")


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope)
    return record(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def softshrink(x: Tensor, lam: float = 0.5) -> Tensor:
    if lam < 0:
        raise ConfigError(f"softshrink threshold must be >= 0, got {lam}")
    v = x.data
    out = np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
    mask = (np.abs(v) > lam).astype(np.float64)
    return record(out, (x,), lambda g: (g * mask,), "softshrink")


def activation(kind: str, x: Tensor, **kwargs) -> Tensor:
    """Dispatch by name: tanh, gelu, sigmoid, leaky_relu, softshrink."""
    table = {
        "tanh": tanh,
        "gelu": gelu,
        "sigmoid": sigmoid,
        "leaky_relu": leaky_relu,
        "softshrink": softshrink,
    }
    try:
        fn = table[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}") from None
    return fn(x, **kwargs)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return record(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# reverse pass ---------------------------------------------------------


def backward(tape: Tape, loss: Tensor, wrt: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of the scalar ``loss`` with respect to each tensor in ``wrt``.

    Leaves that did not take part in the recorded computation get zeros.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        tape.visits += 1
        gout = grads.pop(id(node.output), None)
        if gout is None:
            continue
        for inp, g in zip(node.inputs, node.grad_fn(gout)):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    return {
        name: np.asarray(grads.get(id(t), np.zeros_like(t.data)), dtype=np.float64).reshape(t.shape)
        for name, t in wrt.items()
    }


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max over entries of |analytic - central difference| / max(1, |analytic|)."""
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(leaf)
    analytic = backward(tape, out, {"x": leaf})["x"]
    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f(Tensor(base)).item()
        flat[i] = old - eps
        lo = f(Tensor(base)).item()
        flat[i] = old
        numeric.reshape(-1)[i] = (hi - lo) / (2 * eps)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
