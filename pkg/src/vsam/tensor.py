"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed inside an active :class:`Tape` context are recorded when
any operand requires a gradient; :func:`backward` replays the recorded rules
in reverse order.  Outside a tape the same functions act as plain numpy
forward computations.

Broadcasting is limited to scalar <-> tensor and same-shape operands, except
where an operation documents leading batch dimensions explicitly.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import (
    ContractError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    NumericalError,
)

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "tanh",
    "exp",
    "log",
    "clip",
    "elementwise",
    "sum",
    "mean",
    "reshape",
    "concat",
    "matmul",
    "linear",
    "masked_softmax",
    "log_softmax",
    "pick",
    "mean_pool_columns",
    "gather_columns",
    "zero_grad",
    "numerical_gradient",
    "relative_error",
    "finite_difference_check",
]

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "vsam_active_tape", default=None
)


class Tensor:
    """A float64 array that may participate in a differentiation tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "op")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op: Optional[str] = None  # producing operation; None for leaves

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        # no-copy constructor for op outputs
        t = cls.__new__(cls)
        t.data = np.asarray(data, dtype=np.float64)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t.op = None
        return t

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
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sum(self, axis=None) -> "Tensor":
        return sum(self, axis)

    def mean(self) -> "Tensor":
        return mean(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: Tensor
    rule: BackwardRule


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; operations run inside the ``with`` block are
    appended in execution order, which is a topological order by
    construction.  Tapes are bound per thread/context via ``contextvars``.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._produced

    def _push(self, op: str, inputs: tuple, output: Tensor, rule: BackwardRule) -> None:
        self.records.append(_Record(op, inputs, output, rule))
        self._produced.add(id(output))

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on ``tape``.

    Leaf gradients add to whatever is already stored; call :func:`zero_grad`
    to reset between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        if loss.requires_grad and loss.op is None:
            _accumulate_leaf(loss, np.ones_like(loss.data))
            return
        raise ContractError(f"loss (op {loss.op!r}) was not produced on this tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = pending.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.rule(g)
        for inp, gi in zip(rec.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if tape.produced(inp):
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi
            else:
                _accumulate_leaf(inp, gi)


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64).reshape(t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple, rule: BackwardRule, op: str) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires)
    out.op = op
    if requires:
        tape = _active_tape.get()
        if tape is not None:
            tape._push(op, inputs, out, rule)
    return out


# -- elementwise -----------------------------------------------------------


def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # leading batch dimensions (matmul)
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), rule, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: argument has non-positive entries")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero where clamping is active."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "tanh": tanh, "exp": exp, "log": log}


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch an elementwise op by name (``add``, ``sub``, ``mul``, ``tanh``, ``exp``, ``log``)."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {kind!r}") from None
    return fn(*operands)


# -- reductions and shape --------------------------------------------------


def sum(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape),), "sum")
    ax = axis % a.ndim

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g, ax), a.shape),)

    return _make(a.data.sum(axis=ax), (a,), rule, "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.shape),), "mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def rule(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(out, ts, rule, "concat")


# -- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics (leading dims act as a batch).

    A 1-D right operand is treated as a column vector.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 1:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    k_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != k_b:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    vec = b.ndim == 1
    bd = b.data[:, None] if vec else b.data
    out = np.matmul(a.data, bd)

    def rule(g):
        g2 = g[..., None] if vec else g
        ga = np.matmul(g2, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g2)
        gb = _unbroadcast(gb, bd.shape)
        if vec:
            gb = gb[:, 0]
        return _unbroadcast(ga, a.shape), gb

    return _make(out[..., 0] if vec else out, (a, b), rule, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``; ``weight`` is (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1:] != weight.shape[1:]:
        raise DimensionError(f"linear: input shape {x.shape} does not match weight shape {weight.shape}")
    out = x.data @ weight.data.T
    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias shape {bias.shape} does not match weight shape {weight.shape}")
        out = out + bias.data
        inputs = (x, weight, bias)

    def rule(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = g @ weight.data
        gw = g2.T @ x.data.reshape(-1, weight.shape[1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, inputs, rule, "linear")


# -- softmax family --------------------------------------------------------


def masked_softmax(logits, mask) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Masked-out positions are exactly zero.  Every row needs at least one
    valid position.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise DimensionError(f"masked_softmax: logits shape {logits.shape} and mask shape {mask.shape} differ")
    if logits.ndim == 0 or not np.all(mask.any(axis=-1)):
        raise DegenerateInputError("masked_softmax: a row has no valid position")
    shifted = np.where(mask, logits.data, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (out * (g - (out * g).sum(axis=-1, keepdims=True)),)

    return _make(out, (logits,), rule, "masked_softmax")


def log_softmax(logits) -> Tensor:
    logits = as_tensor(logits)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def rule(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make(out, (logits,), rule, "log_softmax")


def pick(a, index) -> Tensor:
    """Select ``a[..., index[...]]`` along the last axis."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise DimensionError(f"pick: index shape {idx.shape} does not match {a.shape[:-1]}")
    if np.any(idx < 0) or np.any(idx >= a.shape[-1]):
        raise ContractError("pick: index out of range")
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def rule(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx[..., None], g[..., None], axis=-1)
        return (ga,)

    return _make(out, (a,), rule, "pick")


# -- column operations -----------------------------------------------------


def mean_pool_columns(m, mask) -> Tensor:
    """Average the columns of ``m`` (shape ``[..., D, n]``) where ``mask`` (``[..., n]``) is true."""
    m = as_tensor(m)
    mask = np.asarray(mask, dtype=bool)
    if m.ndim < 2 or mask.shape != m.shape[:-2] + m.shape[-1:]:
        raise DimensionError(f"mean_pool_columns: matrix shape {m.shape} and mask shape {mask.shape} differ")
    count = mask.sum(axis=-1)
    if np.any(count == 0):
        raise DegenerateInputError("mean_pool_columns: no valid column")
    w = mask[..., None, :] / count[..., None, None]
    out = (m.data * w).sum(axis=-1)

    def rule(g):
        return (g[..., :, None] * w,)

    return _make(out, (m,), rule, "mean_pool_columns")


def gather_columns(matrix, index) -> Tensor:
    """Embedding lookup: columns of ``matrix`` (``[D, N]``) at ``index`` (``[..., n]``) -> ``[..., D, n]``."""
    matrix = as_tensor(matrix)
    idx = np.asarray(index, dtype=np.int64)
    if matrix.ndim != 2:
        raise DimensionError(f"gather_columns: expected a matrix, got shape {matrix.shape}")
    out = np.moveaxis(matrix.data[:, idx], 0, -2)

    def rule(g):
        gm = np.zeros_like(matrix.data)
        np.add.at(gm, (slice(None), idx), np.moveaxis(g, -2, 0))
        return (gm,)

    return _make(out, (matrix,), rule, "gather_columns")


# -- verification ----------------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numerical_gradient(f: Callable[[], float], target: Tensor, h: float = 1e-5, points: int = 3) -> np.ndarray:
    """Central differences of the zero-argument ``f`` w.r.t. ``target.data`` (perturbed in place).

    ``points=3`` is the usual (f(x+h) - f(x-h)) / 2h; ``points=5`` uses the
    fourth-order stencil, useful where third derivatives are large.
    """
    if h <= 0:
        raise ContractError("step h must be positive")
    if points not in (3, 5):
        raise ContractError(f"points must be 3 or 5, got {points}")
    # symmetric pairs (k, weight): differences f(x+kh) - f(x-kh) cancel exactly for flat f
    pairs, denom = ((1, 1.0),), 2.0
    if points == 5:
        pairs, denom = ((1, 8.0), (2, -1.0)), 12.0
    flat = target.data.reshape(-1)
    grad = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        total = 0.0
        for k, w in pairs:
            vals = []
            for sign in (1, -1):
                flat[i] = orig + sign * k * h
                vals.append(float(f()))
            flat[i] = orig
            if not np.isfinite(vals).all():
                raise NumericalError(f"non-finite function value while perturbing coordinate {i}")
            total += w * (vals[0] - vals[1])
        grad[i] = total / (denom * h)
    return grad.reshape(target.shape)


def finite_difference_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5, points: int = 3) -> float:
    """Max relative error between the taped gradient of ``f`` at ``point`` and central differences."""
    x = Tensor(as_tensor(point).data, requires_grad=True)
    with Tape() as tape:
        loss = f(x)
    if not np.isfinite(loss.data).all():
        raise NumericalError("function value is not finite")
    if loss.requires_grad:
        backward(tape, loss)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    numeric = numerical_gradient(lambda: f(x).item(), x, h, points)
    return relative_error(analytic, numeric)
