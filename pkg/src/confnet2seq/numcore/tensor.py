"""Dense float64 tensors with reverse-mode automatic differentiation.

Primitives compute eagerly on numpy buffers.  While a Tape is active (used
as a context manager), any primitive whose inputs require gradients appends
a node carrying its backward rule; ``backward`` replays the tape in reverse
and *accumulates* into ``.grad`` buffers, so a parameter used on several
paths receives the sum of its path gradients.  With no active tape the same
primitives run as plain numpy, which keeps evaluation and finite-difference
loops cheap.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericError, ShapeError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
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

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions are the primitive set.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(arr: np.ndarray, requires_grad: bool) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = requires_grad
    t.grad = None
    t.name = None
    return t


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations (a single forward pass).

    Execution order is topological by construction: an operation can only
    consume tensors that already exist.
    """

    __slots__ = ("_nodes", "_consumed")

    def __init__(self):
        self._nodes: list[tuple[tuple[Tensor, ...], tuple[Tensor, ...], object]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape context exited out of order"
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, inputs, outputs, backward_fn) -> None:
        self._nodes.append((tuple(inputs), tuple(outputs), backward_fn))


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(inputs: tuple[Tensor, ...], out: Tensor, backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(inputs, (out,), backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(tensor) into .grad for every requires_grad tensor
    reachable through the tape.  The tape is single-use."""
    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape._consumed:
        raise ContractError("tape has already been consumed by backward")
    tape._consumed = True
    if loss.grad is None:
        loss.grad = np.ones((), dtype=np.float64)
    else:
        loss.grad = loss.grad + 1.0
    for _, outputs, backward_fn in reversed(tape._nodes):
        grads = [o.grad for o in outputs]
        if all(g is None for g in grads):
            continue
        grads = tuple(
            g if g is not None else np.zeros_like(o.data) for o, g in zip(outputs, grads)
        )
        backward_fn(grads)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_op(a: Tensor, b: Tensor, fn, name: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _wrap(_broadcast_op(a, b, np.add, "add"), a.requires_grad or b.requires_grad)

    def bwd(gs):
        g = gs[0]
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _record((a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _wrap(_broadcast_op(a, b, np.subtract, "sub"), a.requires_grad or b.requires_grad)

    def bwd(gs):
        g = gs[0]
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _record((a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _wrap(_broadcast_op(a, b, np.multiply, "mul"), a.requires_grad or b.requires_grad)

    def bwd(gs):
        g = gs[0]
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _record((a, b), out, bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out = _wrap(a.data * c, a.requires_grad)

    def bwd(gs):
        _accum(a, gs[0] * c)

    return _record((a,), out, bwd)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = _wrap(a.data @ b.data, a.requires_grad or b.requires_grad)

    def bwd(gs):
        g = gs[0]
        if a.ndim == 2 and b.ndim == 2:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        elif a.ndim == 2 and b.ndim == 1:
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            _accum(a, b.data @ g)
            _accum(b, np.outer(a.data, g))
        else:  # vector . vector -> scalar
            _accum(a, g * b.data)
            _accum(b, g * a.data)

    return _record((a, b), out, bwd)


dot = matmul


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = _wrap(y, x.requires_grad)

    def bwd(gs):
        _accum(x, gs[0] * (1.0 - y * y))

    return _record((x,), out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign for stability at large |x|.
    d = np.atleast_1d(x.data)
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    y = y.reshape(x.data.shape)
    out = _wrap(y, x.requires_grad)

    def bwd(gs):
        _accum(x, gs[0] * y * (1.0 - y))

    return _record((x,), out, bwd)


def log(x: Tensor) -> Tensor:
    out = _wrap(np.log(x.data), x.requires_grad)

    def bwd(gs):
        _accum(x, gs[0] / x.data)

    return _record((x,), out, bwd)


def clip_min(x: Tensor, floor: float) -> Tensor:
    y = np.maximum(x.data, floor)
    mask = x.data > floor
    out = _wrap(y, x.requires_grad)

    def bwd(gs):
        _accum(x, gs[0] * mask)

    return _record((x,), out, bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted stable softmax along ``axis``."""
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax input contains NaN or infinity")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = _wrap(y, x.requires_grad)

    def bwd(gs):
        g = gs[0]
        inner = np.sum(g * y, axis=axis, keepdims=True)
        _accum(x, y * (g - inner))

    return _record((x,), out, bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty tensor list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    out = _wrap(data, any(t.requires_grad for t in tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(gs):
        g = gs[0]
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _record(tuple(tensors), out, bwd)


def stack_rows(vectors) -> Tensor:
    """Stack 1-D tensors of equal length into a (k, n) matrix."""
    vectors = list(vectors)
    if not vectors:
        raise ContractError("stack_rows of an empty list")
    if any(v.ndim != 1 for v in vectors):
        raise ShapeError(f"stack_rows needs 1-D tensors, got {[v.shape for v in vectors]}")
    data = np.stack([v.data for v in vectors], axis=0)
    out = _wrap(data, any(v.requires_grad for v in vectors))

    def bwd(gs):
        g = gs[0]
        for i, v in enumerate(vectors):
            _accum(v, g[i])

    return _record(tuple(vectors), out, bwd)


def slice1d(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 1:
        raise ShapeError(f"slice1d needs a 1-D tensor, got shape {x.shape}")
    out = _wrap(x.data[start:stop].copy(), x.requires_grad)

    def bwd(gs):
        g = np.zeros_like(x.data)
        g[start:stop] = gs[0]
        _accum(x, g)

    return _record((x,), out, bwd)


def gather1d(x: Tensor, indices) -> Tensor:
    if x.ndim != 1:
        raise ShapeError(f"gather1d needs a 1-D tensor, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise IndexError(f"gather index out of range for length {x.data.shape[0]}")
    out = _wrap(x.data[idx], x.requires_grad)

    def bwd(gs):
        g = np.zeros_like(x.data)
        np.add.at(g, idx, gs[0])
        _accum(x, g)

    return _record((x,), out, bwd)


def sum_(x: Tensor) -> Tensor:
    out = _wrap(np.asarray(np.sum(x.data)), x.requires_grad)

    def bwd(gs):
        _accum(x, np.broadcast_to(gs[0], x.data.shape).copy())

    return _record((x,), out, bwd)


def mean_(x: Tensor) -> Tensor:
    n = x.data.size
    out = _wrap(np.asarray(np.mean(x.data)), x.requires_grad)

    def bwd(gs):
        _accum(x, np.broadcast_to(gs[0] / n, x.data.shape).copy())

    return _record((x,), out, bwd)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Select rows of a (V, E) table; gradients scatter-add back into it."""
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got shape {table.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    rows = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        bad = idx[(idx < 0) | (idx >= rows)][0]
        raise IndexError(f"embedding index {bad} out of range for table with {rows} rows")
    out = _wrap(table.data[idx], table.requires_grad)

    def bwd(gs):
        g = np.zeros_like(table.data)
        np.add.at(g, idx, gs[0])
        _accum(table, g)

    return _record((table,), out, bwd)


def embedding_row(table: Tensor, index: int) -> Tensor:
    """Single-row lookup returning a 1-D vector."""
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got shape {table.shape}")
    rows = table.data.shape[0]
    if not 0 <= index < rows:
        raise IndexError(f"embedding index {index} out of range for table with {rows} rows")
    out = _wrap(table.data[index].copy(), table.requires_grad)

    def bwd(gs):
        g = np.zeros_like(table.data)
        g[index] = gs[0]
        _accum(table, g)

    return _record((table,), out, bwd)


def weighted_scatter(weights: Tensor, pos_idx, out_idx, coeff, size: int) -> Tensor:
    """out[out_idx[k]] += weights[pos_idx[k]] * coeff[k].

    The index arrays are constants; gradients flow to ``weights`` only.
    Used to turn position-level attention into token-level copy mass.
    """
    if weights.ndim != 1:
        raise ShapeError(f"weighted_scatter needs 1-D weights, got shape {weights.shape}")
    pos = np.asarray(pos_idx, dtype=np.int64)
    tgt = np.asarray(out_idx, dtype=np.int64)
    co = np.asarray(coeff, dtype=np.float64)
    if not (pos.shape == tgt.shape == co.shape):
        raise ShapeError("weighted_scatter index arrays must share one shape")
    if pos.size and (pos.min() < 0 or pos.max() >= weights.data.shape[0]):
        raise IndexError("weighted_scatter position index out of range")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= size):
        raise IndexError("weighted_scatter output index out of range")
    data = np.zeros(size, dtype=np.float64)
    np.add.at(data, tgt, weights.data[pos] * co)
    out = _wrap(data, weights.requires_grad)

    def bwd(gs):
        g = np.zeros_like(weights.data)
        np.add.at(g, pos, co * gs[0][tgt])
        _accum(weights, g)

    return _record((weights,), out, bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; rate 0 returns the input unchanged."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = _wrap(x.data * keep, x.requires_grad)

    def bwd(gs):
        _accum(x, gs[0] * keep)

    return _record((x,), out, bwd)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return _wrap(np.zeros(shape, dtype=np.float64), requires_grad)


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.1, name: str | None = None) -> Tensor:
    t = _wrap(rng.uniform(-scale, scale, size=shape), True)
    t.name = name
    return t
