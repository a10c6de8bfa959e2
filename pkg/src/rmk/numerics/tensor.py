"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive below computes its forward value with numpy and, when any
input requires a gradient, attaches a local backward rule to the result.
Calling :func:`backward` on a scalar walks the recorded graph in reverse
topological order.

Broadcasting is deliberately narrow: elementwise primitives accept equal
shapes, or a second operand whose shape is a suffix of the first (a bias
shared across leading batch axes).  Anything else needs an explicit
:func:`reshape` / :func:`broadcast_to`.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "PRIMITIVES",
    "apply_primitive",
    "backward",
    "inject_gradient_fault",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "concat",
    "tanh",
    "sigmoid",
    "relu",
    "softmax",
    "log_softmax",
    "mean",
    "sum",
    "embedding",
    "reshape",
    "transpose",
    "broadcast_to",
    "pick",
    "index",
    "layer_norm",
    "dropout",
]

_builtin_sum = sum


class ShapeError(ValueError):
    """Raised when primitive inputs have incompatible shapes or axes."""


# Test-harness hook: kind -> multiplier applied to that primitive's local
# gradient.  Empty in normal operation.
_GRAD_FAULTS: dict[str, float] = {}


@contextlib.contextmanager
def inject_gradient_fault(kind: str, factor: float = 1.5):
    """Temporarily corrupt the backward rule of one primitive.

    Used to prove that gradient checking actually detects a wrong rule.
    """
    if kind not in PRIMITIVES:
        raise KeyError(f"unknown primitive {kind!r}")
    _GRAD_FAULTS[kind] = factor
    try:
        yield
    finally:
        _GRAD_FAULTS.pop(kind, None)


class Tensor:
    """A float64 array that optionally records how it was computed."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(other))

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(_lift(other), self)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __getitem__(self, key):
        return index(self, key)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _as_tensors(inputs: Iterable) -> list[Tensor]:
    return [_lift(x) for x in inputs]


def _make(out: np.ndarray, parents: Sequence[Tensor], rule: Callable, op: str) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = None
    t._op = op
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        fault = _GRAD_FAULTS.get(op)
        if fault is None:
            t._backward = rule
        else:
            t._backward = lambda g: tuple(None if x is None else x * fault for x in rule(g))
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


def _check_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for a {ndim}-d tensor")
    return axis % ndim


def _suffix_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[tuple[int, ...], int, int]:
    """Return (out_shape, lead_a, lead_b): leading axes to sum when reducing grads."""
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa, 0, 0
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return sa, 0, len(sa) - len(sb)
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return sb, len(sb) - len(sa), 0
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _reduce_lead(g: np.ndarray, lead: int) -> np.ndarray:
    if lead == 0:
        return g
    return g.sum(axis=tuple(range(lead)))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _, la, lb = _suffix_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (_reduce_lead(g, la), _reduce_lead(g, lb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _, la, lb = _suffix_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (_reduce_lead(g, la), -_reduce_lead(g, lb)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _, la, lb = _suffix_broadcast(a, b, "hadamard")
    A, B = a.data, b.data

    def rule(g):
        return (
            _reduce_lead(g * B, la) if a.requires_grad else None,
            _reduce_lead(g * A, lb) if b.requires_grad else None,
        )

    return _make(A * B, (a, b), rule, "hadamard")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split evaluation avoids overflow in exp for large |x|
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _make(a.data * on, (a,), lambda g: (g * on,), "relu")


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is a 2-d weight or shares ``a``'s leading axes."""
    A, B = a.data, b.data
    if A.ndim < 2 or B.ndim < 2 or A.shape[-1] != B.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {A.shape} and {B.shape}")
    if B.ndim != 2 and A.shape[:-2] != B.shape[:-2]:
        raise ShapeError(f"matmul: batch axes differ, {A.shape} and {B.shape}")
    out = A @ B

    def rule(g):
        ga = g @ np.swapaxes(B, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if B.ndim == 2 and A.ndim > 2:
                gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(A, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), rule, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = _as_tensors(tensors)
    if not tensors:
        raise ShapeError("concat: no inputs")
    ndim = tensors[0].ndim
    ax = _check_axis(axis, ndim, "concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:ax] != ref[:ax] or t.shape[ax + 1:] != ref[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, rule, "concat-last-axis")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from exc
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: bad permutation {axes} for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat singleton axes of ``a`` up to ``shape`` (same rank required)."""
    shape = tuple(shape)
    if len(shape) != a.ndim or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise ShapeError(f"broadcast_to: cannot expand {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)
    out = np.broadcast_to(a.data, shape).copy()
    return _make(out, (a,), lambda g: (g.sum(axis=axes, keepdims=True),), "broadcast")


def index(a: Tensor, key) -> Tensor:
    """Basic (slice/integer) indexing."""
    out = a.data[key]
    src = a.shape

    def rule(g):
        full = np.zeros(src)
        full[key] = g
        return (full,)

    return _make(np.array(out), (a,), rule, "index")


def embedding(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` gathered by integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError(f"embedding-lookup: ids must be integers, got {ids.dtype}")
    if table.ndim != 2:
        raise ShapeError(f"embedding-lookup: table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding-lookup: id out of range for table of {table.shape[0]} rows")
    rows = table.shape

    def rule(g):
        gt = np.zeros(rows)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, rows[1]))
        return (gt,)

    return _make(table.data[ids], (table,), rule, "embedding-lookup")


def pick(a: Tensor, ids) -> Tensor:
    """Select ``a[..., ids[...]]`` along the last axis."""
    ids = np.asarray(ids)
    if ids.shape != a.shape[:-1]:
        raise ShapeError(f"pick: ids shape {ids.shape} does not match {a.shape[:-1]}")
    if ids.size and (ids.min() < 0 or ids.max() >= a.shape[-1]):
        raise IndexError("pick: index out of range")
    sel = ids[..., None]
    src = a.shape

    def rule(g):
        full = np.zeros(src)
        np.put_along_axis(full, sel, g[..., None], axis=-1)
        return (full,)

    return _make(np.take_along_axis(a.data, sel, axis=-1)[..., 0], (a,), rule, "pick")


# ---------------------------------------------------------------------------
# reductions and normalisers
# ---------------------------------------------------------------------------


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = a.shape
    if axis is None:
        return _make(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, src).copy(),), "sum")
    ax = _check_axis(axis, a.ndim, "sum")

    def rule(g):
        g = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(g, src).copy(),)

    return _make(a.data.sum(axis=ax, keepdims=keepdims), (a,), rule, "sum")


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    src = a.shape
    if axis is None:
        n = a.size
        return _make(np.array(a.data.mean()), (a,), lambda g: (np.full(src, float(g) / n),), "mean-over-axis")
    ax = _check_axis(axis, a.ndim, "mean-over-axis")
    n = src[ax]

    def rule(g):
        g = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(g / n, src).copy(),)

    return _make(a.data.mean(axis=ax, keepdims=keepdims), (a,), rule, "mean-over-axis")


def softmax(a: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Numerically stable softmax; masked-out entries get exactly zero.

    A row whose mask is entirely false yields all zeros.
    """
    ax = _check_axis(axis, a.ndim, "softmax-over-axis")
    x = a.data
    if mask is None:
        z = x - x.max(axis=ax, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=ax, keepdims=True)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        z = np.where(m, x, -np.inf)
        top = z.max(axis=ax, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        e = np.where(m, np.exp(np.where(m, x, 0.0) - top), 0.0)
        s = e.sum(axis=ax, keepdims=True)
        y = e / np.where(s > 0, s, 1.0)

    def rule(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _make(y, (a,), rule, "softmax-over-axis")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    ax = _check_axis(axis, a.ndim, "log-softmax")
    x = a.data
    z = x - x.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=ax, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def rule(g):
        return (g - p * g.sum(axis=ax, keepdims=True),)

    return _make(y, (a,), rule, "log-softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.data
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer-norm: gain/bias {gain.shape}/{bias.shape} vs features {d}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    G = gain.data

    def rule(g):
        lead = g.ndim - 1
        gx = None
        if a.requires_grad:
            dxh = g * G
            gx = inv * (dxh - dxh.mean(axis=-1, keepdims=True) - xhat * (dxh * xhat).mean(axis=-1, keepdims=True))
        return gx, _reduce_lead(g * xhat, lead), _reduce_lead(g, lead)

    return _make(xhat * G + bias.data, (a, gain, bias), rule, "layer-norm")


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are rescaled by ``1 / (1 - p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout: training mode needs an explicit rng")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "concat-last-axis": concat,
    "tanh": tanh,
    "softmax-over-axis": softmax,
    "hadamard": mul,
    "add": add,
    "scale": scale,
    "mean-over-axis": mean,
    "embedding-lookup": embedding,
    "sub": sub,
    "sigmoid": sigmoid,
    "relu": relu,
    "log-softmax": log_softmax,
    "sum": sum,
    "reshape": reshape,
    "transpose": transpose,
    "broadcast": broadcast_to,
    "index": index,
    "pick": pick,
    "layer-norm": layer_norm,
    "dropout": dropout,
}


def apply_primitive(kind: str, inputs: Sequence, **kwargs) -> Tensor:
    """Dispatch a primitive by name.

    ``concat-last-axis`` takes the whole input list; every other primitive
    receives the inputs positionally.
    """
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise KeyError(f"unknown primitive {kind!r}") from None
    if kind == "concat-last-axis":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# tape and backward pass
# ---------------------------------------------------------------------------


class Tape:
    """Recorded primitive applications reachable from one output, in
    topological order (inputs before the nodes that consume them)."""

    def __init__(self, nodes: list[Tensor], leaves: list[Tensor]):
        self.nodes = nodes
        self.leaves = leaves

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        nodes: list[Tensor] = []
        leaves: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                nodes.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t._backward is None:
                if t.requires_grad:
                    leaves.append(t)
                continue
            stack.append((t, True))
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(nodes, leaves)


def backward(loss: Tensor, leaves: Iterable[Tensor] = ()) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Leaves passed in ``leaves`` but not reachable from ``loss`` receive a zero
    gradient buffer.  Returns the tape that was replayed.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    tape = Tape.record(loss)
    if not tape.nodes:
        raise ValueError("backward: loss was not produced by any recorded primitive (empty tape)")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    for leaf in leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
    return tape
