"""Reverse-mode automatic differentiation over numpy arrays.

Each forward pass records a fresh graph: every `Tensor` produced by an op
keeps references to its parent tensors and a closure that maps the output
adjoint to parent adjoints. `Tensor.backward()` walks the recorded graph
in reverse topological order and accumulates gradients into the leaves
that require them (typically the entries of a `ParamStore`).

Double precision is the default so that finite-difference checks are
meaningful; `set_default_dtype(np.float32)` switches to a faster mode.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "GraphError",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "add",
    "apply_primitive",
    "as_tensor",
    "concat",
    "exp",
    "getitem",
    "init_lstm",
    "log",
    "logsumexp",
    "logsumexp_raw",
    "lstm_cell",
    "matmul",
    "mul",
    "neg",
    "reshape",
    "rows",
    "scale",
    "set_default_dtype",
    "sigmoid",
    "stack",
    "sub",
    "sum_",
    "tanh",
    "transpose",
]


class ShapeError(ValueError):
    """Operand shapes do not conform to the op being applied."""


class GraphError(RuntimeError):
    """Invalid use of a recorded graph (non-scalar loss, double backward)."""


_default_dtype = np.float64


def set_default_dtype(dtype) -> None:
    global _default_dtype
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be numpy float32 or float64")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


_node_ids = itertools.count()


class Tensor:
    """A dense array participating in a recorded computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "op", "node_id",
                 "_backward", "_consumed")

    def __init__(self, value, requires_grad=False, parents=(), backward=None,
                 op="leaf"):
        self.value = np.asarray(value, dtype=_default_dtype)
        self.parents = tuple(parents)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self.parents)
        self.grad = None
        self.op = op
        self.node_id = next(_node_ids)
        self._backward = backward
        self._consumed = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(np.asarray(self.value).item())

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, id={self.node_id})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    # -- backward ----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        Must be called on a scalar; calling it a second time on the same
        graph raises GraphError (the graph's closures are one-shot).
        """
        if self.value.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward already ran on this graph; "
                             "rebuild the forward pass first")
        order = _topo_order(self)
        grads = {self.node_id: np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: keep the gradient only where it is wanted
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + pg
                else:
                    grads[parent.node_id] = pg
        self._consumed = True


def _topo_order(root: Tensor):
    """Parents-before-children ordering of the requires_grad subgraph."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen or not node.requires_grad:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape))
                 if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- primitives ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    out = a.value + b.value

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, parents=(a, b), backward=bwd, op="add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"elementwise-mul: shapes {a.shape} and {b.shape} "
                         "do not broadcast")
    out = a.value * b.value

    def bwd(g):
        return (_unbroadcast(g * b.value, a.shape),
                _unbroadcast(g * a.value, b.shape))

    return Tensor(out, parents=(a, b), backward=bwd, op="elementwise-mul")


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    out = a.value * factor

    def bwd(g):
        return (g * factor,)

    return Tensor(out, parents=(a,), backward=bwd, op="scalar-scale")


def neg(a) -> Tensor:
    return scale(a, -1.0)


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = a.value @ b.value

    def bwd(g):
        return g @ b.value.T, a.value.T @ g

    return Tensor(out, parents=(a, b), backward=bwd, op="matmul")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, parents=(a,), backward=bwd, op="tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # numerically stable on both tails
    out = np.where(a.value >= 0,
                   1.0 / (1.0 + np.exp(-np.abs(a.value))),
                   np.exp(-np.abs(a.value)) / (1.0 + np.exp(-np.abs(a.value))))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, parents=(a,), backward=bwd, op="sigmoid")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)

    def bwd(g):
        return (g * out,)

    return Tensor(out, parents=(a,), backward=bwd, op="exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.value)

    def bwd(g):
        return (g / a.value,)

    return Tensor(out, parents=(a,), backward=bwd, op="log")


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return Tensor(out, parents=(a,), backward=bwd, op="sum")


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def logsumexp_raw(v: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    """Overflow-safe log-sum-exp with -inf as the absorbing zero."""
    v = np.asarray(v, dtype=float)
    axes = _norm_axes(axis, v.ndim)
    m = np.max(v, axis=axes, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore"):
        s = np.sum(np.exp(v - m_safe), axis=axes, keepdims=True)
    out = np.where(s > 0, np.log(np.where(s > 0, s, 1.0)) + m_safe, -np.inf)
    if not keepdims:
        out = np.squeeze(out, axis=axes)
    return out


def logsumexp(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = logsumexp_raw(a.value, axis=axes, keepdims=True)

    def bwd(g):
        gg = g if keepdims or g.ndim == out.ndim else np.reshape(g, out.shape)
        out_safe = np.where(np.isfinite(out), out, 0.0)
        with np.errstate(invalid="ignore"):
            w = np.where(np.isfinite(a.value),
                         np.exp(a.value - out_safe), 0.0)
        return (gg * w,)

    res = out if keepdims else np.squeeze(out, axis=axes)
    return Tensor(res, parents=(a,), backward=bwd, op="logsumexp-over-axis")


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        outs = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            outs.append(g[tuple(sl)])
        return outs

    return Tensor(out, parents=tuple(tensors), backward=bwd, op="concat")


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack: empty input list")
    try:
        out = np.stack([t.value for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"stack: {e}")

    def bwd(g):
        return [np.take(g, idx, axis=axis) for idx in range(len(tensors))]

    return Tensor(out, parents=tuple(tensors), backward=bwd, op="stack")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}")

    def bwd(g):
        return (g.reshape(a.shape),)

    return Tensor(out, parents=(a,), backward=bwd, op="reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.value, axes)
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return Tensor(out, parents=(a,), backward=bwd, op="transpose")


def _is_advanced_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value[key]
    except IndexError as e:
        raise ShapeError(f"slice: bad key for shape {a.shape}: {e}")
    advanced = _is_advanced_key(key)

    def bwd(g):
        buf = np.zeros_like(a.value)
        if advanced:
            np.add.at(buf, key, g)
        else:
            buf[key] += g
        return (buf,)

    return Tensor(out, parents=(a,), backward=bwd, op="slice")


def rows(table, ids) -> Tensor:
    """Embedding lookup: gather rows of a 2-D table by integer id."""
    ids = np.asarray(ids, dtype=np.intp)
    table = as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"embedding-lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding-lookup: id out of range for table with "
                         f"{table.shape[0]} rows")
    return getitem(table, ids)


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log}


def apply_primitive(op: str, inputs, **kwargs) -> Tensor:
    """Apply a named primitive to a list of tensors (dispatch surface)."""
    if op in _UNARY:
        (a,) = inputs
        return _UNARY[op](a)
    if op == "matmul":
        a, b = inputs
        return matmul(a, b)
    if op == "add":
        a, b = inputs
        return add(a, b)
    if op == "elementwise-mul":
        a, b = inputs
        return mul(a, b)
    if op == "concat":
        return concat(list(inputs), axis=kwargs.get("axis", 0))
    if op == "slice":
        (a,) = inputs
        return getitem(a, kwargs["key"])
    if op == "sum":
        (a,) = inputs
        return sum_(a, axis=kwargs.get("axis"), keepdims=kwargs.get("keepdims", False))
    if op == "logsumexp-over-axis":
        (a,) = inputs
        return logsumexp(a, axis=kwargs.get("axis"), keepdims=kwargs.get("keepdims", False))
    if op == "scalar-scale":
        (a,) = inputs
        return scale(a, kwargs["factor"])
    if op == "embedding-lookup":
        (table,) = inputs
        return rows(table, kwargs["ids"])
    raise ValueError(f"unknown primitive {op!r}")


# -- parameters ------------------------------------------------------------


class ParamStore:
    """Named trainable parameters with accumulated gradient buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True, op="param")
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_values(self) -> int:
        return sum(t.value.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def l2(self) -> Tensor:
        """Sum of squares of every parameter, as a differentiable scalar."""
        total = None
        for t in self._params.values():
            sq = sum_(mul(t, t))
            total = sq if total is None else add(total, sq)
        if total is None:
            raise ValueError("empty parameter store")
        return total

    def grad_global_norm(self) -> float:
        sq = 0.0
        for t in self._params.values():
            if t.grad is not None:
                sq += float(np.sum(t.grad * t.grad))
        return float(np.sqrt(sq))

    def sgd_step(self, lr: float, clip: float | None = None) -> None:
        factor = 1.0
        if clip is not None:
            norm = self.grad_global_norm()
            if norm > clip:
                factor = clip / norm
        for t in self._params.values():
            if t.grad is not None:
                t.value = t.value - lr * factor * t.grad

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        if missing:
            raise ValueError(f"state missing parameters: {sorted(missing)}")
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=_default_dtype)
            if arr.shape != t.value.shape:
                raise ShapeError(f"parameter {name!r}: stored shape {arr.shape} "
                                 f"!= expected {t.value.shape}")
            t.value = arr.copy()


# -- LSTM cell -------------------------------------------------------------


def init_lstm(store: ParamStore, prefix: str, input_size: int, hidden_size: int,
              rng: np.random.Generator) -> None:
    """Register the three parameter arrays of one LSTM direction."""
    def glorot(fan_in, fan_out):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, (fan_in, fan_out))

    store.add(f"{prefix}.Wx", glorot(input_size, 4 * hidden_size))
    store.add(f"{prefix}.Wh", glorot(hidden_size, 4 * hidden_size))
    b = np.zeros(4 * hidden_size)
    b[hidden_size:2 * hidden_size] = 1.0  # forget gate bias
    store.add(f"{prefix}.b", b)


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
              Wx: Tensor, Wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One step of a standard four-gate LSTM.

    `x_t` is a (1, D) row; `h_prev`, `c_prev` are (1, H) rows. Gate order
    in the packed weight matrices is input, forget, candidate, output.
    """
    hidden = Wh.shape[0]
    if h_prev.shape != (1, hidden) or c_prev.shape != (1, hidden):
        raise ShapeError(f"lstm_cell: state shapes {h_prev.shape}/{c_prev.shape} "
                         f"do not match hidden size {hidden}")
    gates = add(add(matmul(x_t, Wx), matmul(h_prev, Wh)), b)
    i = sigmoid(getitem(gates, (slice(None), slice(0, hidden))))
    f = sigmoid(getitem(gates, (slice(None), slice(hidden, 2 * hidden))))
    g = tanh(getitem(gates, (slice(None), slice(2 * hidden, 3 * hidden))))
    o = sigmoid(getitem(gates, (slice(None), slice(3 * hidden, 4 * hidden))))
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t
