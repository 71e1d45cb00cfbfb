"""Small reverse-mode differentiation engine over dense 2-D float64 arrays.

Graphs are built eagerly (every op computes its value on construction) and
thrown away after each backward pass. Row vectors of shape ``(1, n)`` may be
added to / multiplied with ``(m, n)`` matrices; that is the only broadcasting
supported.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

DEFAULT_LRELU_SLOPE = 0.01


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Node:
    """One value in the computation graph.

    ``fwd`` maps parent values to this node's value and ``bwd`` maps
    ``(grad_out, parent_values, value)`` to one adjoint per parent.
    """

    __slots__ = ("op", "parents", "value", "grad", "name", "fwd", "bwd", "shape")

    def __init__(self, op, parents, value, fwd=None, bwd=None, name=None):
        self.op = op
        self.parents = tuple(parents)
        self.value = value
        self.grad = None
        self.name = name
        self.fwd = fwd
        self.bwd = bwd
        self.shape = value.shape

    def __repr__(self):
        label = self.name or hex(id(self))
        return f"Node({self.op}, {label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as2d(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dims, got shape {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


def _make(op, parents, fwd, bwd, name=None) -> Node:
    vals = [p.value for p in parents]
    try:
        value = fwd(*vals)
    except ShapeError as exc:
        raise ShapeError(f"{op} node {name or ''}: {exc}") from None
    return Node(op, parents, value, fwd, bwd, name)


def _node(x) -> Node:
    if isinstance(x, Node):
        return x
    return const(x)


# leaves

def input_node(value, name: str | None = None) -> Node:
    arr = _as2d(value)
    _check_finite(arr, f"input {name!r}")
    return Node("input", (), arr, name=name)


def const(value) -> Node:
    return Node("input", (), _as2d(value))


# ops

def _row_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return
    if a.shape[0] == 1 and a.shape[1] == b.shape[1]:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def matmul(a, b, name=None) -> Node:
    a, b = _node(a), _node(b)

    def fwd(x, y):
        if x.shape[1] != y.shape[0]:
            raise ShapeError(f"matmul: {x.shape} @ {y.shape}")
        return x @ y

    def bwd(g, vals, out):
        x, y = vals
        return g @ y.T, x.T @ g

    return _make("matmul", (a, b), fwd, bwd, name)


def add(a, b, name=None) -> Node:
    a, b = _node(a), _node(b)

    def fwd(x, y):
        _row_broadcast(x, y, "add")
        return x + y

    def bwd(g, vals, out):
        return _unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)

    return _make("add", (a, b), fwd, bwd, name)


def mul(a, b, name=None) -> Node:
    a, b = _node(a), _node(b)

    def fwd(x, y):
        _row_broadcast(x, y, "mul")
        return x * y

    def bwd(g, vals, out):
        x, y = vals
        return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

    return _make("mul", (a, b), fwd, bwd, name)


def scale(a, c: float, name=None) -> Node:
    a = _node(a)
    c = float(c)
    return _make("scale", (a,), lambda x: c * x, lambda g, vals, out: (c * g,), name)


def sub(a, b, name=None) -> Node:
    return add(a, scale(b, -1.0), name)


def sigmoid(a, name=None) -> Node:
    a = _node(a)
    return _make("sigmoid", (a,), expit, lambda g, vals, out: (g * out * (1.0 - out),), name)


def tanh(a, name=None) -> Node:
    a = _node(a)
    return _make("tanh", (a,), np.tanh, lambda g, vals, out: (g * (1.0 - out * out),), name)


def lrelu_array(x: np.ndarray, slope: float = DEFAULT_LRELU_SLOPE) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"lrelu slope must lie in (0, 1), got {slope}")
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x, "lrelu input")
    return np.maximum(x, slope * x)


def lrelu(a, slope: float = DEFAULT_LRELU_SLOPE, name=None) -> Node:
    a = _node(a)

    def bwd(g, vals, out):
        return (np.where(vals[0] > 0, g, slope * g),)

    return _make("lrelu", (a,), lambda x: lrelu_array(x, slope), bwd, name)


def concat(parts: Sequence, name=None) -> Node:
    parts = tuple(_node(p) for p in parts)
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def fwd(*xs):
        rows = {x.shape[0] for x in xs}
        if len(rows) != 1:
            raise ShapeError(f"concat: row counts differ {[x.shape for x in xs]}")
        return np.concatenate(xs, axis=1)

    def bwd(g, vals, out):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(vals)))

    return _make("concat", parts, fwd, bwd, name)


def slice_cols(a, start: int, stop: int, name=None) -> Node:
    a = _node(a)

    def fwd(x):
        if not 0 <= start < stop <= x.shape[1]:
            raise ShapeError(f"slice [{start}:{stop}] out of range for {x.shape}")
        return x[:, start:stop]

    def bwd(g, vals, out):
        full = np.zeros_like(vals[0])
        full[:, start:stop] = g
        return (full,)

    return _make("slice", (a,), fwd, bwd, name)


def sum_of_squares(a, name=None) -> Node:
    a = _node(a)
    return _make(
        "sum-of-squares",
        (a,),
        lambda x: np.array([[np.sum(x * x)]]),
        lambda g, vals, out: (2.0 * g[0, 0] * vals[0],),
        name,
    )


def custom(op: str, parents: Sequence, fwd: Callable, bwd: Callable, name=None) -> Node:
    """Escape hatch for ops outside the core set (e.g. terrain sampling)."""
    return _make(op, tuple(_node(p) for p in parents), fwd, bwd, name)


# graph traversal

def topo_order(outputs: Iterable[Node]) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    for root in outputs:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
    return order


def evaluate(
    outputs: Sequence[Node],
    inputs: Mapping[str, np.ndarray],
    order: list[Node] | None = None,
) -> list[np.ndarray]:
    """Re-run the forward pass with named input leaves rebound to new values.

    ``order`` may carry a cached :func:`topo_order` of ``outputs``.
    """
    if order is None:
        order = topo_order(outputs)
    bound = set()
    for node in order:
        if node.op == "input":
            if node.name is not None and node.name in inputs:
                value = _as2d(inputs[node.name])
                if value.shape != node.shape:
                    raise ShapeError(
                        f"input node {node.name!r}: expected shape {node.shape}, got {value.shape}"
                    )
                _check_finite(value, f"input {node.name!r}")
                node.value = value
                bound.add(node.name)
            continue
        vals = [p.value for p in node.parents]
        try:
            value = node.fwd(*vals)
        except ShapeError as exc:
            raise ShapeError(f"{node.op} node {node.name or hex(id(node))}: {exc}") from None
        if value.shape != node.shape:
            raise ShapeError(f"{node.op} node {node.name or hex(id(node))}: shape changed to {value.shape}")
        node.value = value
    missing = set(inputs) - bound
    if missing:
        raise KeyError(f"inputs not found in graph: {sorted(missing)}")
    return [o.value for o in outputs]


def backward(loss: Node, params: Mapping[str, Node] | None = None) -> dict[str, np.ndarray]:
    """Populate ``.grad`` on every node reachable from ``loss``.

    Returns the gradient for each entry of ``params`` (zeros when the
    parameter does not influence the loss).
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topo_order([loss])
    for node in order:
        node.grad = None
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node.grad is None or not node.parents:
            continue
        vals = [p.value for p in node.parents]
        pgrads = node.bwd(node.grad, vals, node.value)
        for p, g in zip(node.parents, pgrads):
            if g is None:
                continue
            if p.grad is None:
                p.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                p.grad += g
    out: dict[str, np.ndarray] = {}
    for name, leaf in (params or {}).items():
        out[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
    return out


def grad_check(
    f: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    loss_fn: Callable[[dict[str, np.ndarray]], float] | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` maps a parameter dict to ``(loss, grads)``. For each parameter the
    error is ``|a - n| / max(|a|, |n|)`` over the probed entries (vector
    norms), and the maximum over parameters is returned. With
    ``max_entries`` only that many random coordinates per parameter are probed.
    ``loss_fn``, when given, is used for the perturbed evaluations instead of ``f``.
    """
    errors = grad_check_report(f, params, eps, max_entries, seed, loss_fn)
    return max(errors.values()) if errors else 0.0


def grad_check_report(f, params, eps=1e-5, max_entries=None, seed=0, loss_fn=None) -> dict[str, float]:
    """Per-parameter relative errors used by :func:`grad_check`."""
    base = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    for k, v in base.items():
        _check_finite(v, f"probe point {k!r}")
    _, analytic = f(base)
    if loss_fn is None:
        def loss_fn(vals):
            return f(vals)[0]
    rng = np.random.default_rng(seed)
    errors = {}
    for name, value in base.items():
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        ga = np.asarray(analytic[name], dtype=np.float64).reshape(-1)[idx]
        num = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_fn(base)
            flat[i] = orig - eps
            fm = loss_fn(base)
            flat[i] = orig
            num[n] = (fp - fm) / (2.0 * eps)
        denom = max(np.linalg.norm(ga), np.linalg.norm(num), 1e-12)
        errors[name] = float(np.linalg.norm(ga - num) / denom)
    return errors


class ParamStore:
    """Named trainable tensors plus AMSGrad slots."""

    def __init__(self):
        self.params: OrderedDict[str, np.ndarray] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.vmax: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        arr = _as2d(value).copy()
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        self.vmax[name] = np.zeros_like(arr)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def leaves(self) -> dict[str, Node]:
        return {k: Node("input", (), v, name=k) for k, v in self.params.items()}

    def count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self.params.items():
            out.params[k] = v.copy()
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
            out.vmax[k] = self.vmax[k].copy()
        out.step = self.step
        return out
