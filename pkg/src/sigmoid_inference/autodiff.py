"""A small reverse-mode automatic differentiation engine over numpy arrays.

A :class:`Graph` is a Wengert list: nodes are appended in evaluation order, so
the list is topologically sorted by construction.  Values are computed eagerly
while the graph is built, ``Graph.forward`` replays the list with new leaf
bindings, and ``Graph.grad`` sweeps it backwards.

Second derivatives are obtained by building forward-mode tangents (or an
explicit transposed backward pass) out of ordinary graph nodes; reverse mode
over those nodes then differentiates the derivative itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from numbers import Number
from typing import Callable

import numpy as np

__all__ = ["Graph", "Var", "concat", "stack", "norm", "tanh_tangent", "unbroadcast"]


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _swap(a):
    return np.swapaxes(a, -1, -2)


def _matmul_vjp(g, vals, out, attrs, needs):
    a, b = vals
    ga = gb = None
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = g
    if a.ndim == 1:
        g2 = g2[..., None, :]
    if b.ndim == 1:
        g2 = g2[..., None]
    if needs[0]:
        ga = unbroadcast(g2 @ _swap(b2), a2.shape).reshape(a.shape)
    if needs[1]:
        gb = unbroadcast(_swap(a2) @ g2, b2.shape).reshape(b.shape)
    return ga, gb


def _sum_vjp(g, vals, out, attrs, needs):
    (x,) = vals
    axis, keepdims = attrs["axis"], attrs["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _getitem_vjp(g, vals, out, attrs, needs):
    (x,) = vals
    key = attrs["key"]
    z = np.zeros_like(x)
    if attrs["basic"]:
        z[key] = g
    else:
        np.add.at(z, key, g)
    return (z,)


def _concat_vjp(g, vals, out, attrs, needs):
    axis = attrs["axis"]
    sizes = [v.shape[axis] for v in vals]
    parts = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
    return tuple(p.copy() if n else None for p, n in zip(parts, needs))


def _stack_vjp(g, vals, out, attrs, needs):
    axis = attrs["axis"]
    return tuple(np.take(g, i, axis=axis) if n else None for i, n in enumerate(needs))


# op name -> (forward(values, attrs), vjp(g, values, out, attrs, needs))
_OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (
        lambda v, a: v[0] + v[1],
        lambda g, v, o, a, n: (unbroadcast(g, v[0].shape) if n[0] else None,
                               unbroadcast(g, v[1].shape) if n[1] else None),
    ),
    "sub": (
        lambda v, a: v[0] - v[1],
        lambda g, v, o, a, n: (unbroadcast(g, v[0].shape) if n[0] else None,
                               unbroadcast(-g, v[1].shape) if n[1] else None),
    ),
    "mul": (
        lambda v, a: v[0] * v[1],
        lambda g, v, o, a, n: (unbroadcast(g * v[1], v[0].shape) if n[0] else None,
                               unbroadcast(g * v[0], v[1].shape) if n[1] else None),
    ),
    "div": (
        lambda v, a: v[0] / v[1],
        lambda g, v, o, a, n: (unbroadcast(g / v[1], v[0].shape) if n[0] else None,
                               unbroadcast(-g * o / v[1], v[1].shape) if n[1] else None),
    ),
    "neg": (lambda v, a: -v[0], lambda g, v, o, a, n: (-g,)),
    "matmul": (lambda v, a: v[0] @ v[1], _matmul_vjp),
    "tanh": (lambda v, a: np.tanh(v[0]), lambda g, v, o, a, n: (g * (1.0 - o * o),)),
    # (1 - h^2) * dz: the tangent of tanh given its output h and input tangent dz
    "tanh_tangent": (
        lambda v, a: (1.0 - v[0] * v[0]) * v[1],
        lambda g, v, o, a, n: (unbroadcast(-2.0 * g * v[0] * v[1], v[0].shape) if n[0] else None,
                               unbroadcast(g * (1.0 - v[0] * v[0]), v[1].shape) if n[1] else None),
    ),
    "exp": (lambda v, a: np.exp(v[0]), lambda g, v, o, a, n: (g * o,)),
    "sqrt": (lambda v, a: np.sqrt(v[0]), lambda g, v, o, a, n: (g * 0.5 / o,)),
    "square": (lambda v, a: v[0] * v[0], lambda g, v, o, a, n: (2.0 * g * v[0],)),
    "sum": (lambda v, a: np.sum(v[0], axis=a["axis"], keepdims=a["keepdims"]), _sum_vjp),
    "reshape": (
        lambda v, a: np.reshape(v[0], a["shape"]),
        lambda g, v, o, a, n: (np.reshape(g, v[0].shape),),
    ),
    "swapaxes": (
        lambda v, a: np.swapaxes(v[0], a["a1"], a["a2"]),
        lambda g, v, o, a, n: (np.swapaxes(g, a["a1"], a["a2"]),),
    ),
    "getitem": (lambda v, a: v[0][a["key"]], _getitem_vjp),
    "concat": (lambda v, a: np.concatenate(v, axis=a["axis"]), _concat_vjp),
    "stack": (lambda v, a: np.stack(v, axis=a["axis"]), _stack_vjp),
}


@dataclass
class _Node:
    op: str  # an _OPS key, or "input" / "param" / "constant"
    parents: tuple[int, ...]
    value: np.ndarray
    attrs: dict = field(default_factory=dict)
    name: str | None = None
    requires_grad: bool = False


class Var:
    """Handle to a node of a :class:`Graph`; supports numpy-style arithmetic."""

    __slots__ = ("graph", "idx")
    __array_ufunc__ = None  # make ndarray <op> Var dispatch to Var

    def __init__(self, graph: "Graph", idx: int):
        self.graph = graph
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.idx].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        node = self.graph.nodes[self.idx]
        return f"Var({node.op}, shape={self.shape})"

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.graph is not self.graph:
                raise ValueError("cannot combine nodes from different graphs")
            return other
        return self.graph.constant(other)

    def __add__(self, o):
        return self.graph._apply("add", self, self._lift(o))

    def __radd__(self, o):
        return self.graph._apply("add", self._lift(o), self)

    def __sub__(self, o):
        return self.graph._apply("sub", self, self._lift(o))

    def __rsub__(self, o):
        return self.graph._apply("sub", self._lift(o), self)

    def __mul__(self, o):
        return self.graph._apply("mul", self, self._lift(o))

    def __rmul__(self, o):
        return self.graph._apply("mul", self._lift(o), self)

    def __truediv__(self, o):
        return self.graph._apply("div", self, self._lift(o))

    def __rtruediv__(self, o):
        return self.graph._apply("div", self._lift(o), self)

    def __neg__(self):
        return self.graph._apply("neg", self)

    def __matmul__(self, o):
        return self.graph._apply("matmul", self, self._lift(o))

    def __rmatmul__(self, o):
        return self.graph._apply("matmul", self._lift(o), self)

    def __pow__(self, k):
        if k == 2:
            return self.square()
        if k == 0.5:
            return self.sqrt()
        if isinstance(k, int) and k >= 1:
            out = self
            for _ in range(k - 1):
                out = out * self
            return out
        raise NotImplementedError("only positive integer powers and 0.5 are supported")

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        basic = all(isinstance(k, (slice, int, type(Ellipsis), type(None))) for k in key)
        return self.graph._apply("getitem", self, key=key, basic=basic)

    def tanh(self):
        return self.graph._apply("tanh", self)

    def exp(self):
        return self.graph._apply("exp", self)

    def sqrt(self):
        return self.graph._apply("sqrt", self)

    def square(self):
        return self.graph._apply("square", self)

    def sum(self, axis=None, keepdims=False):
        return self.graph._apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self.graph._apply("reshape", self, shape=shape)

    def swapaxes(self, a1, a2):
        return self.graph._apply("swapaxes", self, a1=a1, a2=a2)

    @property
    def T(self):
        return self.swapaxes(-1, -2)


class Graph:
    """Topologically ordered list of nodes with cached values and adjoints."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def _add(self, node: _Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def _leaf(self, kind, name, value, requires_grad):
        if name in self._leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        value = np.asarray(value, dtype=float)
        var = self._add(_Node(kind, (), value, name=name, requires_grad=requires_grad))
        self._leaves[name] = var.idx
        return var

    def input(self, name: str, value=None) -> Var:
        """Leaf whose value is supplied by binding (differentiable)."""
        value = np.full((), np.nan) if value is None else value
        return self._leaf("input", name, value, True)

    def param(self, name: str, value) -> Var:
        """Trainable leaf (differentiable)."""
        return self._leaf("param", name, value, True)

    def constant(self, value) -> Var:
        if isinstance(value, Number):
            value = float(value)
        return self._add(_Node("constant", (), np.asarray(value, dtype=float)))

    def _apply(self, op: str, *args: Var, **attrs) -> Var:
        fwd, _ = _OPS[op]
        vals = [self.nodes[a.idx].value for a in args]
        out = np.asarray(fwd(vals, attrs), dtype=float)
        rg = any(self.nodes[a.idx].requires_grad for a in args)
        return self._add(_Node(op, tuple(a.idx for a in args), out, attrs, requires_grad=rg))

    def leaf(self, name: str) -> Var:
        return Var(self, self._leaves[name])

    @property
    def leaf_names(self) -> list[str]:
        return list(self._leaves)

    def forward(self, bindings: dict | None = None, output: Var | None = None, **kw) -> np.ndarray:
        """Re-evaluate the graph with new leaf values; returns ``output``'s value."""
        bindings = {**(bindings or {}), **kw}
        unknown = set(bindings) - set(self._leaves)
        if unknown:
            raise KeyError(f"unknown leaves {sorted(unknown)}")
        for name, value in bindings.items():
            node = self.nodes[self._leaves[name]]
            node.value = np.asarray(value, dtype=float)
        for name, idx in self._leaves.items():
            node = self.nodes[idx]
            if node.op == "input" and node.value.shape == () and np.isnan(node.value):
                raise ValueError(f"input {name!r} is unbound")
        for node in self.nodes:
            if node.parents:
                fwd, _ = _OPS[node.op]
                node.value = np.asarray(fwd([self.nodes[p].value for p in node.parents], node.attrs),
                                        dtype=float)
        return self.nodes[-1 if output is None else output.idx].value

    def grad(self, output: Var, wrt=None) -> dict[str, np.ndarray]:
        """Adjoints of scalar ``output`` with respect to every named leaf."""
        out_node = self.nodes[output.idx]
        if out_node.value.size != 1:
            raise ValueError(f"grad needs a scalar output, got shape {out_node.value.shape}")
        adj: list[np.ndarray | None] = [None] * (output.idx + 1)
        adj[output.idx] = np.ones_like(out_node.value)
        owned = set()  # adjoint buffers safe to update in place
        for i in range(output.idx, -1, -1):
            g = adj[i]
            node = self.nodes[i]
            if g is None or not node.parents:
                continue
            if node.op == "getitem" and node.attrs["basic"]:
                # scatter slices straight into the parent's buffer
                p = node.parents[0]
                if not self.nodes[p].requires_grad:
                    continue
                if p not in owned:
                    buf = np.zeros_like(self.nodes[p].value)
                    if adj[p] is not None:
                        buf += adj[p]
                    adj[p] = buf
                    owned.add(p)
                adj[p][node.attrs["key"]] += g
                continue
            pvals = [self.nodes[p].value for p in node.parents]
            needs = [self.nodes[p].requires_grad for p in node.parents]
            grads = _OPS[node.op][1](g, pvals, node.value, node.attrs, needs)
            for p, gp, need in zip(node.parents, grads, needs):
                if not need or gp is None:
                    continue
                adj[p] = gp if adj[p] is None else adj[p] + gp
        names = self._leaves if wrt is None else {n: self._leaves[n] for n in wrt}
        result = {}
        for name, idx in names.items():
            g = adj[idx] if idx < len(adj) else None
            result[name] = np.zeros_like(self.nodes[idx].value) if g is None else g
        return result


def concat(vars_, axis=0) -> Var:
    g = vars_[0].graph
    return g._apply("concat", *vars_, axis=axis)


def stack(vars_, axis=0) -> Var:
    g = next(v.graph for v in vars_ if isinstance(v, Var))
    vars_ = [v if isinstance(v, Var) else g.constant(v) for v in vars_]
    shapes = {v.shape for v in vars_}
    if len(shapes) > 1:
        target = np.broadcast_shapes(*shapes)
        vars_ = [v if v.shape == target else v + np.zeros(target) for v in vars_]
    return g._apply("stack", *vars_, axis=axis)


def tanh_tangent(h, dz):
    """``(1 - h**2) * dz`` as a single node (numpy arrays pass straight through)."""
    if isinstance(h, Var) or isinstance(dz, Var):
        g = h.graph if isinstance(h, Var) else dz.graph
        h = h if isinstance(h, Var) else g.constant(h)
        dz = dz if isinstance(dz, Var) else g.constant(dz)
        return g._apply("tanh_tangent", h, dz)
    return (1.0 - h * h) * dz


def norm(x: Var, axis=-1) -> Var:
    """Euclidean norm along ``axis``."""
    return x.square().sum(axis=axis).sqrt()
