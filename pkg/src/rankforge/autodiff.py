"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Every operation builds a `Node` holding its forward value and a backward
rule; `backward()` walks the tape once in reverse topological order and
accumulates exact adjoints. The graph is rebuilt per training example
(dynamic tape), so list lengths and pooling window counts may vary freely.

Supported shapes are scalars `()`, vectors `(n,)` and matrices `(n, m)`;
there is no broadcasting beyond what the ops below state explicitly.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def _as_array(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim > 2:
        raise ConfigError(f"arrays above rank 2 are unsupported, got shape {arr.shape}")
    return arr


class Node:
    """One tape entry: a value, a lazily allocated adjoint, and a backward rule."""

    __slots__ = ("value", "adjoint", "parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = value
        self.adjoint = None
        self.parents = parents
        self._backward = backward

    def accumulate(self, grad):
        # adjoints are never mutated in place, so storing the first
        # contribution without a copy is safe
        self.adjoint = grad if self.adjoint is None else self.adjoint + grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, value={self.value!r})"

    # arithmetic sugar; the module-level functions are the primary API
    def __add__(self, other):
        return add(self, other) if isinstance(other, Node) else add_const(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Node) else add_const(self, -other)

    def __rsub__(self, other):
        return add_const(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Node) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)


def constant(values):
    """Leaf node that receives adjoints but propagates nothing."""
    return Node(_as_array(values))


def _check_same_shape(a, b, op):
    if a.value.shape != b.value.shape:
        raise ConfigError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def add(a, b):
    _check_same_shape(a, b, "add")
    out = Node(a.value + b.value, (a, b))

    def _bwd():
        a.accumulate(out.adjoint)
        b.accumulate(out.adjoint)

    out._backward = _bwd
    return out


def sub(a, b):
    _check_same_shape(a, b, "sub")
    out = Node(a.value - b.value, (a, b))

    def _bwd():
        a.accumulate(out.adjoint)
        b.accumulate(-out.adjoint)

    out._backward = _bwd
    return out


def mul(a, b):
    """Elementwise product of same-shape nodes."""
    _check_same_shape(a, b, "mul")
    out = Node(a.value * b.value, (a, b))

    def _bwd():
        a.accumulate(out.adjoint * b.value)
        b.accumulate(out.adjoint * a.value)

    out._backward = _bwd
    return out


def neg(a):
    out = Node(-a.value, (a,))

    def _bwd():
        a.accumulate(-out.adjoint)

    out._backward = _bwd
    return out


def scale(a, c):
    c = float(c)
    out = Node(a.value * c, (a,))

    def _bwd():
        a.accumulate(out.adjoint * c)

    out._backward = _bwd
    return out


def add_const(a, c):
    out = Node(a.value + c, (a,))

    def _bwd():
        a.accumulate(out.adjoint)

    out._backward = _bwd
    return out


def dot(a, b):
    """Inner product of two vectors, returning a scalar node."""
    if a.value.ndim != 1 or b.value.ndim != 1:
        raise ConfigError("dot expects vectors")
    _check_same_shape(a, b, "dot")
    out = Node(np.dot(a.value, b.value), (a, b))

    def _bwd():
        a.accumulate(out.adjoint * b.value)
        b.accumulate(out.adjoint * a.value)

    out._backward = _bwd
    return out


def affine(x, w, b):
    """w @ x + b for w of shape (m, n), x of shape (n,), b of shape (m,)."""
    if w.value.ndim != 2 or x.value.ndim != 1 or b.value.ndim != 1:
        raise ConfigError("affine expects matrix w, vector x, vector b")
    m, n = w.value.shape
    if x.value.shape != (n,) or b.value.shape != (m,):
        raise ConfigError(
            f"affine: shapes do not conform, w {w.value.shape}, x {x.value.shape}, b {b.value.shape}"
        )
    out = Node(w.value @ x.value + b.value, (x, w, b))

    def _bwd():
        g = out.adjoint
        x.accumulate(w.value.T @ g)
        w.accumulate(np.outer(g, x.value))
        b.accumulate(g)

    out._backward = _bwd
    return out


def total(a):
    """Sum of all elements, as a scalar node."""
    out = Node(np.asarray(a.value.sum()), (a,))

    def _bwd():
        a.accumulate(np.full_like(a.value, float(out.adjoint)))

    out._backward = _bwd
    return out


def mean(a):
    n = a.value.size
    if n == 0:
        raise ConfigError("mean of empty node")
    out = Node(np.asarray(a.value.mean()), (a,))

    def _bwd():
        a.accumulate(np.full_like(a.value, float(out.adjoint) / n))

    out._backward = _bwd
    return out


def tanh_map(a):
    t = np.tanh(a.value)
    out = Node(t, (a,))

    def _bwd():
        a.accumulate(out.adjoint * (1.0 - t * t))

    out._backward = _bwd
    return out


def relu(a):
    out = Node(np.maximum(a.value, 0.0), (a,))

    def _bwd():
        a.accumulate(out.adjoint * (a.value > 0.0))

    out._backward = _bwd
    return out


def sigmoid(a):
    # stable in both tails
    v = a.value
    s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = Node(s, (a,))

    def _bwd():
        a.accumulate(out.adjoint * s * (1.0 - s))

    out._backward = _bwd
    return out


def softplus(a):
    """log(1 + exp(x)) in the overflow-safe max form; derivative sigmoid(x)."""
    v = a.value
    out = Node(np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v))), (a,))

    def _bwd():
        s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
        a.accumulate(out.adjoint * s)

    out._backward = _bwd
    return out


def exp(a):
    e = np.exp(a.value)
    out = Node(e, (a,))

    def _bwd():
        a.accumulate(out.adjoint * e)

    out._backward = _bwd
    return out


def log(a):
    out = Node(np.log(a.value), (a,))

    def _bwd():
        a.accumulate(out.adjoint / a.value)

    out._backward = _bwd
    return out


def reciprocal(a):
    r = 1.0 / a.value
    out = Node(r, (a,))

    def _bwd():
        a.accumulate(-out.adjoint * r * r)

    out._backward = _bwd
    return out


def _require_vector(a, op):
    if a.value.ndim != 1 or a.value.size == 0:
        raise ConfigError(f"{op} expects a non-empty vector, got shape {a.value.shape}")


def softmax_stable(x):
    """Max-shifted softmax of a vector; backward applies the exact Jacobian."""
    _require_vector(x, "softmax_stable")
    shifted = x.value - x.value.max()
    e = np.exp(shifted)
    y = e / e.sum()
    out = Node(y, (x,))

    def _bwd():
        g = out.adjoint
        x.accumulate(y * (g - np.dot(g, y)))

    out._backward = _bwd
    return out


def log_softmax(x):
    """x - max(x) - log(sum(exp(x - max(x)))), elementwise over a vector."""
    _require_vector(x, "log_softmax")
    shifted = x.value - x.value.max()
    lse = np.log(np.exp(shifted).sum())
    out = Node(shifted - lse, (x,))

    def _bwd():
        g = out.adjoint
        p = np.exp(shifted - lse)
        x.accumulate(g - p * g.sum())

    out._backward = _bwd
    return out


def logsumexp(x):
    """log(sum(exp(x))) of a vector as a scalar node."""
    _require_vector(x, "logsumexp")
    m = x.value.max()
    e = np.exp(x.value - m)
    s = e.sum()
    out = Node(np.asarray(m + np.log(s)), (x,))

    def _bwd():
        x.accumulate(float(out.adjoint) * (e / s))

    out._backward = _bwd
    return out


def select_max(x):
    """Maximum element of a vector and its index; ties go to the lowest index.

    The full adjoint is routed to the selected index only.
    """
    _require_vector(x, "select_max")
    idx = int(np.argmax(x.value))
    out = Node(np.asarray(x.value[idx]), (x,))

    def _bwd():
        g = np.zeros_like(x.value)
        g[idx] = float(out.adjoint)
        x.accumulate(g)

    out._backward = _bwd
    return out, idx


def select_min(x):
    """Minimum element of a vector and its index; ties go to the lowest index."""
    _require_vector(x, "select_min")
    idx = int(np.argmin(x.value))
    out = Node(np.asarray(x.value[idx]), (x,))

    def _bwd():
        g = np.zeros_like(x.value)
        g[idx] = float(out.adjoint)
        x.accumulate(g)

    out._backward = _bwd
    return out, idx


def gather(x, indices):
    """Vector elements at `indices`; backward scatter-adds into the source."""
    _require_vector(x, "gather")
    idx = np.asarray(indices, dtype=np.intp)
    out = Node(x.value[idx], (x,))

    def _bwd():
        g = np.zeros_like(x.value)
        np.add.at(g, idx, out.adjoint)
        x.accumulate(g)

    out._backward = _bwd
    return out


def gather_rows(x, indices):
    """Matrix rows at `indices`; backward scatter-adds rows into the source."""
    if x.value.ndim != 2:
        raise ConfigError("gather_rows expects a matrix")
    idx = np.asarray(indices, dtype=np.intp)
    out = Node(x.value[idx], (x,))

    def _bwd():
        g = np.zeros_like(x.value)
        np.add.at(g, idx, out.adjoint)
        x.accumulate(g)

    out._backward = _bwd
    return out


def concat(nodes):
    """Join scalars and vectors into one vector, in order."""
    nodes = list(nodes)
    if not nodes:
        raise ConfigError("concat of no nodes")
    pieces = [n.value.reshape(-1) for n in nodes]
    sizes = [p.size for p in pieces]
    out = Node(np.concatenate(pieces), tuple(nodes))

    def _bwd():
        g = out.adjoint
        offset = 0
        for node, size in zip(nodes, sizes):
            seg = g[offset:offset + size]
            node.accumulate(seg.reshape(node.value.shape))
            offset += size

    out._backward = _bwd
    return out


def stack_rows(nodes):
    """Stack equal-length vectors into a matrix, one node per row."""
    nodes = list(nodes)
    if not nodes:
        raise ConfigError("stack_rows of no nodes")
    d = nodes[0].value.shape
    for n in nodes:
        if n.value.ndim != 1 or n.value.shape != d:
            raise ConfigError("stack_rows expects equal-length vectors")
    out = Node(np.stack([n.value for n in nodes]), tuple(nodes))

    def _bwd():
        g = out.adjoint
        for i, node in enumerate(nodes):
            node.accumulate(g[i])

    out._backward = _bwd
    return out


def mean_rows(x):
    """Column means of a matrix: (n, d) -> (d,)."""
    if x.value.ndim != 2:
        raise ConfigError("mean_rows expects a matrix")
    n = x.value.shape[0]
    out = Node(x.value.mean(axis=0), (x,))

    def _bwd():
        x.accumulate(np.tile(out.adjoint / n, (n, 1)))

    out._backward = _bwd
    return out


def row_sums(x):
    """Row sums of a matrix: (n, m) -> (n,)."""
    if x.value.ndim != 2:
        raise ConfigError("row_sums expects a matrix")
    out = Node(x.value.sum(axis=1), (x,))

    def _bwd():
        x.accumulate(np.repeat(out.adjoint[:, None], x.value.shape[1], axis=1))

    out._backward = _bwd
    return out


def pairwise_diff(x):
    """All score differences of a vector: out[i, j] = x[j] - x[i]."""
    _require_vector(x, "pairwise_diff")
    v = x.value
    out = Node(v[None, :] - v[:, None], (x,))

    def _bwd():
        g = out.adjoint
        x.accumulate(g.sum(axis=0) - g.sum(axis=1))

    out._backward = _bwd
    return out


def _topo_order(root):
    """Iterative post-order over the tape; each node appears exactly once."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        nid = id(node)
        if nid in seen:
            continue
        seen.add(nid)
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Propagate adjoints from a scalar loss through the whole tape.

    Parameter leaves created by `ParamStore.node` add their adjoints into
    the store's gradient buffers as they are visited.
    """
    if loss.value.shape != ():
        raise ConfigError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topo_order(loss)
    loss.adjoint = np.ones(())
    for node in reversed(order):
        if node._backward is not None and node.adjoint is not None:
            node._backward()


class Param:
    """A named trainable array with its gradient buffer and optimizer state."""

    __slots__ = ("value", "grad", "state")

    def __init__(self, value):
        self.value = _as_array(value).copy()
        self.grad = np.zeros_like(self.value)
        self.state = {}


class ParamStore:
    """Named parameter arrays with gradient accumulators and optimizer state."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name, value):
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = Param(value)
        self._params[name] = p
        return p

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def param(self, name):
        try:
            return self._params[name]
        except KeyError:
            raise ConfigError(f"unknown parameter {name!r}") from None

    def value(self, name):
        return self.param(name).value

    def grad(self, name):
        return self.param(name).grad

    def node(self, name):
        """Leaf node for a parameter; backward adds its adjoint to the gradient."""
        p = self.param(name)
        out = Node(p.value)

        def _bwd():
            p.grad += out.adjoint

        out._backward = _bwd
        return out

    def zero_grads(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def num_values(self):
        return sum(p.value.size for p in self._params.values())

    def snapshot(self):
        """Copy of all parameter values, keyed by name."""
        return {name: p.value.copy() for name, p in self._params.items()}

    def load(self, values):
        for name, arr in values.items():
            p = self.param(name)
            arr = _as_array(arr)
            if arr.shape != p.value.shape:
                raise ConfigError(f"shape mismatch loading {name!r}")
            p.value[...] = arr

    def copy(self):
        """Independent store with the same values and fresh grads/state."""
        dup = ParamStore()
        for name, p in self._params.items():
            dup.add(name, p.value)
        return dup

    def without_prefix(self, prefix):
        """Independent store holding every entry whose name lacks `prefix`."""
        dup = ParamStore()
        for name, p in self._params.items():
            if not name.startswith(prefix):
                dup.add(name, p.value)
        return dup
