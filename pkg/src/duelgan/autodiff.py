"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Ops are recorded in call order, so the tape is always topologically sorted.
A tape can be replayed with new leaf values (``forward``), which is what the
finite-difference checker relies on.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


class DomainError(AutodiffError, ValueError):
    pass


class TapeStateError(AutodiffError, RuntimeError):
    pass


class GradientCheckError(AutodiffError, ArithmeticError):
    pass


def _is_scalar(a: np.ndarray) -> bool:
    return a.ndim == 0 or (a.ndim == 1 and a.size == 1)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class Node:
    __slots__ = ("index", "op", "inputs", "attrs", "value", "name")

    def __init__(self, index, op, inputs, attrs, name):
        self.index = index
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = None
        self.name = name

    @property
    def shape(self):
        return None if self.value is None else self.value.shape

    def __repr__(self):
        return f"Node({self.name}, shape={self.shape})"


# -- op kernels: value from input values, and vector-Jacobian products --------

def _binary_shapes(node, a, b):
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(
            f"node {node.name}: shapes {a.shape} and {b.shape} are incompatible "
            "(only equal shapes or scalar operands allowed)")


def _fwd_add(node, a, b):
    _binary_shapes(node, a, b)
    return a + b


def _fwd_sub(node, a, b):
    _binary_shapes(node, a, b)
    return a - b


def _fwd_mul(node, a, b):
    _binary_shapes(node, a, b)
    return a * b


def _fwd_matmul(node, a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"node {node.name}: cannot matmul {a.shape} by {b.shape}")
    return a @ b


def _fwd_add_bias(node, a, b):
    if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"node {node.name}: bias {b.shape} does not fit rows of {a.shape}")
    return a + b


def _fwd_log(node, a):
    if not np.all(a > 0):
        bad = np.flatnonzero(~(a > 0).ravel())[0]
        raise DomainError(
            f"node {node.name}: log of non-positive value {a.ravel()[bad]!r} at flat index {bad}")
    return np.log(a)


def _fwd_take(node, a):
    idx = node.attrs["idx"]
    if a.ndim != 1:
        raise ShapeError(f"node {node.name}: take expects a vector, got {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"node {node.name}: index out of range for length {a.shape[0]}")
    return a[idx]


def _fwd_reshape(node, a):
    try:
        return a.reshape(node.attrs["shape"])
    except ValueError as exc:
        raise ShapeError(f"node {node.name}: {exc}") from None


def _fwd_transpose(node, a):
    if a.ndim != 2:
        raise ShapeError(f"node {node.name}: transpose expects a matrix, got {a.shape}")
    return a.T


_FORWARD: dict[str, Callable] = {
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "matmul": _fwd_matmul,
    "add_bias": _fwd_add_bias,
    "neg": lambda n, a: -a,
    "scale": lambda n, a: a * n.attrs["c"],
    "affine": lambda n, a: a * n.attrs["c"] + n.attrs["shift"],
    "tanh": lambda n, a: np.tanh(a),
    "relu": lambda n, a: relu(a),
    "sigmoid": lambda n, a: sigmoid(a),
    "softplus": lambda n, a: softplus(a),
    "log": _fwd_log,
    "clip": lambda n, a: np.clip(a, n.attrs["lo"], n.attrs["hi"]),
    "sum": lambda n, a: np.asarray(a.sum()),
    "mean": lambda n, a: np.asarray(a.mean()),
    "take": _fwd_take,
    "reshape": _fwd_reshape,
    "transpose": _fwd_transpose,
}


def _unbroadcast(g, like):
    if g.shape == like.shape:
        return g
    return np.asarray(g.sum()).reshape(like.shape)


def _vjp(node: Node, g: np.ndarray, vals: list[np.ndarray]) -> list[np.ndarray]:
    op = node.op
    y = node.value
    if op == "add":
        a, b = vals
        return [_unbroadcast(g, a), _unbroadcast(g, b)]
    if op == "sub":
        a, b = vals
        return [_unbroadcast(g, a), _unbroadcast(-g, b)]
    if op == "mul":
        a, b = vals
        return [_unbroadcast(g * b, a), _unbroadcast(g * a, b)]
    if op == "matmul":
        a, b = vals
        return [g @ b.T, a.T @ g]
    if op == "add_bias":
        return [g, g.sum(axis=0)]
    if op == "neg":
        return [-g]
    if op == "scale":
        return [g * node.attrs["c"]]
    if op == "affine":
        return [g * node.attrs["c"]]
    if op == "tanh":
        return [g * (1.0 - y * y)]
    if op == "relu":
        return [g * (vals[0] > 0)]
    if op == "sigmoid":
        return [g * y * (1.0 - y)]
    if op == "softplus":
        return [g * sigmoid(vals[0])]
    if op == "log":
        return [g / vals[0]]
    if op == "clip":
        a = vals[0]
        inside = (a >= node.attrs["lo"]) & (a <= node.attrs["hi"])
        return [g * inside]
    if op == "sum":
        return [np.full_like(vals[0], g)]
    if op == "mean":
        return [np.full_like(vals[0], g / vals[0].size)]
    if op == "take":
        a = vals[0]
        return [np.bincount(node.attrs["idx"], weights=g, minlength=a.shape[0])]
    if op == "reshape":
        return [g.reshape(vals[0].shape)]
    if op == "transpose":
        return [g.T]
    raise AutodiffError(f"no derivative rule for op {op!r}")


class Tape:
    """Record of a differentiable computation ending in a scalar root.

    Build it by calling the op methods; values are computed eagerly whenever
    all inputs are bound. The root is the last recorded node unless
    ``backward`` is given one explicitly.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: dict[str, Node] = {}
        self.adjoints: list[np.ndarray | None] | None = None
        self._evaluated = True

    # -- graph construction ---------------------------------------------------

    def _record(self, op, inputs, attrs=None, name=None) -> Node:
        node = Node(len(self.nodes), op, tuple(inputs), attrs or {},
                    name or f"{op}#{len(self.nodes)}")
        self.nodes.append(node)
        self.adjoints = None
        if all(i.value is not None for i in inputs):
            node.value = _FORWARD[op](node, *(i.value for i in inputs))
        else:
            self._evaluated = False
        return node

    def leaf(self, name: str, value=None) -> Node:
        if name in self.leaves:
            raise AutodiffError(f"duplicate leaf name {name!r}")
        node = Node(len(self.nodes), "leaf", (), {}, name)
        if value is not None:
            node.value = np.asarray(value, dtype=np.float64)
        else:
            self._evaluated = False
        self.nodes.append(node)
        self.leaves[name] = node
        self.adjoints = None
        return node

    def constant(self, value, name=None) -> Node:
        node = Node(len(self.nodes), "const", (), {}, name or f"const#{len(self.nodes)}")
        node.value = np.asarray(value, dtype=np.float64)
        self.nodes.append(node)
        return node

    def _lift(self, x) -> Node:
        return x if isinstance(x, Node) else self.constant(x)

    def add(self, a, b, name=None):
        return self._record("add", (self._lift(a), self._lift(b)), name=name)

    def sub(self, a, b, name=None):
        return self._record("sub", (self._lift(a), self._lift(b)), name=name)

    def mul(self, a, b, name=None):
        return self._record("mul", (self._lift(a), self._lift(b)), name=name)

    def matmul(self, a, b, name=None):
        return self._record("matmul", (self._lift(a), self._lift(b)), name=name)

    def add_bias(self, a, b, name=None):
        return self._record("add_bias", (self._lift(a), self._lift(b)), name=name)

    def neg(self, a, name=None):
        return self._record("neg", (a,), name=name)

    def scale(self, a, c: float, name=None):
        return self._record("scale", (a,), {"c": float(c)}, name=name)

    def affine(self, a, c: float, shift: float, name=None):
        """``c * a + shift`` with constant ``c`` and ``shift``."""
        return self._record("affine", (a,), {"c": float(c), "shift": float(shift)}, name=name)

    def tanh(self, a, name=None):
        return self._record("tanh", (a,), name=name)

    def relu(self, a, name=None):
        return self._record("relu", (a,), name=name)

    def sigmoid(self, a, name=None):
        return self._record("sigmoid", (a,), name=name)

    def softplus(self, a, name=None):
        return self._record("softplus", (a,), name=name)

    def log(self, a, name=None):
        return self._record("log", (a,), name=name)

    def clip(self, a, lo: float, hi: float, name=None):
        return self._record("clip", (a,), {"lo": lo, "hi": hi}, name=name)

    def sum(self, a, name=None):
        return self._record("sum", (a,), name=name)

    def mean(self, a, name=None):
        return self._record("mean", (a,), name=name)

    def take(self, a, idx, name=None):
        idx = np.ascontiguousarray(idx, dtype=np.intp)
        return self._record("take", (a,), {"idx": idx}, name=name)

    def reshape(self, a, shape, name=None):
        return self._record("reshape", (a,), {"shape": tuple(shape)}, name=name)

    def transpose(self, a, name=None):
        return self._record("transpose", (a,), name=name)

    # -- evaluation -----------------------------------------------------------

    @property
    def root(self) -> Node:
        if not self.nodes:
            raise TapeStateError("empty tape has no root")
        return self.nodes[-1]

    def forward(self, leaf_values: Mapping[str, np.ndarray] | None = None) -> float:
        """Re-evaluate every node, rebinding the named leaves first."""
        leaf_values = leaf_values or {}
        unknown = set(leaf_values) - set(self.leaves)
        if unknown:
            raise AutodiffError(f"unknown leaves: {sorted(unknown)}")
        for name, val in leaf_values.items():
            node = self.leaves[name]
            val = np.asarray(val, dtype=np.float64)
            if node.value is not None and node.value.shape != val.shape:
                raise ShapeError(f"leaf {name}: expected shape {node.value.shape}, got {val.shape}")
            node.value = val
        for node in self.nodes:
            if node.op == "leaf":
                if node.value is None:
                    raise TapeStateError(f"leaf {node.name} is unbound")
            elif node.op != "const":
                node.value = _FORWARD[node.op](node, *(i.value for i in node.inputs))
        self._evaluated = True
        self.adjoints = None
        return _scalar(self.root)

    def backward(self, root: Node | None = None) -> dict[str, np.ndarray]:
        """Gradients of the scalar root with respect to every leaf."""
        if not self._evaluated:
            raise TapeStateError("backward called before forward")
        root = root or self.root
        if root.value.size != 1:
            raise ShapeError(f"root {root.name} is not scalar (shape {root.value.shape})")
        adj: list[np.ndarray | None] = [None] * len(self.nodes)
        adj[root.index] = np.ones_like(root.value)
        for node in reversed(self.nodes[: root.index + 1]):
            g = adj[node.index]
            if g is None or not node.inputs:
                continue
            vals = [i.value for i in node.inputs]
            for inp, gi in zip(node.inputs, _vjp(node, g, vals)):
                if inp.op == "const":
                    continue
                if adj[inp.index] is None:
                    adj[inp.index] = gi
                else:
                    adj[inp.index] = adj[inp.index] + gi
        self.adjoints = adj
        return {
            name: (adj[n.index] if adj[n.index] is not None else np.zeros_like(n.value))
            for name, n in self.leaves.items()
        }


def _scalar(node: Node) -> float:
    if node.value.size != 1:
        raise ShapeError(f"root {node.name} is not scalar (shape {node.value.shape})")
    return float(node.value.reshape(()))


def forward(tape: Tape, leaf_values: Mapping[str, np.ndarray] | None = None) -> float:
    return tape.forward(leaf_values)


def backward(tape: Tape) -> dict[str, np.ndarray]:
    return tape.backward()


def grad_check(build: Callable[[Tape, dict[str, Node]], Node],
               params: Mapping[str, np.ndarray],
               step: float = 1e-5,
               tolerance: float | None = None) -> float:
    """Compare reverse-mode gradients against central differences.

    ``build(tape, leaves)`` records the function on a fresh tape whose leaves
    are already bound to ``params``. Returns the max elementwise relative error
    ``|g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12)``; if ``tolerance`` is given and
    exceeded, raises GradientCheckError instead.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    tape = Tape()
    leaves = {k: tape.leaf(k, np.array(v, dtype=np.float64)) for k, v in params.items()}
    root = build(tape, leaves)
    if root is not tape.root:
        raise AutodiffError("build() must return the last recorded node")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    f0 = tape.forward(base)
    if not np.isfinite(f0):
        raise GradientCheckError(f"non-finite function value {f0} at the base point")
    grads = tape.backward()

    worst = 0.0
    for name, val in base.items():
        flat = val.ravel()
        g_ad = grads[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = tape.forward(base)
            flat[i] = orig - step
            fm = tape.forward(base)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradientCheckError(f"non-finite value perturbing {name}[{i}]")
            g_fd = (fp - fm) / (2.0 * step)
            if not np.isfinite(g_ad[i]):
                raise GradientCheckError(f"non-finite gradient at {name}[{i}]")
            err = abs(g_ad[i] - g_fd) / (abs(g_ad[i]) + abs(g_fd) + 1e-12)
            worst = max(worst, err)
    tape.forward(base)
    if tolerance is not None and worst > tolerance:
        raise GradientCheckError(f"max relative error {worst:.3e} exceeds {tolerance:.1e}")
    return worst
