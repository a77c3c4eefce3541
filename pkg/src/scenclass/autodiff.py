"""Dense 2-D tensors with define-by-run reverse-mode differentiation.

Values are plain ``float64`` numpy arrays of exactly two dimensions. A
:class:`Node` wraps one value together with its gradient and the rule that
pushes an upstream gradient back to the node's parents. Every operation in
this module takes nodes (or raw arrays, which become constants) and returns
a new node; the graph is rebuilt on each forward pass.

Higher-rank data is handled by looping over 2-D slices, there is no
implicit broadcasting.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Node", "ParameterSet", "tensor", "constant", "parameter",
    "matmul", "add", "sub", "mul", "scale", "add_bias", "transpose",
    "relu", "sigmoid", "tanh", "softmax_rows", "layer_norm", "mean_rows",
    "take_row", "slice_cols", "concat_cols", "sum_all", "mean_scalars",
    "binary_cross_entropy", "lstm_sequence", "conv1d_same",
    "backward", "finite_diff_gradient",
]


def tensor(data) -> np.ndarray:
    """Coerce ``data`` to a 2-D float64 array (scalars become 1x1, vectors 1xN)."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


class Node:
    """One value in a computation graph.

    ``grad`` has the shape of ``value``. Trainable leaves start with a zero
    gradient that accumulates across :func:`backward` calls until reset;
    intermediate nodes receive the gradient of the most recent pass.
    """

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents: Sequence["Node"] = (),
                 backward_fn: Callable | None = None,
                 requires_grad: bool = False, name: str | None = None):
        self.value = value if isinstance(value, np.ndarray) and value.ndim == 2 \
            and value.dtype == np.float64 else tensor(value)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(self.value) if requires_grad and not parents else None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    @property
    def T(self):
        return transpose(self)


def constant(value) -> Node:
    return Node(tensor(value))


def parameter(value, name: str | None = None) -> Node:
    return Node(tensor(value), requires_grad=True, name=name)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(tensor(x))


def _result(value: np.ndarray, parents: Sequence[Node], backward_fn: Callable) -> Node:
    # Parents are only recorded when a gradient can flow through them.
    if any(p.requires_grad for p in parents):
        return Node(value, parents, backward_fn, requires_grad=True)
    return Node(value)


class ParameterSet:
    """Ordered, uniquely named collection of trainable nodes."""

    def __init__(self, items: Iterable[tuple[str, Node]] = ()):
        self._nodes: dict[str, Node] = {}
        for name, node in items:
            self.add(name, node)

    def add(self, name: str, value) -> Node:
        if name in self._nodes:
            raise ContractError(f"duplicate parameter name {name!r}")
        node = value if isinstance(value, Node) else parameter(value, name)
        node.requires_grad = True
        node.name = name
        if node.grad is None:
            node.zero_grad()
        self._nodes[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self._nodes[name]

    def __contains__(self, name: str) -> bool:
        return name in self._nodes

    def __iter__(self) -> Iterator[str]:
        return iter(self._nodes)

    def __len__(self) -> int:
        return len(self._nodes)

    def items(self):
        return self._nodes.items()

    def values(self):
        return self._nodes.values()

    def zero_grad(self) -> None:
        for node in self._nodes.values():
            node.zero_grad()

    def size(self) -> int:
        return sum(node.value.size for node in self._nodes.values())

    def replace(self, name: str, value: np.ndarray) -> "ParameterSet":
        """Return a shallow copy whose entry ``name`` holds a fresh node with ``value``."""
        if name not in self._nodes:
            raise KeyError(name)
        if value.shape != self._nodes[name].shape:
            raise DimensionError(f"{name}: expected {self._nodes[name].shape}, got {value.shape}")
        return ParameterSet((n, parameter(value, n) if n == name else node)
                            for n, node in self._nodes.items())

    def copy(self) -> "ParameterSet":
        return ParameterSet((n, parameter(node.value.copy(), n)) for n, node in self._nodes.items())


# ----------------------------------------------------------------------------
# elementary operations
# ----------------------------------------------------------------------------

def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        return g @ bv.T, av.T @ g

    return _result(av @ bv, (a, b), back)


def _same_shape(op: str, a: Node, b: Node) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _same_shape("add", a, b)
    return _result(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _same_shape("sub", a, b)
    return _result(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float) -> Node:
    a = _as_node(a)
    c = float(c)
    return _result(a.value * c, (a,), lambda g: (g * c,))


def add_bias(x, b) -> Node:
    """Add a 1xC row ``b`` to every row of an RxC ``x``."""
    x, b = _as_node(x), _as_node(b)
    if b.shape[0] != 1 or b.shape[1] != x.shape[1]:
        raise DimensionError(f"add_bias: bias {b.shape} does not fit {x.shape}")
    return _result(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def transpose(a) -> Node:
    a = _as_node(a)
    return _result(a.value.T, (a,), lambda g: (g.T,))


def relu(a) -> Node:
    a = _as_node(a)
    mask = a.value > 0
    return _result(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so no overflow
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Node:
    a = _as_node(a)
    s = _sigmoid(a.value)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Node:
    a = _as_node(a)
    t = np.tanh(a.value)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(a) -> Node:
    """Row-wise softmax with max subtraction."""
    a = _as_node(a)
    s = _softmax(a.value)

    def back(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _result(s, (a,), back)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Node:
    """Normalize each row to zero mean and unit (population) variance, then scale and shift."""
    x, gain, bias = _as_node(x), _as_node(gain), _as_node(bias)
    n = x.shape[1]
    if gain.shape != (1, n) or bias.shape != (1, n):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not fit {x.shape}")
    centered = x.value - x.value.mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std
    gv = gain.value

    def back(g):
        gx = g * gv
        dx = inv_std * (gx - gx.mean(axis=1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _result(xhat * gv + bias.value, (x, gain, bias), back)


def mean_rows(x) -> Node:
    """Average over rows: RxC -> 1xC."""
    x = _as_node(x)
    r = x.shape[0]
    return _result(x.value.mean(axis=0, keepdims=True), (x,),
                   lambda g: (np.broadcast_to(g / r, x.shape).copy(),))


def take_row(x, i: int) -> Node:
    x = _as_node(x)
    r = x.shape[0]
    i = i % r

    def back(g):
        out = np.zeros(x.shape)
        out[i] = g[0]
        return (out,)

    return _result(x.value[i:i + 1].copy(), (x,), back)


def slice_cols(x, start: int, stop: int) -> Node:
    x = _as_node(x)
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"slice_cols: [{start}:{stop}] outside {x.shape}")

    def back(g):
        out = np.zeros(x.shape)
        out[:, start:stop] = g
        return (out,)

    return _result(x.value[:, start:stop].copy(), (x,), back)


def concat_cols(parts: Sequence) -> Node:
    parts = [_as_node(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return _result(np.concatenate([p.value for p in parts], axis=1), parts, back)


def sum_all(x) -> Node:
    x = _as_node(x)
    return _result(np.array([[x.value.sum()]]), (x,),
                   lambda g: (np.full(x.shape, g[0, 0]),))


def mean_scalars(nodes: Sequence) -> Node:
    """Mean of 1x1 nodes."""
    nodes = [_as_node(n) for n in nodes]
    if not nodes:
        raise ContractError("mean_scalars of an empty sequence")
    for n in nodes:
        if n.shape != (1, 1):
            raise DimensionError(f"mean_scalars expects 1x1 nodes, got {n.shape}")
    k = len(nodes)
    total = math.fsum(float(n.value[0, 0]) for n in nodes) / k
    return _result(np.array([[total]]), nodes, lambda g: tuple(g / k for _ in range(k)))


def binary_cross_entropy(probs, label: int, eps: float = 1e-12) -> Node:
    """Cross-entropy of a 1x2 class distribution against a 0/1 label.

    Only the probability of class 1 enters: ``-(y log p + (1-y) log(1-p))``
    with ``p`` clipped into ``[eps, 1-eps]``.
    """
    probs = _as_node(probs)
    if probs.shape != (1, 2):
        raise DimensionError(f"binary_cross_entropy expects 1x2 probabilities, got {probs.shape}")
    y = float(label)
    raw = float(probs.value[0, 1])
    p = min(max(raw, eps), 1.0 - eps)
    loss = -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))

    def back(g):
        out = np.zeros((1, 2))
        if eps <= raw <= 1.0 - eps:
            out[0, 1] = g[0, 0] * (-(y / p) + (1.0 - y) / (1.0 - p))
        return (out,)

    return _result(np.array([[loss]]), (probs,), back)


# ----------------------------------------------------------------------------
# fused sequence operations
# ----------------------------------------------------------------------------

def lstm_sequence(xw, w_h) -> Node:
    """Run a gated recurrent (LSTM) cell over time, starting from zero state.

    ``xw`` (L x 4H) holds the input contributions ``x_t W_x + b`` for the
    gates in column blocks ``[input, forget, candidate, output]``; ``w_h``
    (H x 4H) is the recurrent weight. Returns the L x H hidden states.
    Backpropagation through time is done inside the node.
    """
    xw, w_h = _as_node(xw), _as_node(w_h)
    steps, four_h = xw.shape
    hidden = w_h.shape[0]
    if four_h != 4 * hidden or w_h.shape[1] != four_h:
        raise DimensionError(f"lstm_sequence: xw {xw.shape} incompatible with w_h {w_h.shape}")
    wv = w_h.value
    H = hidden
    hs = np.zeros((steps + 1, H))
    cs = np.zeros((steps + 1, H))
    gates = np.empty((steps, four_h))
    tanh_c = np.empty((steps, H))
    for t in range(steps):
        a = xw.value[t] + hs[t] @ wv
        gate = gates[t]
        gate[:2 * H] = _sigmoid(a[:2 * H])
        gate[2 * H:3 * H] = np.tanh(a[2 * H:3 * H])
        gate[3 * H:] = _sigmoid(a[3 * H:])
        cs[t + 1] = gate[H:2 * H] * cs[t] + gate[:H] * gate[2 * H:3 * H]
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = gate[3 * H:] * tanh_c[t]

    def back(g):
        dxw = np.empty((steps, four_h))
        dw = np.zeros_like(wv)
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in range(steps - 1, -1, -1):
            i, f = gates[t, :H], gates[t, H:2 * H]
            c_hat, o = gates[t, 2 * H:3 * H], gates[t, 3 * H:]
            dh = g[t] + dh_next
            dc = dh * o * (1.0 - tanh_c[t] ** 2) + dc_next
            da = dxw[t]
            da[:H] = dc * c_hat * i * (1.0 - i)
            da[H:2 * H] = dc * cs[t] * f * (1.0 - f)
            da[2 * H:3 * H] = dc * i * (1.0 - c_hat ** 2)
            da[3 * H:] = dh * tanh_c[t] * o * (1.0 - o)
            dc_next = dc * f
            dh_next = wv @ da
        # accumulate the recurrent weight gradient in one product
        dw += hs[:-1].T @ dxw
        return dxw, dw

    return _result(hs[1:].copy(), (xw, w_h), back)


def conv1d_same(x, w, b, kernel_size: int) -> Node:
    """1-D convolution over time with zero 'same' padding.

    ``x`` is L x C_in, ``w`` is (kernel_size * C_in) x C_out with row blocks
    ordered by tap (tap j looks at time t - kernel_size//2 + j), ``b`` is
    1 x C_out. Output is L x C_out.
    """
    x, w, b = _as_node(x), _as_node(w), _as_node(b)
    steps, c_in = x.shape
    k = int(kernel_size)
    if k < 1 or k % 2 == 0:
        raise ContractError(f"conv1d_same needs an odd kernel size, got {k}")
    if w.shape[0] != k * c_in or b.shape != (1, w.shape[1]):
        raise DimensionError(f"conv1d_same: x {x.shape}, w {w.shape}, b {b.shape}, k={k}")
    pad = k // 2
    xpad = np.zeros((steps + 2 * pad, c_in))
    xpad[pad:pad + steps] = x.value
    cols = np.concatenate([xpad[j:j + steps] for j in range(k)], axis=1)
    wv = w.value

    def back(g):
        dcols = g @ wv.T
        dxpad = np.zeros_like(xpad)
        for j in range(k):
            dxpad[j:j + steps] += dcols[:, j * c_in:(j + 1) * c_in]
        return dxpad[pad:pad + steps].copy(), cols.T @ g, g.sum(axis=0, keepdims=True)

    return _result(cols @ wv + b.value, (x, w, b), back)


# ----------------------------------------------------------------------------
# differentiation
# ----------------------------------------------------------------------------

def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output: Node) -> None:
    """Populate gradients of every trainable node reachable from the 1x1 ``output``.

    Contributions through shared sub-expressions are summed. Leaf
    gradients accumulate across calls; reset them with
    :meth:`ParameterSet.zero_grad` between steps.
    """
    if output.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) output, got {output.shape}")
    if not output.requires_grad:
        return
    pending: dict[int, np.ndarray] = {id(output): np.ones((1, 1))}
    for node in reversed(_topological_order(output)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def finite_diff_gradient(f: Callable[[ParameterSet], float], params: ParameterSet,
                         h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference estimate of the gradient of ``f`` at ``params``.

    ``f`` is called with perturbed copies; ``params`` itself is never touched.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    grads: dict[str, np.ndarray] = {}
    for name, node in params.items():
        base = node.value
        est = np.zeros_like(base)
        for idx in np.ndindex(*base.shape):
            bumped = base.copy()
            bumped[idx] = base[idx] + h
            f_plus = float(f(params.replace(name, bumped)))
            bumped[idx] = base[idx] - h
            f_minus = float(f(params.replace(name, bumped)))
            est[idx] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = est
    return grads
