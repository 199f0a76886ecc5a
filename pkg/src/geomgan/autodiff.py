"""Minimal reverse-mode automatic differentiation over dense 2-D float64 arrays.

Everything is a matrix: scalars are 1x1, row vectors 1xN. The only broadcast
supported is adding a 1xN bias row to every row of a batch, which is all the
dense architectures here need.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DegenerateWeightsError, ShapeError

# A Tensor is a plain 2-D, C-contiguous, float64 ndarray.
Tensor = np.ndarray


def tensor(data) -> Tensor:
    """Coerce input to a 2-D float64 C-contiguous array (scalars -> 1x1, 1-D -> one row)."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def is_finite(t: Tensor) -> bool:
    """Explicit NaN/Inf check; ops themselves let non-finite values propagate."""
    return bool(np.isfinite(t).all())


class Node:
    """A value in the computation graph.

    `grad` is lazily allocated: None until the node receives a gradient.
    Repeated backward() calls accumulate into `grad` until zero_gradients().
    """

    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_rule", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward_rule=None, name=None):
        self.value = tensor(value)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self.backward_rule = backward_rule
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> "Node":
        """Leaf node sharing this value, cut off from the graph."""
        return Node(self.value, requires_grad=False, name=self.name)

    def __repr__(self):
        tag = self.name or "node"
        return f"Node({tag}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(data, name=None) -> Node:
    return Node(data, requires_grad=False, name=name)


def parameter(data, name=None) -> Node:
    return Node(data, requires_grad=True, name=name)


def zero_gradients(nodes) -> None:
    for n in nodes:
        n.grad = None


def _result(value, parents, backward_rule, name):
    requires = any(p.requires_grad for p in parents)
    return Node(value, requires_grad=requires, parents=parents, backward_rule=backward_rule, name=name)


# ---------------------------------------------------------------------------
# arithmetic ops


def matmul(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.value.shape} x {b.value.shape}")
    av, bv = a.value, b.value

    def rule(up):
        return up @ bv.T, av.T @ up

    return _result(av @ bv, (a, b), rule, "matmul")


def _check_same_shape(op, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op} shapes differ: {a.value.shape} vs {b.value.shape}")


def add(a: Node, b: Node) -> Node:
    _check_same_shape("add", a, b)

    def rule(up):
        return up, up

    return _result(a.value + b.value, (a, b), rule, "add")


def sub(a: Node, b: Node) -> Node:
    _check_same_shape("sub", a, b)

    def rule(up):
        return up, -up

    return _result(a.value - b.value, (a, b), rule, "sub")


def scalar_mul(c: float, a: Node) -> Node:
    c = float(c)

    def rule(up):
        return (c * up,)

    return _result(c * a.value, (a,), rule, "scalar_mul")


def elementwise_mul(a: Node, b: Node) -> Node:
    _check_same_shape("elementwise_mul", a, b)
    av, bv = a.value, b.value

    def rule(up):
        return up * bv, up * av

    return _result(av * bv, (a, b), rule, "elementwise_mul")


def broadcast_add_rowvec(a: Node, bias: Node) -> Node:
    if bias.value.shape[0] != 1 or bias.value.shape[1] != a.value.shape[1]:
        raise ShapeError(
            f"broadcast_add_rowvec needs bias (1, {a.value.shape[1]}), got {bias.value.shape}"
        )

    def rule(up):
        return up, up.sum(axis=0, keepdims=True)

    return _result(a.value + bias.value, (a, bias), rule, "broadcast_add_rowvec")


# ---------------------------------------------------------------------------
# activations
#
# Subgradient convention at the ReLU-family kink: take the left value, i.e.
# slope `leak` at exactly 0 (slope 0 for plain relu).


def leaky_relu(x: Node, leak: float = 0.2) -> Node:
    if not 0.0 <= leak < 1.0:
        raise ContractError(f"leak must be in [0, 1), got {leak}")
    v = x.value
    slope = np.where(v > 0.0, 1.0, leak)

    def rule(up):
        return (up * slope,)

    return _result(np.where(v > 0.0, v, leak * v), (x,), rule, "leaky_relu")


def relu(x: Node) -> Node:
    v = x.value
    mask = (v > 0.0).astype(np.float64)

    def rule(up):
        return (up * mask,)

    return _result(np.maximum(v, 0.0), (x,), rule, "relu")


def tanh(x: Node) -> Node:
    t = np.tanh(x.value)

    def rule(up):
        return (up * (1.0 - t * t),)

    return _result(t, (x,), rule, "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # stable in both tails
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Node) -> Node:
    s = _sigmoid(x.value)

    def rule(up):
        return (up * s * (1.0 - s),)

    return _result(s, (x,), rule, "sigmoid")


def linear(x: Node) -> Node:
    """Passthrough, kept so activation tables can treat 'linear' like any other kind."""
    return x


# ---------------------------------------------------------------------------
# reductions and losses


def reduce_sum(x: Node) -> Node:
    shape = x.value.shape

    def rule(up):
        return (np.full(shape, up[0, 0]),)

    return _result(x.value.sum(), (x,), rule, "reduce_sum")


def reduce_mean(x: Node) -> Node:
    shape = x.value.shape
    size = x.value.size

    def rule(up):
        return (np.full(shape, up[0, 0] / size),)

    return _result(x.value.mean(), (x,), rule, "reduce_mean")


def _row_weights(weights: Tensor, rows: int, what: str) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != rows:
        raise ShapeError(f"{what}: {w.shape[0]} weights for {rows} rows")
    if np.any(w < 0):
        raise DegenerateWeightsError(f"{what}: negative weight")
    total = w.sum()
    if total <= 0.0:
        raise DegenerateWeightsError(f"{what}: weights sum to zero")
    return w


def weighted_mean(x: Node, weights: Tensor) -> Node:
    """Per-row weighted mean, sum(w_i * rowmean_i) / sum(w), as a scalar node.

    Weights are constants (one per row); for single-column inputs this is the
    plain weighted average sum(w*x)/sum(w).
    """
    b, d = x.value.shape
    w = _row_weights(weights, b, "weighted_mean")
    total = w.sum()
    coeff = (w / (total * d)).reshape(-1, 1)
    value = float((x.value.mean(axis=1) * w).sum() / total)

    def rule(up):
        return (up[0, 0] * np.broadcast_to(coeff, (b, d)),)

    return _result(value, (x,), rule, "weighted_mean")


def mse(a: Node, b: Node) -> Node:
    _check_same_shape("mse", a, b)
    diff = a.value - b.value
    size = diff.size

    def rule(up):
        g = (2.0 / size) * up[0, 0] * diff
        return g, -g

    return _result(float((diff * diff).mean()), (a, b), rule, "mse")


def l1(a: Node, b: Node) -> Node:
    _check_same_shape("l1", a, b)
    diff = a.value - b.value
    size = diff.size
    sgn = np.sign(diff)  # subgradient 0 at exact equality

    def rule(up):
        g = (up[0, 0] / size) * sgn
        return g, -g

    return _result(float(np.abs(diff).mean()), (a, b), rule, "l1")


def bce_with_logits(logits: Node, targets: Tensor, weights: Tensor | None = None) -> Node:
    """Weighted binary cross-entropy on logits, normalized by the weight total.

    targets must be 0/1 and match the logit shape; weights are per-row
    constants (uniform when omitted).
    """
    z = logits.value
    t = tensor(targets)
    if t.shape != z.shape:
        raise ShapeError(f"bce targets shape {t.shape} vs logits {z.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ContractError("bce targets must be 0 or 1")
    b, d = z.shape
    w = np.ones(b) if weights is None else _row_weights(weights, b, "bce_with_logits")
    total = w.sum()

    # elementwise stable BCE: max(z,0) - z*t + log(1 + exp(-|z|))
    losses = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    value = float((losses.mean(axis=1) * w).sum() / total)
    coeff = (w / (total * d)).reshape(-1, 1)
    dz = _sigmoid(z) - t

    def rule(up):
        return (up[0, 0] * coeff * dz,)

    return _result(value, (logits,), rule, "bce_with_logits")


def pairwise_dists(z: Node) -> Node:
    """B x B matrix of Euclidean distances between the rows of z.

    Exact-zero distances (the diagonal, coincident rows) get zero gradient;
    the sqrt kink there is excluded from gradient checks.
    """
    v = z.value
    sq = (v * v).sum(axis=1)
    s = sq[:, None] + sq[None, :] - 2.0 * (v @ v.T)
    np.maximum(s, 0.0, out=s)
    d = np.sqrt(s)

    def rule(up):
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(d > 0.0, up / (2.0 * d), 0.0)
        h = w + w.T
        return (2.0 * (h.sum(axis=1, keepdims=True) * v - h @ v),)

    return _result(d, (z,), rule, "pairwise_dists")


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Node):
    """Iterative post-order over the subgraph that requires grad."""
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Node) -> dict:
    """Accumulate d(loss)/d(node) into .grad for every reachable requires_grad node.

    Returns a map of leaf parameter nodes to their gradient arrays. Calling
    twice without zero_gradients() accumulates.
    """
    if loss.value.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1,1) loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return {}

    order = _toposort(loss)
    # per-call upstream buffers; leaf accumulation goes through .grad
    upstream = {id(loss): np.ones((1, 1))}
    grads = {}
    for node in reversed(order):
        up = upstream.pop(id(node), None)
        if up is None:
            continue
        if node.grad is None:
            node.grad = up.copy()
        else:
            node.grad = node.grad + up
        if node.backward_rule is None:
            if node.requires_grad:
                grads[node] = node.grad
            continue
        contribs = node.backward_rule(up)
        for parent, contrib in zip(node.parents, contribs):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in upstream:
                upstream[key] = upstream[key] + contrib
            else:
                upstream[key] = contrib
    return grads
