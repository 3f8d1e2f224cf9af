"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: every operation records a node in an acyclic graph, and
``backward`` walks the graph in reverse topological order. Graphs are
rebuilt each step and confined to a single thread; distinct graphs may
run concurrently.

Everything is double precision. Gradient checks at 1e-6 relative
tolerance are not reliable in single precision.
"""

import numpy as np

# Additive mask sentinel standing in for -inf in pre-softmax scores.
NEG_INF = -1e9

# Epsilon inside the layer-normalization square root.
LAYER_NORM_EPS = 1e-5


class Node:
    """One vertex of the computation graph.

    value     : float64 ndarray (shape () allowed for scalars)
    op        : operation tag, "leaf"/"const" for inputs
    parents   : upstream nodes
    grad      : accumulated gradient, same shape as value, lazily allocated
    trainable : True for leaves the optimizer may update
    """

    __slots__ = ("value", "op", "parents", "grad", "trainable",
                 "requires_grad", "_backward")

    def __init__(self, value, op, parents=(), trainable=False):
        self.value = value
        self.op = op
        self.parents = parents
        self.grad = None
        self.trainable = trainable
        self.requires_grad = trainable or any(p.requires_grad for p in parents)
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # Operator sugar; scalars and arrays are wrapped as constants.
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

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _coerce(value, what):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {what}")
    return arr


def leaf(value):
    """Trainable input node."""
    return Node(_coerce(value, "leaf"), "leaf", trainable=True)


def const(value):
    """Non-trainable input node."""
    return Node(_coerce(value, "const"), "const")


def _as_node(x):
    if isinstance(x, Node):
        return x
    return const(x)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


def _accum(node, g, own=False):
    """Add a gradient contribution.

    own=True promises g is a freshly allocated array no one else holds,
    so it can be stored without copying. Borrowed buffers (a consumer's
    own grad passed through, or views of it) are stored by reference
    only for non-trainable intermediates whose buffers are never
    mutated afterwards; trainable leaves always get a private copy
    because the optimizer mutates gradients in place.
    """
    if node.grad is None:
        if g.shape != node.value.shape:
            node.grad = np.array(np.broadcast_to(g, node.value.shape))
        elif own or not node.trainable:
            node.grad = g
        else:
            node.grad = np.array(g)
    else:
        # Diamond joins reallocate rather than mutate: the stored buffer
        # may be borrowed from a consumer.
        node.grad = node.grad + g


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a.value, b.value, "add")
    out = Node(a.value + b.value, "add", (a, b))

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.value.shape)
            _accum(a, ga, own=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.value.shape)
            _accum(b, gb, own=gb is not g)

    out._backward = backward
    return out


def sub(a, b):
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a.value, b.value, "sub")
    out = Node(a.value - b.value, "sub", (a, b))

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.value.shape)
            _accum(a, ga, own=ga is not g)
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.value.shape), own=True)

    out._backward = backward
    return out


def neg(a):
    a = _as_node(a)
    out = Node(-a.value, "neg", (a,))

    def backward(g):
        if a.requires_grad:
            _accum(a, -g, own=True)

    out._backward = backward
    return out


def mul(a, b):
    """Elementwise product (scalar or leading-batch broadcasting)."""
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a.value, b.value, "mul")
    out = Node(a.value * b.value, "mul", (a, b))

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.value, a.value.shape), own=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.value, b.value.shape), own=True)

    out._backward = backward
    return out


def div(a, b):
    """Divide by a scalar (python number or scalar node)."""
    a, b = _as_node(a), _as_node(b)
    if b.value.size != 1:
        raise ValueError(f"div: denominator must be scalar, got shape {b.value.shape}")
    out = Node(a.value / b.value, "div", (a, b))

    def backward(g):
        if a.requires_grad:
            _accum(a, g / b.value, own=True)
        if b.requires_grad:
            gb = np.sum(g * (-a.value / (b.value ** 2)))
            _accum(b, np.asarray(gb).reshape(b.value.shape), own=True)

    out._backward = backward
    return out


def matmul(a, b):
    """Matrix product. Operands must be at least 2-D; leading batch
    dimensions broadcast as in numpy."""
    a, b = _as_node(a), _as_node(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError(
            f"matmul: operands must be >= 2-D, got {a.value.shape} and {b.value.shape}")
    try:
        value = a.value @ b.value
    except ValueError:
        raise ValueError(
            f"matmul: incompatible shapes {a.value.shape} and {b.value.shape}") from None
    out = Node(value, "matmul", (a, b))

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.value, -1, -2)
            _accum(a, _unbroadcast(ga, a.value.shape), own=True)
        if b.requires_grad:
            if b.value.ndim == 2 and g.ndim > 2:
                # Shared right operand under batched inputs: fold the
                # batch axes into one GEMM instead of materializing a
                # per-batch weight gradient.
                gb = (a.value.reshape(-1, a.value.shape[-1]).T
                      @ g.reshape(-1, g.shape[-1]))
            else:
                gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape)
            _accum(b, gb, own=True)

    out._backward = backward
    return out


def transpose(a, axes=None):
    """Permute axes (numpy semantics: default reverses them)."""
    a = _as_node(a)
    if axes is None:
        axes = tuple(reversed(range(a.value.ndim)))
    axes = tuple(axes)
    out = Node(np.transpose(a.value, axes), "transpose", (a,))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            _accum(a, np.transpose(g, inverse))

    out._backward = backward
    return out


def reshape(a, shape):
    a = _as_node(a)
    out = Node(a.value.reshape(shape), "reshape", (a,))

    def backward(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.value.shape))

    out._backward = backward
    return out


def concat(nodes, axis=0):
    nodes = [_as_node(n) for n in nodes]
    if not nodes:
        raise ValueError("concat: empty input list")
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), "concat", tuple(nodes))
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if n.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(n, g[tuple(idx)])

    out._backward = backward
    return out


def relu(a):
    """max(x, 0); subgradient at exactly 0 is 0."""
    a = _as_node(a)
    out = Node(np.maximum(a.value, 0.0), "relu", (a,))

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (a.value > 0.0), own=True)

    out._backward = backward
    return out


def exp(a):
    a = _as_node(a)
    value = np.exp(a.value)
    out = Node(value, "exp", (a,))

    def backward(g):
        if a.requires_grad:
            _accum(a, g * value, own=True)

    out._backward = backward
    return out


def log(a):
    a = _as_node(a)
    if np.any(a.value <= 0.0):
        raise ValueError("log: non-positive input")
    out = Node(np.log(a.value), "log", (a,))

    def backward(g):
        if a.requires_grad:
            _accum(a, g / a.value, own=True)

    out._backward = backward
    return out


def sqrt(a):
    a = _as_node(a)
    if np.any(a.value < 0.0):
        raise ValueError("sqrt: negative input")
    value = np.sqrt(a.value)
    out = Node(value, "sqrt", (a,))

    def backward(g):
        if a.requires_grad:
            _accum(a, g * 0.5 / value, own=True)

    out._backward = backward
    return out


def sin(a):
    a = _as_node(a)
    out = Node(np.sin(a.value), "sin", (a,))

    def backward(g):
        if a.requires_grad:
            _accum(a, g * np.cos(a.value), own=True)

    out._backward = backward
    return out


def cos(a):
    a = _as_node(a)
    out = Node(np.cos(a.value), "cos", (a,))

    def backward(g):
        if a.requires_grad:
            _accum(a, g * -np.sin(a.value), own=True)

    out._backward = backward
    return out


def _expand_reduced(g, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, in_shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(in_shape) for ax in axes)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, in_shape)


def sum_(a, axis=None, keepdims=False):
    a = _as_node(a)
    out = Node(np.sum(a.value, axis=axis, keepdims=keepdims), "sum", (a,))

    def backward(g):
        if a.requires_grad:
            _accum(a, _expand_reduced(g, a.value.shape, axis, keepdims))

    out._backward = backward
    return out


def mean(a, axis=None, keepdims=False):
    a = _as_node(a)
    out = Node(np.mean(a.value, axis=axis, keepdims=keepdims), "mean", (a,))
    count = a.value.size / max(out.value.size, 1)

    def backward(g):
        if a.requires_grad:
            g = _expand_reduced(g, a.value.shape, axis, keepdims)
            _accum(a, g / count, own=True)

    out._backward = backward
    return out


def sumsq(a, axis=None, keepdims=False):
    """Squared L2 norm: sum of squared entries over the given axes."""
    a = _as_node(a)
    out = Node(np.sum(a.value ** 2, axis=axis, keepdims=keepdims), "sumsq", (a,))

    def backward(g):
        if a.requires_grad:
            g = _expand_reduced(g, a.value.shape, axis, keepdims)
            _accum(a, 2.0 * a.value * g, own=True)

    out._backward = backward
    return out


def amax(a):
    """Maximum over all entries; gradient routes to the first occurrence
    (valid subgradient, and exact wherever the tied entries are identical
    functions of the inputs, e.g. symmetric distance matrices)."""
    a = _as_node(a)
    out = Node(np.asarray(np.max(a.value)), "amax", (a,))
    argmax = np.unravel_index(np.argmax(a.value), a.value.shape)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            full[argmax] = g
            _accum(a, full, own=True)

    out._backward = backward
    return out


def masked_softmax(scores, mask):
    """Softmax over the last axis with an additive mask.

    Mask entries are 0 (visible) or a negative sentinel such as NEG_INF
    (masked). Masked positions get exactly zero weight; each row
    normalizes over its visible entries only. The mask is a constant
    array, not a differentiable input; its shape must broadcast against
    the scores.
    """
    scores = _as_node(scores)
    mask = np.asarray(mask, dtype=np.float64)
    _check_broadcast(scores.value, mask, "masked_softmax")
    masked = np.broadcast_to(mask < 0.0, scores.value.shape)
    if np.any(np.all(masked, axis=-1)):
        raise ValueError("masked_softmax: fully masked row")
    shifted = np.where(masked, -np.inf, scores.value)
    shifted = shifted - np.max(shifted, axis=-1, keepdims=True)
    e = np.where(masked, 0.0, np.exp(shifted))
    weights = e / np.sum(e, axis=-1, keepdims=True)
    out = Node(weights, "masked_softmax", (scores,))

    def backward(g):
        if scores.requires_grad:
            inner = np.sum(g * weights, axis=-1, keepdims=True)
            _accum(scores, weights * (g - inner), own=True)

    out._backward = backward
    return out


def layer_norm(x, gamma, beta, eps=LAYER_NORM_EPS):
    """Normalize the last axis to zero mean / unit variance, then apply
    the affine pair (gamma, beta)."""
    x, gamma, beta = _as_node(x), _as_node(gamma), _as_node(beta)
    mu = np.mean(x.value, axis=-1, keepdims=True)
    xc = x.value - mu
    var = np.mean(xc ** 2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Node(gamma.value * y + beta.value, "layer_norm", (x, gamma, beta))

    def backward(g):
        if beta.requires_grad:
            gb = _unbroadcast(g, beta.value.shape)
            _accum(beta, gb, own=gb is not g)
        if gamma.requires_grad:
            _accum(gamma, _unbroadcast(g * y, gamma.value.shape), own=True)
        if x.requires_grad:
            gy = g * gamma.value
            m1 = np.mean(gy, axis=-1, keepdims=True)
            m2 = np.mean(gy * y, axis=-1, keepdims=True)
            _accum(x, inv * (gy - m1 - y * m2), own=True)

    out._backward = backward
    return out


def normalized(x, eps=LAYER_NORM_EPS):
    """Layer normalization without the affine pair (for property checks)."""
    d = x.shape[-1] if isinstance(x, Node) else np.asarray(x).shape[-1]
    return layer_norm(x, np.ones(d), np.zeros(d), eps=eps)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _topo_order(root):
    order = []
    seen = set()
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root, params=None):
    """Reverse-mode sweep from a scalar root.

    Returns a dict mapping each requested trainable leaf to its gradient
    array; leaves not reachable from the root get zeros. With
    params=None the map covers every trainable leaf found in the graph.
    """
    if root.value.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.value.shape}")
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.requires_grad:
            node._backward(node.grad)
    if params is None:
        params = [n for n in order if n.trainable]
    return {p: (p.grad if p.grad is not None else np.zeros_like(p.value))
            for p in params}


def grad_check(build, leaves, eps=1e-6, skip_below=0.0):
    """Compare analytic gradients against central finite differences.

    build      : callable taking a list of Nodes and returning a scalar Node
    leaves     : list of float64 arrays, the leaf values
    eps        : finite-difference step
    skip_below : entries with |analytic| + |numeric| under this are skipped
                 (exact-zero or masked positions)

    Returns the worst relative error over all leaf entries.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    leaves = [np.asarray(v, dtype=np.float64) for v in leaves]
    nodes = [leaf(v) for v in leaves]
    root = build(nodes)
    if root.value.size != 1:
        raise ValueError(f"grad_check: graph must be scalar, got shape {root.value.shape}")
    grads = backward(root, nodes)

    def eval_at(values):
        return float(build([const(v) for v in values]).value)

    worst = 0.0
    for i, base in enumerate(leaves):
        analytic = grads[nodes[i]]
        flat = base.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            plus = [v.copy() for v in leaves]
            plus[i].reshape(-1)[j] = orig + eps
            minus = [v.copy() for v in leaves]
            minus[i].reshape(-1)[j] = orig - eps
            numeric = (eval_at(plus) - eval_at(minus)) / (2.0 * eps)
            a = analytic.reshape(-1)[j]
            scale = abs(a) + abs(numeric)
            if scale < skip_below:
                continue
            worst = max(worst, abs(a - numeric) / max(scale, 1e-8))
    return worst
