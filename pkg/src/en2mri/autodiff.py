"""Complex tensors with reverse-mode automatic differentiation, plus Adam.

Values are numpy arrays of complex dtype; image-like data uses the layout
(channels, height, width) and scalars are (1, 1, 1) grids.  Gradients follow
the real-pair convention: every complex entry z = x + iy counts as two
independent real parameters, and the gradient array g of a node stores
dL/dx in g.real and dL/dy in g.imag.  With this convention the pullback of
any complex-linear map is its conjugate transpose, which is what the layer
primitives below implement.

Graphs are built eagerly: each op returns a Node that remembers its parent
nodes and a backward closure.  `backward(loss)` walks the graph once in
reverse topological order with a fixed, reproducible visit order.
"""

import contextlib

import numpy as np

from .errors import ContractViolation, NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """A value in the reverse-mode graph.

    grad stays None until backward() reaches the node.  `live` marks nodes
    that can influence some parameter, so backward skips dead branches.
    """

    __slots__ = ("value", "grad", "parents", "_bw", "requires_grad", "live", "tag", "name")

    def __init__(self, value, parents=(), bw=None, requires_grad=False, tag="leaf", name=""):
        self.value = value
        self.grad = None
        self.parents = parents
        self._bw = bw
        self.requires_grad = requires_grad
        self.live = requires_grad or any(p.live for p in parents)
        self.tag = tag
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(np.asarray(self.value).real.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(shape={self.value.shape}, tag={self.tag!r}, requires_grad={self.requires_grad})"


def constant(value, name=""):
    return Node(np.asarray(value), tag="const", name=name)


def param(value, name=""):
    """A learnable leaf; backward() accumulates into its .grad."""
    return Node(np.ascontiguousarray(value), requires_grad=True, tag="param", name=name)


def make_op(value, parents, bw, tag):
    """Record an op node, or collapse to a constant when recording is off
    or no parent can reach a parameter."""
    if not _grad_enabled or not any(p.live for p in parents):
        return Node(value, tag=tag)
    return Node(value, parents=tuple(parents), bw=bw, tag=tag)


def _as_node(x):
    return x if isinstance(x, Node) else constant(x)


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ContractViolation(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- basic ops

def add(a, b):
    a, b = _as_node(a), _as_node(b)
    _check_same_shape(a.value, b.value, "add")
    return make_op(a.value + b.value, (a, b), lambda g: (g.copy(), g.copy()), "add")


def sub(a, b):
    a, b = _as_node(a), _as_node(b)
    _check_same_shape(a.value, b.value, "sub")
    return make_op(a.value - b.value, (a, b), lambda g: (g.copy(), -g), "sub")


def scale(a, c):
    """Multiply by a real scalar constant."""
    a = _as_node(a)
    c = float(c)
    return make_op(a.value * c, (a,), lambda g: (g * c,), "scale")


def sum_all(a):
    """Sum of all entries, as a (1,1,1) scalar node."""
    a = _as_node(a)
    val = np.asarray(a.value.sum(), dtype=a.value.dtype).reshape(1, 1, 1)

    def bw(g):
        return (np.full(a.value.shape, g.reshape(-1)[0], dtype=a.value.dtype),)

    return make_op(val, (a,), bw, "sum")


def dot_real(a, w):
    """Real inner product of the real and imaginary planes of `a` with the
    constant array `w`, as a (1,1,1) scalar node.  Used to reduce an
    arbitrary grid to a differentiable real scalar."""
    a = _as_node(a)
    w = np.asarray(w)
    _check_same_shape(a.value, w, "dot_real")
    val = float(np.sum(a.value.real * w.real + a.value.imag * w.imag))
    out = np.asarray(val, dtype=a.value.dtype).reshape(1, 1, 1)

    def bw(g):
        s = g.reshape(-1)[0].real
        return ((w * s).astype(a.value.dtype),)

    return make_op(out, (a,), bw, "dot_real")


def l1_modulus_mean(a, b):
    """Mean complex modulus of (a - b); subgradient at zero difference is 0."""
    a, b = _as_node(a), _as_node(b)
    _check_same_shape(a.value, b.value, "l1_modulus_mean")
    d = a.value - b.value
    r = np.abs(d)
    n = d.size
    val = np.asarray(r.sum() / n, dtype=d.dtype).reshape(1, 1, 1)

    def bw(g):
        s = g.reshape(-1)[0].real / n
        safe = np.where(r > 0, r, 1.0)
        direction = np.where(r > 0, d / safe, 0)
        da = direction * s
        return (da, -da)

    return make_op(val, (a, b), bw, "l1_modulus_mean")


def l2_modulus_mean(a, b):
    """Mean squared complex modulus of (a - b)."""
    a, b = _as_node(a), _as_node(b)
    _check_same_shape(a.value, b.value, "l2_modulus_mean")
    d = a.value - b.value
    n = d.size
    val = np.asarray(np.sum(d.real * d.real + d.imag * d.imag) / n, dtype=d.dtype).reshape(1, 1, 1)

    def bw(g):
        s = g.reshape(-1)[0].real * (2.0 / n)
        da = d * s
        return (da, -da)

    return make_op(val, (a, b), bw, "l2_modulus_mean")


def tanh_split(a):
    """tanh applied independently to the real and imaginary planes."""
    a = _as_node(a)
    tr = np.tanh(a.value.real)
    ti = np.tanh(a.value.imag)
    out = tr + 1j * ti

    def bw(g):
        return ((1.0 - tr * tr) * g.real + 1j * ((1.0 - ti * ti) * g.imag),)

    return make_op(out.astype(a.value.dtype), (a,), bw, "tanh_split")


def relu_split(a):
    """ReLU applied independently to the real and imaginary planes."""
    a = _as_node(a)
    mr = a.value.real > 0
    mi = a.value.imag > 0
    out = a.value.real * mr + 1j * (a.value.imag * mi)

    def bw(g):
        return (g.real * mr + 1j * (g.imag * mi),)

    return make_op(out.astype(a.value.dtype), (a,), bw, "relu_split")


def concat_channels(a, b):
    a, b = _as_node(a), _as_node(b)
    if a.value.shape[1:] != b.value.shape[1:]:
        raise ContractViolation(
            f"concat_channels: spatial shapes differ {a.value.shape} vs {b.value.shape}")
    ca = a.value.shape[0]
    out = np.concatenate([a.value, b.value], axis=0)

    def bw(g):
        return (g[:ca].copy(), g[ca:].copy())

    return make_op(out, (a, b), bw, "concat_channels")


# ----------------------------------------------------------------- backward

def _toposort(root):
    order = []
    seen = set()
    stack = [(root, iter(root.parents))]
    seen.add(id(root))
    while stack:
        node, it = stack[-1]
        advanced = False
        for p in it:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p.parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def backward(loss):
    """Reverse pass from a scalar-shaped loss node.

    Accumulates real-pair gradients into every reachable node and returns
    the map {parameter node: gradient array} for nodes with requires_grad.
    Raises NumericError naming the op tag if a non-finite gradient shows up.
    """
    if np.asarray(loss.value).shape != (1, 1, 1):
        raise ContractViolation(f"backward: loss must be scalar-shaped (1,1,1), got {loss.value.shape}")
    order = _toposort(loss)
    loss.grad = np.ones((1, 1, 1), dtype=loss.value.dtype)
    for node in reversed(order):
        g = node.grad
        if g is None or not node.parents:
            continue
        contribs = node._bw(g)
        for p, c in zip(node.parents, contribs):
            if not p.live:
                continue
            if not np.all(np.isfinite(c)):
                raise NumericError(f"non-finite gradient produced by rule '{node.tag}'")
            if p.grad is None:
                p.grad = c
            else:
                p.grad = p.grad + c
    return {n: n.grad for n in order if n.requires_grad}


# --------------------------------------------------------------------- Adam

class AdamState:
    """Per-parameter first/second moments over the real-pair view.

    Each complex parameter contributes two real parameters, so the moment
    arrays have twice the complex element count.
    """

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.step_count = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.learning_rate = learning_rate
        self.first_moment = [np.zeros(2 * p.value.size, dtype=p.value.real.dtype) for p in params]
        self.second_moment = [np.zeros(2 * p.value.size, dtype=p.value.real.dtype) for p in params]


def _real_flat(a):
    return np.ascontiguousarray(a).view(a.real.dtype).reshape(-1)


def adam_step(params, grads, state):
    """One Adam update with bias correction, in place on the param values.

    params: list of parameter Nodes; grads: aligned list of complex arrays
    (pass [p.grad for p in params] after backward).
    """
    if len(grads) != len(params) or len(state.first_moment) != len(params):
        raise ContractViolation("adam_step: params/grads/state lengths differ")
    state.step_count += 1
    t = state.step_count
    b1, b2, eps, lr = state.beta1, state.beta2, state.epsilon, state.learning_rate
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p.value)
        if g.shape != p.value.shape:
            raise ContractViolation(
                f"adam_step: gradient shape {g.shape} does not match parameter {p.value.shape}")
        gr = _real_flat(g)
        m *= b1
        m += (1.0 - b1) * gr
        v *= b2
        v += (1.0 - b2) * (gr * gr)
        update = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        pr = p.value.view(p.value.real.dtype).reshape(-1)
        pr -= update
    return params, state


def lr_schedule(epoch, total_epochs, lr_start, lr_end):
    """Exponential decay from lr_start at epoch 0 to lr_end at the last epoch."""
    if total_epochs < 1:
        raise ContractViolation(f"lr_schedule: total_epochs must be >= 1, got {total_epochs}")
    if not 0 <= epoch < total_epochs:
        raise ContractViolation(f"lr_schedule: epoch {epoch} outside [0, {total_epochs})")
    if lr_start == lr_end:
        return lr_start
    if not lr_start >= lr_end > 0:
        raise ContractViolation("lr_schedule: need lr_start >= lr_end > 0")
    if total_epochs == 1:
        return lr_start
    return lr_start * (lr_end / lr_start) ** (epoch / (total_epochs - 1))
