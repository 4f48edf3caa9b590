"""Small dense reverse-mode differentiation engine on top of numpy.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Calling
:meth:`Tensor.backward` on a scalar walks that tape once in reverse
topological order and then frees it.
"""

from __future__ import annotations

import contextlib
import contextvars
import math

import numpy as np

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a tape (inference)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class GraphError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_freed", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._freed = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def values(self):
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        """Populate ``.grad`` of every leaf reachable from this scalar.

        Leaf gradients accumulate into any existing ``.grad``; the recorded
        graph is released afterwards, so a second call raises.
        """
        if self._freed:
            raise GraphError("backward called twice on the same graph; run a new forward pass")
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar, got shape {self.shape}")
        if self._backward is None:
            raise GraphError("tensor was not produced by a recorded operation")

        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if g is not None and node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
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
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._freed = True


def _topo_order(root):
    order, seen = [], set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._freed = False
    out.requires_grad = _grad_enabled.get() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward)


def scale(a, c):
    c = float(c)

    def backward(g):
        return (g * c,)

    return _make(a.data * a.data.dtype.type(c), (a,), backward)


def relu(a):
    keep = a.data > 0

    def backward(g):
        return (g * keep,)

    return _make(a.data * keep, (a,), backward)


def dropout(a, p, rng=None, train=True):
    """Inverted dropout: zero with probability ``p`` and rescale survivors."""
    if not train or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    draw_dtype = np.float32 if a.dtype == np.float32 else np.float64
    keep = (rng.random(a.shape, dtype=draw_dtype) >= p) * a.dtype.type(1.0 / (1.0 - p))

    def backward(g):
        return (g * keep,)

    return _make(a.data * keep, (a,), backward)


def sum_all(a):
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward)


# --- shape ops -------------------------------------------------------------

def reshape(a, shape):
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None

    def backward(g):
        return (g.reshape(old),)

    return _make(data, (a,), backward)


def permute(a, axes):
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return _make(a.data.transpose(axes), (a,), backward)


def transpose_last_two(a):
    if a.data.ndim < 2:
        raise ShapeError(f"transpose_last_two needs ndim >= 2, got shape {a.shape}")

    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(np.swapaxes(a.data, -1, -2), (a,), backward)


def concat_last_dim(tensors):
    tensors = [as_tensor(t) for t in tensors]
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat: leading dims differ, {tensors[0].shape} and {t.shape}")
    cuts = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=-1))

    return _make(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), backward)


# --- linear algebra --------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        if bd.ndim == 2:
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return _unbroadcast(ga, ad.shape), gb
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` recorded as a single node."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out += bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def embedding_lookup(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ShapeError(f"embedding_lookup: ids outside [0, {vocab})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (gt,)

    return _make(table.data[ids], (table,), backward)


# --- normalisation ---------------------------------------------------------

def layer_norm(x, gamma=None, beta=None, eps=1e-5):
    """Normalise over the last dimension, then apply the optional affine."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    n = xd.shape[-1]

    def backward(g):
        gx_hat = g * gamma.data if gamma is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        g2 = g.reshape(-1, n)
        if gamma is not None:
            grads.append((g2 * xhat.reshape(-1, n)).sum(axis=0))
        if beta is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x,) + tuple(t for t in (gamma, beta) if t is not None)
    return _make(out.astype(xd.dtype, copy=False), parents, backward)


def softmax(x, mask=None):
    """Softmax over the last axis.

    ``mask`` is a boolean array broadcastable to ``x`` where True marks an
    allowed position.  Masked entries get probability 0; a row with no
    allowed entry comes out as all zeros.
    """
    xd = x.data
    if mask is None:
        z = xd - xd.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
    else:
        mask = np.broadcast_to(mask, xd.shape)
        z = np.where(mask, xd, -np.inf)
        m = z.max(axis=-1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.exp(z - m)
        s = e.sum(axis=-1, keepdims=True)
        p = np.divide(e, s, out=np.zeros_like(e), where=s > 0)
    p = p.astype(xd.dtype, copy=False)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), backward)


def log_softmax_np(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets, ignore_id=None):
    """Mean negative log-likelihood over positions whose target is not ``ignore_id``."""
    targets = np.asarray(targets, dtype=np.int64)
    ld = logits.data
    if ld.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {ld.shape} vs targets {targets.shape}")
    vocab = ld.shape[-1]
    flat_t = targets.reshape(-1)
    keep = np.ones_like(flat_t, dtype=bool) if ignore_id is None else flat_t != ignore_id
    count = int(keep.sum())
    if count == 0:
        raise ValueError("cross_entropy: every position is ignored")
    if flat_t[keep].max() >= vocab or flat_t[keep].min() < 0:
        raise ShapeError(f"cross_entropy: target id outside [0, {vocab})")
    flat_l = ld.reshape(-1, vocab)
    logp = log_softmax_np(flat_l)
    rows = np.nonzero(keep)[0]
    loss = -logp[rows, flat_t[rows]].sum() / count

    def backward(g):
        grad = np.exp(logp)
        grad[rows, flat_t[rows]] -= 1.0
        grad *= keep[:, None] * (g / count)
        return (grad.reshape(ld.shape).astype(ld.dtype, copy=False),)

    return _make(np.asarray(loss, dtype=ld.dtype), (logits,), backward)


# --- optimisation ----------------------------------------------------------

def clip_grad_norm(params, max_norm=1.0):
    """Rescale gradients so their global L2 norm is at most ``max_norm``; return the scale."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if total <= max_norm or total == 0.0:
        return 1.0
    s = max_norm / total
    for p in params:
        if p.grad is not None:
            p.grad *= p.grad.dtype.type(s)
    return s


class Adam:
    """Bias-corrected Adam with a constant learning rate."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise DivergenceError(f"non-finite gradient in parameter {p.name or '?'}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g if p.grad is not None else 0.0)
            step = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= step.astype(p.data.dtype, copy=False)
