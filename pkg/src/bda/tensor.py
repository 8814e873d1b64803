"""Dense channels-first tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record their parents and a local backward rule; :func:`backward`
orders the recorded graph into a :class:`Tape` and runs it in reverse.

Feature maps are ``C x H x W`` or ``N x C x H x W``. Elementwise binary ops
accept equal shapes plus three broadcast forms only: a python scalar, a
spatial gate (channel extent 1) and a channel gate (spatial extents 1).
"""

import numpy as np

# gradcheck tolerances per precision
GRADCHECK_TOL = {np.dtype(np.float64): 1e-4, np.dtype(np.float32): 5e-2}


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _result(data, parents, backward, op):
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out.op = op
    return out


# -- broadcasting -----------------------------------------------------------

def _broadcast_shape(sa, sb):
    if sa == sb:
        return sa
    big, small = (sa, sb) if len(sa) >= len(sb) and np.prod(sa) >= np.prod(sb) else (sb, sa)
    if len(big) == len(small) and len(big) >= 3:
        lead_ok = big[:-3] == small[:-3]
        spatial_gate = small[-3] == 1 and small[-2:] == big[-2:]
        channel_gate = small[-3] == big[-3] and small[-2:] == (1, 1)
        if lead_ok and (spatial_gate or channel_gate):
            return big
    raise ShapeError(
        f"shapes {tuple(sa)} and {tuple(sb)} are not equal and not a spatial or channel gate pair"
    )


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


# -- elementwise ------------------------------------------------------------

def add(a, b):
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        a, b = b, a
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return _add_scalar(as_tensor(a), float(b))
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def _add_scalar(a, c):
    return _result(a.data + c, (a,), lambda g: (g,), "add_scalar")


def neg(a):
    return scale(a, -1.0)


def sub(a, b):
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return _add_scalar(as_tensor(a), -float(b))
    return add(a, neg(as_tensor(b)))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def mul(a, b):
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, b)
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return scale(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def sigmoid(x):
    x = as_tensor(x)
    # tanh form never overflows and gives sigmoid(0) == 0.5 exactly
    s = 0.5 + 0.5 * np.tanh(0.5 * x.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _result(s, (x,), backward, "sigmoid")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), backward, "relu")


def softmax_channels(x):
    """Softmax over the channel axis (``-3``), max-subtracted."""
    x = as_tensor(x)
    if x.ndim < 3 or x.shape[-3] < 2:
        raise ShapeError(f"softmax_channels needs >= 2 channels, got shape {x.shape}")
    z = x.data - x.data.max(axis=-3, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-3, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-3, keepdims=True)),)

    return _result(p, (x,), backward, "softmax")


# -- structural -------------------------------------------------------------

def concat_channels(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.ndim < 3 or a.shape[:-3] != b.shape[:-3] or a.shape[-2:] != b.shape[-2:]:
        raise ShapeError(f"cannot concatenate channels of {a.shape} and {b.shape}")
    ca = a.shape[-3]

    def backward(g):
        return g[..., :ca, :, :], g[..., ca:, :, :]

    return _result(np.concatenate([a.data, b.data], axis=-3), (a, b), backward, "concat")


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def tsum(x):
    x = as_tensor(x)
    shape, dt = x.shape, x.dtype
    return _result(np.asarray(x.data.sum(), dtype=dt), (x,), lambda g: (np.full(shape, g, dtype=dt),), "sum")


def mean(x):
    x = as_tensor(x)
    shape, dt, n = x.shape, x.dtype, x.size
    return _result(
        np.asarray(x.data.mean(), dtype=dt), (x,), lambda g: (np.full(shape, g / n, dtype=dt),), "mean"
    )


# -- reverse pass -----------------------------------------------------------

class Tape:
    """Operations reachable from a scalar loss, in topological order."""

    def __init__(self, loss):
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.loss = loss
        self.nodes = _toposort(loss)

    def __len__(self):
        return len(self.nodes)

    def backward(self):
        """Return ``{leaf: grad}`` for every reachable leaf with ``requires_grad``.

        Gradients are recomputed from scratch each call and also stored on
        ``leaf.grad``.
        """
        grads = {id(self.loss): np.ones_like(self.loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                leaves[node] = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for leaf, g in leaves.items():
            leaf.grad = g
        return leaves


def _toposort(root):
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
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring gradients")
    return Tape(loss).backward()


# -- finite differences ---------------------------------------------------

def finite_diff_gradient(f, x, step=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``f`` receives a fresh :class:`Tensor` per evaluation; ``x`` may be a
    Tensor or array and is not modified.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = np.array(as_tensor(x).data, dtype=np.float64)
    grad = np.empty_like(base)
    flat, gflat = base.reshape(-1), grad.reshape(-1)

    def value(arr):
        out = f(Tensor(arr))
        return float(out.data) if isinstance(out, Tensor) else float(out)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = value(base.copy())
        flat[i] = orig - step
        fm = value(base.copy())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def max_rel_error(analytic, numeric):
    """max |g_a - g_fd| / max(1, |g_a|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)), initial=0.0))


def gradcheck(f, inputs, step=1e-5):
    """Compare :func:`backward` with central differences for each input.

    ``f`` maps the list of input tensors to a scalar tensor. Returns the
    worst relative error over all inputs.
    """
    inputs = [Tensor(np.array(t.data if isinstance(t, Tensor) else t, dtype=np.float64), requires_grad=True)
              for t in inputs]
    grads = backward(f(*inputs))
    worst = 0.0
    for i, t in enumerate(inputs):
        ga = grads.get(t, np.zeros_like(t.data))
        if ga.shape != t.shape:
            raise ShapeError(f"input {i}: gradient shape {ga.shape} != input shape {t.shape}")

        def fi(xi, i=i):
            args = [Tensor(u.data) for u in inputs]
            args[i] = xi
            return f(*args)

        worst = max(worst, max_rel_error(ga, finite_diff_gradient(fi, t.data, step)))
    return worst
