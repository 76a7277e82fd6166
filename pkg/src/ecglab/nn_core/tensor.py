"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray plus, when gradients are enabled, the closures
needed to pull a cotangent back to its parents. backward() runs an
iterative topological sweep so deep tapes (GRU unrolls) cannot hit the
recursion limit. Gradients accumulate on leaf tensors only.

Matmul and conv1d report 2*MAC flop counts to any active count_flops()
context; everything else is ignored, so the totals match the usual
"multiply-accumulate" accounting for network cost tables.
"""

import numpy as np

from ..errors import ShapeError, StateError
from .. import kernels

_grad_enabled = True
_flop_stack = []


class no_grad:
    """Disable tape construction inside the with-block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class count_flops:
    """Accumulate 2*MAC counts of matmul/conv ops run inside the block."""

    def __enter__(self):
        self.flops = 0
        _flop_stack.append(self)
        return self

    def __exit__(self, *exc):
        _flop_stack.remove(self)
        return False


def _add_flops(n):
    for ctr in _flop_stack:
        ctr.flops += n


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "decay", "_parents",
                 "_vjps", "_consumed")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.decay = False
        self._parents = ()
        self._vjps = ()
        self._consumed = False

    # -- basic introspection ------------------------------------------------

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

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def __len__(self):
        return len(self.data)

    # -- autograd -----------------------------------------------------------

    def backward(self, grad=None):
        if not self.requires_grad:
            raise StateError("backward() on a tensor that does not require grad")
        if self._consumed:
            raise StateError("backward() called twice on the same graph; run a new forward pass first")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(f"gradient shape {grad.shape} != output {self.data.shape}")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, vjp in zip(node._parents, node._vjps):
                if not p.requires_grad:
                    continue
                contrib = vjp(g)
                held = grads.get(id(p))
                grads[id(p)] = contrib if held is None else held + contrib

        # Release the tape: intermediates are single-use, and a repeat
        # backward over freed closures would silently return garbage.
        for node in topo:
            if node._parents:
                node._parents = ()
                node._vjps = ()
                node._consumed = True

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            y = self.data + other.data
            return _make(y, [(self, lambda g, s=self.data.shape: _unbroadcast(g, s)),
                             (other, lambda g, s=other.data.shape: _unbroadcast(g, s))])
        y = self.data + other
        return _make(y, [(self, lambda g, s=self.data.shape: _unbroadcast(g, s))])

    __radd__ = __add__

    def __neg__(self):
        return _make(-self.data, [(self, lambda g: -g)])

    def __sub__(self, other):
        if isinstance(other, Tensor):
            y = self.data - other.data
            return _make(y, [(self, lambda g, s=self.data.shape: _unbroadcast(g, s)),
                             (other, lambda g, s=other.data.shape: _unbroadcast(-g, s))])
        y = self.data - other
        return _make(y, [(self, lambda g, s=self.data.shape: _unbroadcast(g, s))])

    def __rsub__(self, other):
        y = other - self.data
        return _make(y, [(self, lambda g, s=self.data.shape: _unbroadcast(-g, s))])

    def __mul__(self, other):
        if isinstance(other, Tensor):
            y = self.data * other.data
            return _make(y, [
                (self, lambda g, o=other.data, s=self.data.shape: _unbroadcast(g * o, s)),
                (other, lambda g, o=self.data, s=other.data.shape: _unbroadcast(g * o, s)),
            ])
        y = self.data * other
        return _make(y, [(self, lambda g, s=self.data.shape: _unbroadcast(g * other, s))])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self ** -1.0 * other

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise ShapeError("tensor exponents are not supported")
        y = self.data ** exponent
        x = self.data
        return _make(y, [(self, lambda g: g * exponent * x ** (exponent - 1))])

    def __matmul__(self, other):
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul operands must be at least 2D")
        y = a @ b
        _add_flops(2 * y.size * a.shape[-1])
        return _make(y, [
            (self, lambda g: _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)),
            (other, lambda g: _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)),
        ])

    # -- elementwise nonlinearities ------------------------------------------

    def exp(self):
        y = np.exp(self.data)
        return _make(y, [(self, lambda g: g * y)])

    def log(self):
        x = self.data
        return _make(np.log(x), [(self, lambda g: g / x)])

    def sqrt(self):
        y = np.sqrt(self.data)
        return _make(y, [(self, lambda g: g / (2 * y))])

    def tanh(self):
        y = np.tanh(self.data)
        return _make(y, [(self, lambda g: g * (1 - y * y))])

    def sigmoid(self):
        y = 0.5 * (np.tanh(0.5 * self.data) + 1.0)
        return _make(y, [(self, lambda g: g * y * (1 - y))])

    def relu(self):
        x = self.data
        y = np.maximum(x, 0)
        return _make(y, [(self, lambda g: g * (x > 0))])

    def silu(self):
        x = self.data
        s = 0.5 * (np.tanh(0.5 * x) + 1.0)
        return _make(x * s, [(self, lambda g: g * s * (1 + x * (1 - s)))])

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        y = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape
        axes = _axis_tuple(axis, self.data.ndim)

        def vjp(g):
            if not keepdims and axes:
                g = np.expand_dims(g, axes)
            return np.broadcast_to(g, shape)

        return _make(y, [(self, vjp)])

    def mean(self, axis=None, keepdims=False):
        axes = _axis_tuple(axis, self.data.ndim)
        count = 1
        for a in axes:
            count *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return _make(self.data.reshape(shape), [(self, lambda g: g.reshape(old))])

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return _make(self.data.transpose(axes), [(self, lambda g: g.transpose(inv))])

    def __getitem__(self, key):
        y = self.data[key]
        shape = self.data.shape
        dtype = self.data.dtype

        def vjp(g):
            gx = np.zeros(shape, dtype=dtype)
            np.add.at(gx, key, g)
            return gx

        return _make(y, [(self, vjp)])

    def upsample2(self):
        """Nearest-neighbour x2 along the last axis."""
        y = np.repeat(self.data, 2, axis=-1)
        n = self.data.shape[-1]

        def vjp(g):
            return g.reshape(*g.shape[:-1], n, 2).sum(axis=-1)

        return _make(y, [(self, vjp)])

    # -- fused softmax family --------------------------------------------------

    def softmax(self, axis=-1):
        x = self.data
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=axis, keepdims=True)

        def vjp(g):
            return s * (g - (g * s).sum(axis=axis, keepdims=True))

        return _make(s, [(self, vjp)])

    def log_softmax(self, axis=-1):
        x = self.data
        z = x - x.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
        ls = z - lse

        def vjp(g):
            return g - np.exp(ls) * g.sum(axis=axis, keepdims=True)

        return _make(ls, [(self, vjp)])


def _make(data, parent_vjps, name=None):
    out = Tensor(data, name=name)
    if _grad_enabled:
        live = [(p, v) for p, v in parent_vjps if p.requires_grad]
        if live:
            out.requires_grad = True
            out._parents = tuple(p for p, _ in live)
            out._vjps = tuple(v for _, v in live)
    return out


def cat(tensors, axis=0):
    """Concatenate tensors along an axis."""
    if not tensors:
        raise ShapeError("cat() needs at least one tensor")
    axis = axis % tensors[0].data.ndim
    y = np.concatenate([t.data for t in tensors], axis=axis)
    parents = []
    off = 0
    for t in tensors:
        n = t.data.shape[axis]
        sl = [slice(None)] * y.ndim
        sl[axis] = slice(off, off + n)
        parents.append((t, lambda g, sl=tuple(sl): g[sl]))
        off += n
    return _make(y, parents)


def conv1d(x, w, b, stride=1, dilation=1):
    """Same-padded 1D convolution with bias, differentiable in x, w, b."""
    xd, wd = x.data, w.data
    y = kernels.conv1d_forward(xd, wd, b.data, stride, dilation)
    _add_flops(2 * y.size * wd.shape[1] * wd.shape[2])
    return _make(y, [
        (x, lambda g: kernels.conv1d_backward_input(g, wd, xd.shape, stride, dilation)),
        (w, lambda g: kernels.conv1d_backward_weight(g, xd, wd.shape, stride, dilation)[0]),
        (b, lambda g: g.sum(axis=(0, 2))),
    ])


def cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels under row-wise softmax."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (B, classes) logits, got {logits.shape}")
    if isinstance(labels, Tensor):
        labels = labels.data
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    ls = logits.log_softmax(axis=1)
    picked = ls[np.arange(logits.shape[0]), labels]
    return -picked.mean()
