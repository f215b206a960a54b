"""Small float64 tensor core with reverse-accumulation gradients.

Every differentiable quantity in the package is a :class:`Tensor`.  Operations
record their parents and a backward closure; :meth:`Tensor.backward` walks the
graph in reverse topological order.  Arrays follow numpy broadcasting and
matmul batching rules, which is all the attention code needs for batched
``(B, n, d)`` inputs.
"""

from __future__ import annotations

import contextlib
import hashlib
import math

import numpy as np
from scipy import special

__all__ = [
    "NumericalError",
    "Tensor",
    "Rng",
    "as_tensor",
    "matmul",
    "softmax_rows",
    "layernorm",
    "dropout",
    "relu",
    "lgamma",
    "transpose",
    "no_grad",
    "check_gradient",
]


class NumericalError(ArithmeticError):
    """Raised when a computation produces NaN or Inf."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(data, what="tensor"):
    if not np.isfinite(data).all():
        raise NumericalError(f"non-finite value in {what}")


def _unbroadcast(grad, shape):
    # sum out axes that broadcasting created or stretched
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, name or "tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def _result(cls, data, parents, backward):
        _check_finite(data, "operation output")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._result(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._result(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data / b.data

        def bw(g):
            ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._result(out, (a, b), bw)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        x = self
        e = float(exponent)
        out = x.data**e
        return Tensor._result(out, (x,), lambda g: (g * e * x.data ** (e - 1.0),))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    # -- reductions and shape --------------------------------------------
    def sum(self, axis=None, keepdims=False):
        x = self
        out = np.sum(x.data, axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

        return Tensor._result(np.asarray(out), (x,), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x = self
        return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))

    @property
    def T(self):
        return transpose(self)

    def exp(self):
        x = self
        with np.errstate(over="ignore"):
            out = np.exp(x.data)
        return Tensor._result(out, (x,), lambda g: (g * out,))

    def log(self):
        x = self
        if (x.data <= 0).any():
            raise NumericalError("log of a non-positive value")
        return Tensor._result(np.log(x.data), (x,), lambda g: (g / x.data,))

    def sqrt(self):
        x = self
        out = np.sqrt(x.data)
        return Tensor._result(out, (x,), lambda g: (0.5 * g / out,))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def transpose(x, axes=None):
    """Permute axes; default swaps the last two."""
    x = as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def matmul(a, b):
    """Matrix product with numpy batching over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), bw)


def softmax_rows(x, mask=None):
    """Softmax along the last axis.

    ``mask`` is a boolean array broadcastable to ``x``; False entries get
    exactly zero weight.  A row with every entry masked is an error.
    """
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=-1).all():
            raise NumericalError("softmax row with every entry masked")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._result(out, (x,), bw)


def layernorm(x, gain, bias, eps=1e-5):
    """Normalise the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 1:
        raise ValueError("layernorm needs a non-empty last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        gg = _unbroadcast(g * xhat, gain.shape) if gain.requires_grad else None
        gb = _unbroadcast(g, bias.shape) if bias.requires_grad else None
        return gx, gg, gb

    return Tensor._result(out, (x, gain, bias), bw)


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0
    return Tensor._result(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def lgamma(x):
    """Elementwise log-Gamma; derivative is the digamma function."""
    x = as_tensor(x)
    if (x.data <= 0).any():
        raise NumericalError("lgamma needs positive arguments")
    return Tensor._result(special.gammaln(x.data), (x,), lambda g: (g * special.digamma(x.data),))


def dropout(x, p, rng, training):
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = rng.uniform(x.shape) >= p
    return x * (keep / (1.0 - p))


def _stream_key(parent, keys):
    h = hashlib.sha256(repr((parent, tuple(keys))).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


class Rng:
    """Counter-based random source keyed by ``(seed, stream)``.

    A stream is a fixed sequence: drawing twice from the same ``Rng`` returns
    the same numbers.  Call sites derive their own stream with :meth:`child`,
    which makes every draw independent of evaluation order.
    """

    __slots__ = ("seed", "stream")

    def __init__(self, seed, stream=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def __eq__(self, other):
        return isinstance(other, Rng) and (self.seed, self.stream) == (other.seed, other.stream)

    def __hash__(self):
        return hash((self.seed, self.stream))

    def child(self, *keys):
        return Rng(self.seed, _stream_key(self.stream, keys))

    def generator(self):
        """A numpy Generator positioned at draw index 0 of this stream."""
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def uniform(self, shape):
        return self.generator().random(shape)

    def normal(self, shape, scale=1.0):
        return self.generator().normal(0.0, scale, shape)

    def integers(self, low, high, size=None):
        return self.generator().integers(low, high, size=size)

    def permutation(self, n):
        return self.generator().permutation(n)


def check_gradient(f, params, h=1e-5, floor=1e-5):
    """Largest relative gap between backprop and central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor computed from
    ``params``; it must be deterministic (freeze any noise).  The relative
    error of each entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    for p in params:
        p.grad = None
    loss = f()
    if loss.data.size != 1:
        raise ValueError("check_gradient needs a scalar-valued function")
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            num = (up - down) / (2.0 * h)
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericalError("non-finite value during finite differencing")
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
