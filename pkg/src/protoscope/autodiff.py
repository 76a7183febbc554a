"""Reverse-mode automatic differentiation over float64 numpy arrays.

Design constraints, deliberately strict:

* every Tensor holds a C-contiguous float64 array; integers and float32
  inputs are converted on construction
* binary elementwise ops require identical shapes, or a true scalar on
  one side; there is no implicit broadcasting beyond scalar-tensor, use
  ``repeat`` to expand a size-1 axis explicitly
* every op validates its output with an elementwise finite check and
  raises NumericFault naming itself if the check fails, so divergence
  is attributable to a concrete operation
* ``backward`` only accepts a scalar root

The graph is built eagerly: each op records its parents and a closure
that routes the output gradient to them. Graph recording is skipped
when no parent requires a gradient or inside ``no_grad()``, which makes
inference allocation-free apart from the forward values.
"""

import contextlib

import numpy as np

from .errors import ContractViolation, DomainError, NumericFault
from .special import digamma as _digamma_fn
from .special import lngamma as _lngamma_fn
from .special import trigamma as _trigamma_fn

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _finite_or_raise(values, op):
    if not np.all(np.isfinite(values)):
        raise NumericFault(op)


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, values, requires_grad=False, _parents=(), _op="leaf"):
        v = np.asarray(values, dtype=np.float64)
        if not v.flags.c_contiguous:
            v = np.ascontiguousarray(v)
        self.values = v
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = None
        self.op = _op

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        if self.values.size != 1:
            raise ContractViolation("item() requires a single-element tensor")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def backward(self):
        if self.values.size != 1:
            raise ContractViolation("backward root must be a scalar tensor")
        _finite_or_raise(self.values, self.op)

        # Iterative topological order; recursion depth is unbounded in
        # long training graphs.
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.values)
        for node in reversed(topo):
            if node.grad is None:
                continue
            if not np.all(np.isfinite(node.grad)):
                raise NumericFault(node.op, "gradient")
            if node._backward is not None:
                node._backward(node.grad)

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _wrap(other):
        if isinstance(other, Tensor):
            return other
        if isinstance(other, (int, float, np.integer, np.floating, np.ndarray)):
            return Tensor(other)
        raise ContractViolation(f"cannot operate on {type(other).__name__}")

    # -- dunders -------------------------------------------------------------

    def __add__(self, other):
        return add(self, Tensor._wrap(other))

    def __radd__(self, other):
        return add(Tensor._wrap(other), self)

    def __sub__(self, other):
        return sub(self, Tensor._wrap(other))

    def __rsub__(self, other):
        return sub(Tensor._wrap(other), self)

    def __mul__(self, other):
        return mul(self, Tensor._wrap(other))

    def __rmul__(self, other):
        return mul(Tensor._wrap(other), self)

    def __truediv__(self, other):
        return div(self, Tensor._wrap(other))

    def __rtruediv__(self, other):
        return div(Tensor._wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, op={self.op!r})"


def _node(values, parents, op, backward):
    _finite_or_raise(values, op)
    track = _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=track,
                 _parents=parents if track else (), _op=op)
    if track:
        out._backward = backward(out)
    return out


def _binary_shapes(a, b, op):
    if a.values.shape == b.values.shape:
        return "same"
    if a.values.ndim == 0:
        return "a_scalar"
    if b.values.ndim == 0:
        return "b_scalar"
    raise ContractViolation(
        f"{op}: shapes {a.values.shape} and {b.values.shape} differ and "
        "neither is a scalar; use repeat() to expand explicitly")


def _reduce_to(g, target):
    # Gradient of a scalar operand of a scalar-tensor op.
    if target.values.ndim == 0:
        return np.asarray(g.sum())
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b):
    _binary_shapes(a, b, "add")

    def backward(out):
        def run(g):
            a._accumulate(_reduce_to(g, a))
            b._accumulate(_reduce_to(g, b))
        return run

    return _node(a.values + b.values, (a, b), "add", backward)


def sub(a, b):
    _binary_shapes(a, b, "sub")

    def backward(out):
        def run(g):
            a._accumulate(_reduce_to(g, a))
            b._accumulate(_reduce_to(-g, b))
        return run

    return _node(a.values - b.values, (a, b), "sub", backward)


def mul(a, b):
    _binary_shapes(a, b, "mul")

    def backward(out):
        def run(g):
            a._accumulate(_reduce_to(g * b.values, a))
            b._accumulate(_reduce_to(g * a.values, b))
        return run

    return _node(a.values * b.values, (a, b), "mul", backward)


def div(a, b):
    _binary_shapes(a, b, "div")

    def backward(out):
        def run(g):
            a._accumulate(_reduce_to(g / b.values, a))
            b._accumulate(_reduce_to(-g * a.values / (b.values * b.values), b))
        return run

    return _node(a.values / b.values, (a, b), "div", backward)


def neg(a):
    def backward(out):
        def run(g):
            a._accumulate(-g)
        return run

    return _node(-a.values, (a,), "neg", backward)


def pow_const(a, exponent):
    if not isinstance(exponent, (int, float)):
        raise ContractViolation("pow exponent must be a Python number")
    e = float(exponent)

    def backward(out):
        def run(g):
            a._accumulate(g * e * np.power(a.values, e - 1.0))
        return run

    return _node(np.power(a.values, e), (a,), "pow", backward)


def exp(a):
    def backward(out):
        def run(g):
            a._accumulate(g * out.values)
        return run

    return _node(np.exp(a.values), (a,), "exp", backward)


def log(a):
    if np.any(a.values <= 0.0):
        raise DomainError("log requires strictly positive input")

    def backward(out):
        def run(g):
            a._accumulate(g / a.values)
        return run

    return _node(np.log(a.values), (a,), "log", backward)


def sqrt(a):
    if np.any(a.values < 0.0):
        raise DomainError("sqrt requires nonnegative input")

    def backward(out):
        def run(g):
            a._accumulate(g * 0.5 / out.values)
        return run

    return _node(np.sqrt(a.values), (a,), "sqrt", backward)


def relu(a):
    def backward(out):
        def run(g):
            a._accumulate(g * (a.values > 0.0))
        return run

    return _node(np.maximum(a.values, 0.0), (a,), "relu", backward)


def softplus(a):
    # log(1 + e^x), computed as max(x, 0) + log1p(e^-|x|) so large
    # positive inputs cannot overflow.
    v = np.maximum(a.values, 0.0) + np.log1p(np.exp(-np.abs(a.values)))

    def backward(out):
        def run(g):
            # sigmoid(x), stable on both tails
            s = np.where(a.values >= 0.0,
                         1.0 / (1.0 + np.exp(-np.clip(a.values, 0.0, None))),
                         np.exp(np.clip(a.values, None, 0.0))
                         / (1.0 + np.exp(np.clip(a.values, None, 0.0))))
            a._accumulate(g * s)
        return run

    return _node(v, (a,), "softplus", backward)


def clamp_max(a, cap):
    cap = float(cap)

    def backward(out):
        def run(g):
            a._accumulate(g * (a.values < cap))
        return run

    return _node(np.minimum(a.values, cap), (a,), "clamp_max", backward)


def lngamma(a):
    v = _lngamma_fn(a.values)  # raises DomainError on nonpositive input

    def backward(out):
        def run(g):
            a._accumulate(g * _digamma_fn(a.values))
        return run

    return _node(v, (a,), "lngamma", backward)


def digamma(a):
    v = _digamma_fn(a.values)

    def backward(out):
        def run(g):
            a._accumulate(g * _trigamma_fn(a.values))
        return run

    return _node(v, (a,), "digamma", backward)


# -- shape -------------------------------------------------------------------

def reshape(a, shape):
    def backward(out):
        def run(g):
            a._accumulate(g.reshape(a.values.shape))
        return run

    return _node(a.values.reshape(shape), (a,), "reshape", backward)


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(out):
        def run(g):
            a._accumulate(np.ascontiguousarray(g.transpose(inverse)))
        return run

    return _node(np.ascontiguousarray(a.values.transpose(axes)), (a,),
                 "transpose", backward)


def repeat(a, count, axis):
    """Tile a size-1 axis ``count`` times. The explicit stand-in for
    broadcasting."""
    if a.values.shape[axis] != 1:
        raise ContractViolation(
            f"repeat: axis {axis} has size {a.values.shape[axis]}, expected 1")
    count = int(count)

    def backward(out):
        def run(g):
            a._accumulate(g.sum(axis=axis, keepdims=True))
        return run

    return _node(np.repeat(a.values, count, axis=axis), (a,), "repeat", backward)


# -- reductions --------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False):
    def backward(out):
        def run(g):
            if axis is None:
                a._accumulate(np.full_like(a.values, float(g)))
            else:
                a._accumulate(np.broadcast_to(
                    g if keepdims else np.expand_dims(g, axis),
                    a.values.shape).copy())
        return run

    return _node(a.values.sum(axis=axis, keepdims=keepdims), (a,), "sum", backward)


def reduce_mean(a, axis=None, keepdims=False):
    n = a.values.size if axis is None else a.values.shape[axis]

    def backward(out):
        def run(g):
            if axis is None:
                a._accumulate(np.full_like(a.values, float(g) / n))
            else:
                a._accumulate(np.broadcast_to(
                    (g if keepdims else np.expand_dims(g, axis)) / n,
                    a.values.shape).copy())
        return run

    return _node(a.values.mean(axis=axis, keepdims=keepdims), (a,), "mean", backward)


def _extreme(a, axis, keepdims, op, pick):
    # Ties route the whole gradient to the lowest flat index, matching
    # numpy's argmax/argmin convention, so the subgradient choice is
    # deterministic.
    if axis is None:
        flat_idx = int(pick(a.values))
        v = a.values.reshape(-1)[flat_idx]

        def backward(out):
            def run(g):
                buf = np.zeros_like(a.values)
                buf.reshape(-1)[flat_idx] = float(g)
                a._accumulate(buf)
            return run

        return _node(np.asarray(v), (a,), op, backward)

    idx = pick(a.values, axis=axis)
    v = np.take_along_axis(a.values, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        v = np.squeeze(v, axis=axis)

    def backward(out):
        def run(g):
            buf = np.zeros_like(a.values)
            gg = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(buf, np.expand_dims(idx, axis), gg, axis=axis)
            a._accumulate(buf)
        return run

    return _node(v, (a,), op, backward)


def reduce_max(a, axis=None, keepdims=False):
    return _extreme(a, axis, keepdims, "max", np.argmax)


def reduce_min(a, axis=None, keepdims=False):
    return _extreme(a, axis, keepdims, "min", np.argmin)


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ContractViolation("matmul expects 2-d operands")
    if a.values.shape[1] != b.values.shape[0]:
        raise ContractViolation(
            f"matmul: inner dimensions {a.values.shape} @ {b.values.shape}")

    def backward(out):
        def run(g):
            a._accumulate(g @ b.values.T)
            b._accumulate(a.values.T @ g)
        return run

    return _node(a.values @ b.values, (a, b), "matmul", backward)


def add_bias(a, bias):
    if bias.values.ndim != 1 or a.values.shape[-1] != bias.values.shape[0]:
        raise ContractViolation(
            f"add_bias: trailing dim {a.values.shape} vs bias {bias.values.shape}")

    def backward(out):
        def run(g):
            a._accumulate(g)
            bias._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return run

    return _node(a.values + bias.values, (a, bias), "add_bias", backward)


def conv2d(x, w, bias, stride=1, padding=0):
    """2-d convolution, NHWC layout, weights (kh, kw, cin, cout).

    The forward pass decomposes the kernel into kh*kw strided slices,
    each a single BLAS matmul; the backward pass reuses the same slices.
    """
    if x.values.ndim != 4 or w.values.ndim != 4:
        raise ContractViolation("conv2d expects x (B,H,W,C) and w (kh,kw,cin,cout)")
    B, H, W, Cin = x.values.shape
    kh, kw, wcin, Cout = w.values.shape
    if wcin != Cin:
        raise ContractViolation(f"conv2d: input has {Cin} channels, kernel {wcin}")
    if bias.values.shape != (Cout,):
        raise ContractViolation(f"conv2d: bias shape {bias.values.shape}")
    s, p = int(stride), int(padding)
    oh = (H + 2 * p - kh) // s + 1
    ow = (W + 2 * p - kw) // s + 1
    if oh < 1 or ow < 1:
        raise ContractViolation("conv2d: kernel larger than padded input")

    if p:
        xp = np.zeros((B, H + 2 * p, W + 2 * p, Cin), dtype=np.float64)
        xp[:, p:p + H, p:p + W, :] = x.values
    else:
        xp = x.values

    out = np.empty((B, oh, ow, Cout), dtype=np.float64)
    out[:] = bias.values
    wv = w.values
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, i:i + s * oh:s, j:j + s * ow:s, :]
            out += (sl.reshape(-1, Cin) @ wv[i, j]).reshape(B, oh, ow, Cout)

    def backward(node):
        def run(g):
            g2 = g.reshape(-1, Cout)
            dw = np.empty_like(wv)
            need_dx = x.requires_grad
            dxp = np.zeros_like(xp) if need_dx else None
            for i in range(kh):
                for j in range(kw):
                    sl = xp[:, i:i + s * oh:s, j:j + s * ow:s, :]
                    dw[i, j] = sl.reshape(-1, Cin).T @ g2
                    if need_dx:
                        dxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += (
                            g2 @ wv[i, j].T).reshape(B, oh, ow, Cin)
            w._accumulate(dw)
            bias._accumulate(g2.sum(axis=0))
            if need_dx:
                x._accumulate(dxp[:, p:p + H, p:p + W, :] if p else dxp)
        return run

    return _node(out, (x, w, bias), "conv2d", backward)


def pad_reflect(x, pad):
    """Mirror-pad the spatial axes of an NHWC tensor. The border pixel is
    not repeated, matching np.pad mode="reflect"."""
    if x.values.ndim != 4:
        raise ContractViolation("pad_reflect expects x (B,H,W,C)")
    p = int(pad)
    B, H, W, C = x.values.shape
    if not 1 <= p < min(H, W):
        raise ContractViolation(
            f"pad_reflect: pad {p} must be in [1, min(H,W)) for {x.values.shape}")
    ih = np.concatenate([np.arange(p, 0, -1), np.arange(H),
                         np.arange(H - 2, H - 2 - p, -1)])
    iw = np.concatenate([np.arange(p, 0, -1), np.arange(W),
                         np.arange(W - 2, W - 2 - p, -1)])
    v = x.values[:, ih][:, :, iw]

    def backward(out):
        def run(g):
            t = np.zeros((B, H + 2 * p, W, C), dtype=np.float64)
            np.add.at(t, (slice(None), slice(None), iw), g)
            dx = np.zeros((B, H, W, C), dtype=np.float64)
            np.add.at(dx, (slice(None), ih), t)
            x._accumulate(dx)
        return run

    return _node(v, (x,), "pad_reflect", backward)


# -- normalized outputs ------------------------------------------------------

def log_softmax(a, axis=-1):
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    v = shifted - lse

    def backward(out):
        def run(g):
            a._accumulate(g - np.exp(out.values) * g.sum(axis=axis, keepdims=True))
        return run

    return _node(v, (a,), "log_softmax", backward)


def softmax(a, axis=-1):
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    v = e / e.sum(axis=axis, keepdims=True)

    def backward(out):
        def run(g):
            s = out.values
            a._accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))
        return run

    return _node(v, (a,), "softmax", backward)


def cosine_sim(x, p, eps=1e-8):
    """Pairwise cosine similarity between row vectors: (n,d) x (m,d) -> (n,m).

    Norms are stabilized with ``eps`` added to each factor, so a zero
    row yields similarity 0 rather than NaN.
    """
    if x.values.ndim != 2 or p.values.ndim != 2 or x.values.shape[1] != p.values.shape[1]:
        raise ContractViolation(
            f"cosine_sim: expected (n,d) and (m,d), got {x.values.shape} {p.values.shape}")
    xv, pv = x.values, p.values
    nx = np.sqrt((xv * xv).sum(axis=1))
    npr = np.sqrt((pv * pv).sum(axis=1))
    dot = xv @ pv.T
    denom = (nx[:, None] + eps) * (npr[None, :] + eps)
    v = dot / denom

    def backward(out):
        def run(g):
            a = g / denom
            if x.requires_grad:
                coef = (g * out.values).sum(axis=1) / ((nx + eps) * np.where(nx > 0, nx, 1.0))
                coef = np.where(nx > 0, coef, 0.0)
                x._accumulate(a @ pv - coef[:, None] * xv)
            if p.requires_grad:
                coef = (g * out.values).sum(axis=0) / ((npr + eps) * np.where(npr > 0, npr, 1.0))
                coef = np.where(npr > 0, coef, 0.0)
                p._accumulate(a.T @ xv - coef[:, None] * pv)
        return run

    return _node(v, (x, p), "cosine_sim", backward)
