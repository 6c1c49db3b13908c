"""Reverse-mode automatic differentiation over dense numpy arrays.

A small tape: every operation computes its value eagerly with numpy and, when
any operand is a tracked ``Tensor``, records vector-Jacobian closures on the
output node. Real data is float64, complex data is complex128. The cotangent
of a complex tensor is packed as ``dL/dRe + 1j*dL/dIm``; under that convention
the adjoint of a complex-bilinear op multiplies by the conjugate of the other
operand, and gradients of real tensors are the real part of the incoming
contribution.

All op functions also accept plain ndarrays (or scalars) and then return a
plain ndarray, so the same model code serves both training (tracked) and
inference (pure numpy) without duplication.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import UsageError

GradientRecord = dict[str, np.ndarray]


def _coerce(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.kind in "fiub":
        return arr.astype(np.float64, copy=False)
    if arr.dtype.kind == "c":
        return arr.astype(np.complex128, copy=False)
    raise UsageError(f"unsupported dtype for Tensor: {arr.dtype}")


class Tensor:
    """A value plus its links into the backward tape."""

    # Keep numpy from trying to consume us in mixed expressions; our
    # reflected operators handle ndarray-Tensor arithmetic instead.
    __array_ufunc__ = None
    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _coerce(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return self.data.item()

    def _tracked(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"

    # -- arithmetic sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self):
        backpropagate(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def value_of(x) -> np.ndarray:
    """Raw ndarray behind a Tensor, or the coerced array itself."""
    return x.data if isinstance(x, Tensor) else _coerce(x)


def _node(data: np.ndarray, links) -> Tensor | np.ndarray:
    """Build an output node; constant-fold to a bare array when untracked."""
    kept = tuple((p, vjp) for p, vjp in links if isinstance(p, Tensor) and p._tracked())
    if not kept:
        return data
    out = Tensor(data)
    out.requires_grad = True
    out._parents = kept
    return out


def _conj(a: np.ndarray) -> np.ndarray:
    return np.conj(a) if a.dtype.kind == "c" else a


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a cotangent down to the shape the operand had before broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _node(out, [(a, lambda g: _unbroadcast(g, av.shape)),
                       (b, lambda g: _unbroadcast(g, bv.shape))])


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return _node(out, [(a, lambda g: _unbroadcast(g, av.shape)),
                       (b, lambda g: _unbroadcast(-g, bv.shape))])


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return _node(out, [(a, lambda g: _unbroadcast(g * _conj(bv), av.shape)),
                       (b, lambda g: _unbroadcast(g * _conj(av), bv.shape))])


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    bc = _conj(bv)
    return _node(out, [(a, lambda g: _unbroadcast(g / bc, av.shape)),
                       (b, lambda g: _unbroadcast(-g * _conj(av) / (bc * bc), bv.shape))])


def neg(a):
    av = value_of(a)
    return _node(-av, [(a, lambda g: -g)])


def power(a, p):
    """Elementwise real power with constant exponent."""
    av = value_of(a)
    if av.dtype.kind == "c":
        raise UsageError("power: complex base not supported")
    out = av ** p
    return _node(out, [(a, lambda g: g * p * av ** (p - 1))])


def tanh(a):
    out = np.tanh(value_of(a))
    return _node(out, [(a, lambda g: g * (1.0 - out * out))])


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """tanh-form GELU, built from primitives so its adjoint needs no special case."""
    return 0.5 * (x * (1.0 + tanh(_GELU_C * (x + 0.044715 * (x * x * x)))))


# -- shape manipulation -----------------------------------------------------

def reshape(a, shape):
    av = value_of(a)
    return _node(av.reshape(shape), [(a, lambda g: g.reshape(av.shape))])


def moveaxis(a, source: int, destination: int):
    av = value_of(a)
    # materialize: downstream GEMMs and FFTs pay more for strided views
    out = np.ascontiguousarray(np.moveaxis(av, source, destination))
    return _node(out, [(a, lambda g: np.moveaxis(g, destination, source))])


def getitem(a, idx):
    av = value_of(a)
    out = av[idx]

    def vjp(g):
        full = np.zeros_like(av)
        full[idx] = g
        return full

    return _node(out, [(a, vjp)])


def concatenate(parts, axis: int = 0):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    links = []
    offset = 0
    for p, v in zip(parts, vals):
        start, stop = offset, offset + v.shape[axis]
        offset = stop

        def vjp(g, start=start, stop=stop):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            return g[tuple(sl)]

        links.append((p, vjp))
    return _node(out, links)


# -- reductions -------------------------------------------------------------

def _spread(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    return _node(out, [(a, lambda g: _spread(g, av.shape, axis, keepdims))])


def mean(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    out = av.mean(axis=axis, keepdims=keepdims)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return _node(out, [(a, lambda g: _spread(g / n, av.shape, axis, keepdims))])


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise UsageError("matmul: operands must have ndim >= 2")
    out = av @ bv

    def vjp_a(g):
        return _unbroadcast(g @ _conj(np.swapaxes(bv, -1, -2)), av.shape)

    def vjp_b(g):
        if bv.ndim == 2 and av.ndim > 2:
            # stacked lhs against a plain weight matrix: one flat GEMM instead
            # of per-batch products followed by a reduction
            a2 = _conj(av).reshape(-1, av.shape[-1])
            return a2.T @ g.reshape(-1, g.shape[-1])
        return _unbroadcast(_conj(np.swapaxes(av, -1, -2)) @ g, bv.shape)

    return _node(out, [(a, vjp_a), (b, vjp_b)])


def complex_contract(x, w):
    """Per-mode complex kernel contraction.

    ``x``: [B, c, k_in, M] spectra; ``w``: [k_in, k_out, M] kernel.
    Returns [B, c, k_out, M] with Y[b,c,o,m] = sum_i X[b,c,i,m] * W[i,o,m].
    """
    xv, wv = value_of(x), value_of(w)
    if xv.ndim != 4 or wv.ndim != 3:
        raise UsageError(f"complex_contract: expected X rank 4 and W rank 3, "
                         f"got {xv.ndim} and {wv.ndim}")
    if xv.shape[2] != wv.shape[0] or xv.shape[3] != wv.shape[2]:
        raise UsageError(f"complex_contract: shape mismatch X{xv.shape} W{wv.shape}")
    out = np.einsum("bcim,iom->bcom", xv, wv, optimize=True)

    def vjp_x(g):
        return np.einsum("bcom,iom->bcim", g, np.conj(wv), optimize=True)

    def vjp_w(g):
        return np.einsum("bcim,bcom->iom", np.conj(xv), g, optimize=True)

    return _node(out, [(x, vjp_x), (w, vjp_w)])


# -- Fourier transforms -----------------------------------------------------

def _axslice(ndim: int, axis: int, sl: slice) -> tuple:
    full = [slice(None)] * ndim
    full[axis] = sl
    return tuple(full)


def rfft(a, axis: int = -1):
    """One-sided DFT of real input (forward unnormalized)."""
    av = value_of(a)
    if av.dtype.kind == "c":
        raise UsageError("rfft: input must be real")
    if not -av.ndim <= axis < av.ndim:
        raise UsageError(f"rfft: axis {axis} invalid for ndim {av.ndim}")
    n = av.shape[axis]
    out = np.fft.rfft(av, axis=axis)

    def vjp(g):
        # dL/dx_n = sum_k Re(G_k e^{+2pi i k n / L}) over one-sided bins:
        # realized as L * irfft after halving the doubly-counted interior bins.
        d = g.copy()
        nbins = d.shape[axis]
        interior = slice(1, nbins - 1) if n % 2 == 0 else slice(1, nbins)
        d[_axslice(d.ndim, axis, interior)] *= 0.5
        # c2r ignores the imaginary parts of DC/Nyquist; drop them explicitly.
        edge = d[_axslice(d.ndim, axis, slice(0, 1))]
        d[_axslice(d.ndim, axis, slice(0, 1))] = edge.real
        if n % 2 == 0:
            edge = d[_axslice(d.ndim, axis, slice(nbins - 1, nbins))]
            d[_axslice(d.ndim, axis, slice(nbins - 1, nbins))] = edge.real
        return n * np.fft.irfft(d, n=n, axis=axis)

    return _node(out, [(a, vjp)])


def irfft(a, n: int, axis: int = -1):
    """Inverse of :func:`rfft` for length ``n`` (inverse carries the 1/n)."""
    av = value_of(a)
    if av.dtype.kind != "c":
        av = av.astype(np.complex128)
    if not -av.ndim <= axis < av.ndim:
        raise UsageError(f"irfft: axis {axis} invalid for ndim {av.ndim}")
    if av.shape[axis] != n // 2 + 1:
        raise UsageError(f"irfft: spectrum length {av.shape[axis]} along axis {axis} "
                         f"does not match n={n} (need {n // 2 + 1})")
    out = np.fft.irfft(av, n=n, axis=axis)

    def vjp(g):
        d = np.fft.rfft(g, axis=axis) / n
        nbins = d.shape[axis]
        interior = slice(1, nbins - 1) if n % 2 == 0 else slice(1, nbins)
        d[_axslice(d.ndim, axis, interior)] *= 2.0
        return d

    return _node(out, [(a, vjp)])


# -- backward pass ----------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backpropagate(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked ancestor of a scalar real loss."""
    if not isinstance(loss, Tensor):
        raise UsageError("backward: loss is constant (no tracked parameters)")
    if loss.size != 1:
        raise UsageError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.dtype.kind == "c":
        raise UsageError("backward: loss must be real")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node._parents:
            contrib = vjp(g)
            if parent.data.dtype.kind != "c" and contrib.dtype.kind == "c":
                contrib = contrib.real
            if contrib.shape != parent.data.shape:
                raise UsageError(f"internal: vjp shape {contrib.shape} != "
                                 f"parent shape {parent.data.shape}")
            # accumulation always allocates, so views returned by vjps are safe
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


def backward(loss: Tensor, params: dict[str, Tensor]) -> GradientRecord:
    """Reverse-mode gradients of a scalar loss w.r.t. named parameter leaves."""
    backpropagate(loss)
    grads: GradientRecord = {}
    for name, leaf in params.items():
        if leaf.grad is None:
            grads[name] = np.zeros_like(leaf.data)
        else:
            grads[name] = leaf.grad
    return grads
