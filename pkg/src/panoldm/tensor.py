"""Dense tensor engine with reverse-mode differentiation.

A Tensor wraps a numpy array and, when gradients are enabled, records the
operation that produced it. ``backward`` on a scalar walks the recorded tape
in reverse topological order and accumulates ``grad`` arrays on every
reachable tensor that asked for one. Repeated backward calls accumulate;
clear with ``zero_grad``.

Training runs in float32; finite-difference verification switches the
factory default to float64 via the ``precision`` context manager because
central differences at h=1e-4 drown in float32 rounding noise.
"""

import contextlib
import math
from enum import Enum

import numpy as np

from . import geometry
from .kernels import bilinear_gather, bilinear_scatter_add, col2im_add, im2col

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used by tensor factories ('float32'/'float64')."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference / data preparation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class PadMode(Enum):
    ZERO = "zero"
    CIRCULAR = "circular"
    ERP = "erp"


_PAD_FUNCS = {
    PadMode.ZERO: (geometry.zero_pad, geometry.zero_pad_adjoint),
    PadMode.CIRCULAR: (geometry.circular_pad, geometry.circular_pad_adjoint),
    PadMode.ERP: (geometry.erp_pad, geometry.erp_pad_adjoint),
}


class Rng:
    """Seeded random stream with reproducible splitting.

    The same seed always yields the same sample sequence; ``split`` derives
    an independent child stream that is itself a pure function of the seed
    and the number of prior splits.
    """

    def __init__(self, seed, _spawn_key=()):
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)))
        self._n_children = 0

    def split(self):
        child = Rng(self.seed, self._spawn_key + (self._n_children,))
        self._n_children += 1
        return child

    def normal(self, shape=(), dtype=None):
        dtype = dtype or _DEFAULT_DTYPE
        return self._gen.standard_normal(shape, dtype=np.float64).astype(dtype)

    def uniform(self, low=0.0, high=1.0, shape=()):
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, size=shape)

    def choice(self, options, size=None, replace=True):
        return self._gen.choice(options, size=size, replace=replace)

    def shuffle(self, seq):
        self._gen.shuffle(seq)


def _as_array(value, dtype=None):
    if isinstance(value, np.ndarray):
        arr = value
    else:
        arr = np.asarray(value)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype in (np.float32, np.float64):
        return np.ascontiguousarray(arr)
    return np.ascontiguousarray(arr, dtype=_DEFAULT_DTYPE)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- bookkeeping --------------------------------------------------------

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

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def astype(self, dtype):
        return _make(self.data.astype(dtype), (self,), lambda g: (g.astype(self.data.dtype),))

    # -- reverse pass -------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy() if node._backward is not None else g
                else:
                    node.grad = node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not _needs_grad(parent):
                    continue
                existing = grads.get(id(parent))
                grads[id(parent)] = pg if existing is None else existing + pg

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _coerce(other, self.dtype)
        out = self.data + other.data
        return _make(out, (self, other),
                     lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        other = _coerce(other, self.dtype)
        out = self.data - other.data
        return _make(out, (self, other),
                     lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)))

    def __rsub__(self, other):
        return _coerce(other, self.dtype) - self

    def __mul__(self, other):
        other = _coerce(other, self.dtype)
        out = self.data * other.data
        return _make(out, (self, other),
                     lambda g: (_unbroadcast(g * other.data, self.shape),
                                _unbroadcast(g * self.data, other.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other, self.dtype)
        out = self.data / other.data
        return _make(out, (self, other),
                     lambda g: (_unbroadcast(g / other.data, self.shape),
                                _unbroadcast(-g * self.data / (other.data * other.data),
                                             other.shape)))

    def __rtruediv__(self, other):
        return _coerce(other, self.dtype) / self

    def __neg__(self):
        return _make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = self.data ** exponent
        return _make(out, (self,),
                     lambda g: (g * exponent * self.data ** (exponent - 1),))

    def __matmul__(self, other):
        other = _coerce(other, self.dtype)
        out = np.matmul(self.data, other.data)

        def back(g):
            ga = np.matmul(g, np.swapaxes(other.data, -1, -2))
            gb = np.matmul(np.swapaxes(self.data, -1, -2), g)
            return _unbroadcast(ga, self.shape), _unbroadcast(gb, other.shape)

        return _make(out, (self, other), back)

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return _make(out, (self,), lambda g: (g * out,))

    def log(self):
        return _make(np.log(self.data), (self,), lambda g: (g / self.data,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return _make(out, (self,), lambda g: (g / (2.0 * out),))

    def tanh(self):
        out = np.tanh(self.data)
        return _make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self):
        out = 1.0 / (1.0 + np.exp(-self.data))
        return _make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def silu(self):
        sig = 1.0 / (1.0 + np.exp(-self.data))
        out = self.data * sig
        return _make(out, (self,), lambda g: (g * (sig * (1.0 + self.data * (1.0 - sig))),))

    def clamp(self, lo, hi):
        out = np.clip(self.data, lo, hi)
        inside = ((self.data >= lo) & (self.data <= hi)).astype(self.data.dtype)
        return _make(out, (self,), lambda g: (g * inside,))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).astype(self.dtype, copy=True),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.shape).astype(self.dtype, copy=True),)

        return _make(np.asarray(out), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else _axis_size(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self.data.reshape(shape)
        return _make(out, (self,), lambda g: (g.reshape(self.shape),))

    def transpose(self, axes):
        inv = np.argsort(axes)
        out = np.ascontiguousarray(np.transpose(self.data, axes))
        return _make(out, (self,), lambda g: (np.transpose(g, inv),))

    def __getitem__(self, key):
        out = self.data[key]

        def back(g):
            full = np.zeros_like(self.data)
            full[key] = g
            return (full,)

        return _make(np.ascontiguousarray(out), (self,), back)


def _needs_grad(t):
    return t.requires_grad or t._backward is not None


def _make(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _coerce(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _axis_size(shape, axis):
    if isinstance(axis, int):
        return shape[axis]
    return int(np.prod([shape[a] for a in axis]))


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gdim, sdim) in enumerate(zip(grad.shape, shape))
                 if sdim == 1 and gdim != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _toposort(root):
    """Reverse topological order of the tape (iterative; the graph is a DAG
    by construction -- nodes only ever reference previously created nodes)."""
    order = []
    visited = set()
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
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


# ---------------------------------------------------------------------------
# factories
# ---------------------------------------------------------------------------

def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad=False, dtype=None):
    return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad=False, dtype=None):
    return Tensor(np.ones(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad=requires_grad)


def randn(shape, rng, scale=1.0, requires_grad=False, dtype=None):
    return Tensor(rng.normal(shape, dtype=dtype or _DEFAULT_DTYPE) * scale,
                  requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# composite / structured operations
# ---------------------------------------------------------------------------

def concat(tensors, axis=0):
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), back)


def softmax(t, axis=-1):
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (t,), back)


def pad2d(t, p, mode):
    """Pad the last two axes of a tensor with the given PadMode."""
    fwd, adj = _PAD_FUNCS[mode]
    out = fwd(t.data, p)
    return _make(out, (t,), lambda g: (adj(g, p),))


def conv2d(x, kernel, stride=1, pad=PadMode.ZERO):
    """2-D convolution (cross-correlation) with same-padding.

    x: (N, C_in, H, W); kernel: (C_out, C_in, k, k) with odd k. The pad mode
    selects the border rule; ERP delegates to the spherical pad so outputs
    stay continuous across the longitude seam.
    """
    n, c_in, h, w = x.shape
    c_out, c_in2, kh, kw = kernel.shape
    if c_in != c_in2:
        raise ValueError(f"kernel expects {c_in2} input channels, got {c_in}")
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {kh}x{kw}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    p = (kh - 1) // 2
    fwd, adj = _PAD_FUNCS[pad]
    padded = fwd(x.data, p)
    hp, wp = padded.shape[-2:]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = im2col(padded, kh, kw, stride)
    w2 = kernel.data.reshape(c_out, -1)
    out = np.matmul(w2, cols).reshape(n, c_out, ho, wo)

    def back(g):
        g2 = np.ascontiguousarray(g.reshape(n, c_out, ho * wo))
        cols_b = im2col(fwd(x.data, p), kh, kw, stride)
        grad_w = np.einsum("ncl,nkl->ck", g2, cols_b, optimize=True).reshape(kernel.shape)
        grad_cols = np.matmul(w2.T, g2)
        grad_padded = col2im_add(grad_cols, hp, wp, kh, kw, stride)
        return adj(grad_padded, p), grad_w

    return _make(out, (x, kernel), back)


def upsample_nearest2x(x):
    """(N, C, H, W) -> (N, C, 2H, 2W) by pixel doubling."""
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def back(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), back)


def bilinear_warp(x, rows, cols):
    """Resample (N, C, H, W) at a fixed fractional grid (wraps longitude)."""
    n, c, h, w = x.shape
    flat = x.data.reshape(n * c, h, w)
    out = bilinear_gather(flat, rows, cols, wrap_cols=True)
    out = out.reshape(n, c, rows.shape[0], rows.shape[1])

    def back(g):
        g_flat = np.ascontiguousarray(g.reshape(n * c, rows.shape[0], rows.shape[1]))
        gx = bilinear_scatter_add(g_flat, rows, cols, True, h, w)
        return (gx.reshape(n, c, h, w),)

    return _make(out, (x,), back)


def multi_head_attention(q, k, v, heads):
    """Scaled dot-product attention over (B, T, D) streams.

    Logits are scaled by 1/sqrt(D/heads); every output row is a convex
    combination of value rows, head by head.
    """
    b, tq, d = q.shape
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads
    tk = k.shape[1]

    def split_heads(t, tlen):
        return t.reshape(b, tlen, heads, dh).transpose((0, 2, 1, 3))

    qh = split_heads(q, tq)
    kh = split_heads(k, tk)
    vh = split_heads(v, tk)
    logits = (qh @ kh.transpose((0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    att = softmax(logits, axis=-1)
    out = att @ vh
    return out.transpose((0, 2, 1, 3)).reshape(b, tq, d)


def modulated_layer_norm(x, shift, scale, eps=1e-6):
    """Layer norm over the last axis followed by (1+scale)*x_norm + shift."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    xn = xc / (var + eps).sqrt()
    return xn * (scale + 1.0) + shift


def group_norm(x, groups, gamma, beta, eps=1e-6):
    """Group normalization over (N, C, H, W) with per-channel affine."""
    n, c, h, w = x.shape
    if c % groups != 0:
        raise ValueError(f"{c} channels not divisible by {groups} groups")
    xg = x.reshape(n, groups, (c // groups) * h * w)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    xn = (xc / (var + eps).sqrt()).reshape(n, c, h, w)
    return xn * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)


def mse(a, b):
    diff = a - b
    return (diff * diff).mean()


# ---------------------------------------------------------------------------
# gradient verification oracle
# ---------------------------------------------------------------------------

def finite_diff_check(f, params, h=1e-4, max_coords=None, seed=0):
    """Max relative error between tape gradients and central differences.

    ``f(params) -> scalar Tensor`` must be deterministic (verified by two
    baseline evaluations) and everything must be float64. ``max_coords``
    optionally bounds the number of coordinates probed per parameter with a
    seeded subsample; by default every coordinate is checked.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"step size {h} outside [1e-6, 1e-3]")
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("finite_diff_check requires float64 parameters")

    base1 = float(f(params).data)
    base2 = float(f(params).data)
    if base1 != base2:
        raise ValueError("f is not deterministic: baseline evaluations differ")

    for p in params:
        p.zero_grad()
    loss = f(params)
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]

    picker = np.random.default_rng(seed)
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(picker.choice(flat.size, size=max_coords, replace=False))
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            hi = float(f(params).data)
            flat[i] = keep - h
            lo = float(f(params).data)
            flat[i] = keep
            central = (hi - lo) / (2.0 * h)
            err = abs(ana.reshape(-1)[i] - central) / max(1e-8, abs(central))
            worst = max(worst, err)
    return worst
