"""Dense float64 tensor with reverse-mode automatic differentiation.

Every primitive computes its forward value with numpy and, when any input
requires a gradient, records a node holding its parents and a vector-Jacobian
closure. :func:`backward` walks the recorded graph in reverse topological
order. No broadcasting is performed except for the explicit bias adds.
"""

import contextlib
import math

import numpy as np
from scipy.special import erf

from ..exceptions import ConfigError, ContractError, DimensionError, NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Row-major float64 array with an optional gradient slot.

    Only ``grad`` is mutated after construction; ``data`` is treated as
    read-only by every operation in this package.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, op=""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def as_tensor(x, requires_grad=False):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def _node(data, parents, vjp, op):
    """Wrap a forward result, recording the graph edge when needed."""
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, True, tuple(parents), vjp, op)
    return Tensor(data, op=op)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise


def add(a, b):
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a, c):
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_bias(a, b):
    """Add a vector along the last axis: ``a[..., j] + b[j]``."""
    if b.ndim != 1 or a.shape[-1:] != b.shape:
        raise DimensionError(f"add_bias: bias {b.shape} does not match last axis of {a.shape}")
    axes = tuple(range(a.ndim - 1))
    return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)), "add_bias")


def gelu(a):
    """Exact GeLU, ``x * Phi(x)``."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return _node(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),), "gelu")


# ------------------------------------------------------------ shape plumbing


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a):
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.shape}")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),), "permute")


def take_cols(a, start, stop):
    """Columns ``start:stop`` of a matrix."""
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"take_cols: bad range {start}:{stop} for {a.shape}")
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _node(a.data[:, start:stop].copy(), (a,), vjp, "take_cols")


def take_rows(a, index):
    """Gather rows by integer index (embedding lookup)."""
    index = np.asarray(index, dtype=np.int64)
    if a.ndim != 2:
        raise DimensionError(f"take_rows expects a matrix, got {a.shape}")
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError(f"take_rows: index out of range for {a.shape[0]} rows")
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _node(a.data[index], (a,), vjp, "take_rows")


def concat(tensors, axis):
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp, "concat")


def concat_cols(tensors):
    return concat(tensors, 1)


def concat_rows(tensors):
    return concat(tensors, 0)


# -------------------------------------------------------------- reductions


def sum_all(a):
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def mean_all(a):
    shape, n = a.shape, a.size
    return _node(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),), "mean")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product ``c[i, j] = sum_t a[i, t] * b[t, j]``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with weight stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add_bias(y, bias)


# ---------------------------------------------------------------- normalisers


def softmax_rows(a, mask=None):
    """Row-wise softmax with max subtraction.

    ``mask`` (bool, same shape) marks entries that may receive probability;
    excluded entries get exactly zero. Each row needs one allowed entry.
    """
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got {a.shape}")
    x = a.data
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax_rows: non-finite input")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape or not mask.any(axis=1).all():
            raise DimensionError("softmax_rows: mask must match input and allow one entry per row")
        x = np.where(mask, x, -np.inf)
    e = np.exp(x - x.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _node(p, (a,), vjp, "softmax_rows")


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalise each row of an (N, d) matrix, then apply ``gamma``/``beta``."""
    if a.ndim != 2:
        raise DimensionError(f"layer_norm expects a matrix, got {a.shape}")
    d = a.shape[1]
    if d < 2:
        raise DimensionError(f"layer_norm needs d >= 2, got {d}")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: affine params must have shape ({d},)")
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def vjp(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _node(xhat * gd + beta.data, (a, gamma, beta), vjp, "layer_norm")


def batch_norm2d(a, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalisation of a (C, H, W) map.

    In training mode the spatial batch statistics are used and the running
    buffers (numpy arrays) are updated in place with the unbiased variance.
    """
    if a.ndim != 3:
        raise DimensionError(f"batch_norm2d expects (C, H, W), got {a.shape}")
    c = a.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm2d: affine params must have shape ({c},)")
    x = a.data
    gd = gamma.data[:, None, None]
    if not training:
        inv = 1.0 / np.sqrt(running_var + eps)[:, None, None]
        xhat = (x - running_mean[:, None, None]) * inv

        def vjp_eval(g):
            return g * gd * inv, (g * xhat).sum(axis=(1, 2)), g.sum(axis=(1, 2))

        return _node(xhat * gd + beta.data[:, None, None], (a, gamma, beta), vjp_eval, "batch_norm2d")

    m = x.shape[1] * x.shape[2]
    mu = x.mean(axis=(1, 2), keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    if running_mean is not None:
        unbiased = var.reshape(c) * (m / max(m - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

    def vjp(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=(1, 2), keepdims=True)
                    - xhat * (gx * xhat).mean(axis=(1, 2), keepdims=True))
        return dx, (g * xhat).sum(axis=(1, 2)), g.sum(axis=(1, 2))

    return _node(xhat * gd + beta.data[:, None, None], (a, gamma, beta), vjp, "batch_norm2d")


# ---------------------------------------------------------------- spatial ops


def conv_output_size(size, kernel, stride, padding, dilation):
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1, groups=1):
    """Direct 2D cross-correlation of a (C, H, W) input.

    ``weight`` has shape (Cout, Cin/groups, kh, kw). The sum is accumulated
    one kernel tap at a time over strided views of the zero-padded input.
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected (C,H,W) input and 4-D weight, got {x.shape}, {weight.shape}")
    cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"conv2d: channels {cin}->{cout} not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise DimensionError(f"conv2d: weight expects {cin_g * groups} input channels, got {cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias must have shape ({cout},)")
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: empty output for input {x.shape} and kernel {kh}x{kw}")
    cout_g = cout // groups
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    xg = xp.reshape(groups, cin_g, xp.shape[1], xp.shape[2])
    wg = weight.data.reshape(groups, cout_g, cin_g, kh, kw)

    def window(i, j):
        r0, c0 = i * dilation, j * dilation
        return np.s_[:, :, r0:r0 + stride * (ho - 1) + 1:stride, c0:c0 + stride * (wo - 1) + 1:stride]

    out = np.zeros((groups, cout_g, ho, wo))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("gok,gkhw->gohw", wg[:, :, :, i, j], xg[window(i, j)])
    out = out.reshape(cout, ho, wo)
    if bias is not None:
        out += bias.data[:, None, None]

    def vjp(g):
        gg = g.reshape(groups, cout_g, ho, wo)
        gxp = np.zeros_like(xg)
        gw = np.zeros_like(wg)
        for i in range(kh):
            for j in range(kw):
                sl = window(i, j)
                gxp[sl] += np.einsum("gok,gohw->gkhw", wg[:, :, :, i, j], gg)
                gw[:, :, :, i, j] = np.einsum("gohw,gkhw->gok", gg, xg[sl])
        gx = gxp.reshape(cin, xp.shape[1], xp.shape[2])[:, padding:padding + h, padding:padding + w]
        grads = (gx, gw.reshape(weight.shape))
        if bias is not None:
            grads += (g.sum(axis=(1, 2)),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, vjp, "conv2d")


def _pool_bins(size, out):
    return [(math.floor(i * size / out), math.ceil((i + 1) * size / out)) for i in range(out)]


def adaptive_avg_pool2d(x, out_h, out_w):
    """Average (C, H, W) into (C, out_h, out_w) bins.

    Bin ``i`` covers rows ``floor(i*H/out_h)`` to ``ceil((i+1)*H/out_h)``
    (exclusive); columns likewise. Bins may overlap when sizes do not divide.
    """
    if x.ndim != 3:
        raise DimensionError(f"adaptive_avg_pool2d expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    if not (1 <= out_h <= h and 1 <= out_w <= w):
        raise ConfigError(f"adaptive_avg_pool2d: output {out_h}x{out_w} exceeds input {h}x{w}")
    rows, cols = _pool_bins(h, out_h), _pool_bins(w, out_w)
    # pooling as two averaging matrices keeps forward and backward exact and cheap
    ph = np.zeros((out_h, h))
    for i, (s, e) in enumerate(rows):
        ph[i, s:e] = 1.0 / (e - s)
    pw = np.zeros((out_w, w))
    for j, (s, e) in enumerate(cols):
        pw[j, s:e] = 1.0 / (e - s)
    out = np.einsum("ih,chw,jw->cij", ph, x.data, pw)
    return _node(out, (x,), lambda g: (np.einsum("ih,cij,jw->chw", ph, g, pw),), "adaptive_avg_pool2d")


def pixel_shuffle_s2d(grid, r):
    """Space-to-depth on an (h, w, d) token grid.

    Output token (i, j) concatenates the r x r block at rows ``i*r..``,
    cols ``j*r..`` in row-major block order: channel ``(a*r + b)*d + c``.
    """
    if grid.ndim != 3:
        raise DimensionError(f"pixel_shuffle_s2d expects (h, w, d), got {grid.shape}")
    h, w, d = grid.shape
    if r < 1 or h % r or w % r:
        raise DimensionError(f"pixel_shuffle_s2d: grid {h}x{w} not divisible by r={r}")
    out = grid.data.reshape(h // r, r, w // r, r, d).transpose(0, 2, 1, 3, 4).reshape(h // r, w // r, r * r * d)

    def vjp(g):
        return (g.reshape(h // r, w // r, r, r, d).transpose(0, 2, 1, 3, 4).reshape(h, w, d),)

    return _node(np.ascontiguousarray(out), (grid,), vjp, "pixel_shuffle_s2d")


def pixel_unshuffle_d2s(grid, r):
    """Inverse of :func:`pixel_shuffle_s2d`."""
    if grid.ndim != 3:
        raise DimensionError(f"pixel_unshuffle_d2s expects (h, w, d), got {grid.shape}")
    h, w, dd = grid.shape
    if r < 1 or dd % (r * r):
        raise DimensionError(f"pixel_unshuffle_d2s: channels {dd} not divisible by r^2={r * r}")
    d = dd // (r * r)
    out = grid.data.reshape(h, w, r, r, d).transpose(0, 2, 1, 3, 4).reshape(h * r, w * r, d)

    def vjp(g):
        return (g.reshape(h, r, w, r, d).transpose(0, 2, 1, 3, 4).reshape(h, w, dd),)

    return _node(np.ascontiguousarray(out), (grid,), vjp, "pixel_unshuffle_d2s")


# ---------------------------------------------------------------- losses


def cross_entropy_rows(logits, targets):
    """Mean negative log-softmax of ``targets`` over the rows of ``logits``."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy_rows expects (T, V) logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    t, v = logits.shape
    if targets.shape != (t,):
        raise DimensionError(f"cross_entropy_rows: {targets.size} targets for {t} rows")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target id outside [0, {v})")
    x = logits.data
    if not np.all(np.isfinite(x)):
        raise NumericError("cross_entropy_rows: non-finite logits")
    z = x - x.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(t)
    loss = -logp[rows, targets].mean()

    def vjp(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (float(g) / t),)

    return _node(np.array(loss), (logits,), vjp, "cross_entropy")


# ---------------------------------------------------------------- autodiff


def _topological_order(root):
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


def backward(loss, inputs=None):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    ``inputs``, when given, are leaves whose gradient is returned (as a list
    of arrays); unreachable ones receive zeros.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.requires_grad:
        grads = {id(loss): np.ones(loss.shape)}
        for node in reversed(_topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    if inputs is None:
        return None
    out = []
    for x in inputs:
        if x.grad is None:
            x.grad = np.zeros(x.shape)
        out.append(x.grad)
    return out
