"""Central finite-difference gradients, used as the oracle for autodiff."""

import numpy as np

from ..exceptions import NumericError
from .tensor import Tensor, backward, no_grad


def _scalar(value):
    if isinstance(value, Tensor):
        value = value.data
    value = float(np.asarray(value).reshape(-1)[0])
    if not np.isfinite(value):
        raise NumericError("finite_diff_grad: objective returned a non-finite value")
    return value


def finite_diff_grad(f, x, eps=1e-5):
    """Central differences of scalar ``f`` at ``x``.

    The step for coordinate i is ``eps * max(1, |x_i|)``. ``x`` may be a
    Tensor (perturbed in place and restored) or an array.
    """
    target = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    flat = target.reshape(-1)
    grad = np.zeros(flat.shape)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = _scalar(f(x))
            flat[i] = orig - h
            fm = _scalar(f(x))
            flat[i] = orig
            grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(target.shape)


def max_relative_error(g_ad, g_fd):
    """``max |a - b| / max(1, |a|, |b|)`` over all coordinates."""
    g_ad, g_fd = np.asarray(g_ad), np.asarray(g_fd)
    if g_ad.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(np.max(np.abs(g_ad - g_fd) / denom))


def check_gradients(f, params, eps=1e-5):
    """Compare autodiff against finite differences for every tensor in ``params``.

    ``f`` maps nothing to a scalar Tensor built from ``params``. Returns the
    max relative error per parameter name.
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    backward(loss, inputs=list(params.values()))
    report = {}
    for name, p in params.items():
        fd = finite_diff_grad(lambda _t: f(), p, eps)
        report[name] = max_relative_error(p.grad, fd)
    return report
