"""Seeded autodiff-vs-finite-difference checks for primitives and the adaptor."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nta import NtaConfig, NtaParams, init_nta_params, nta_forward
from .tensor import SplitMix64, Tensor, check_gradients

TOLERANCE = 1e-4


def _leaf(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def _weighted_sum(out, weights):
    """Random linear functional of ``out`` so every output coordinate matters."""
    return T.sum_all(T.mul(out, weights))


def primitive_cases(seed):
    """One random small configuration per primitive: name -> (objective, leaves)."""
    rng = SplitMix64(seed)
    dim = lambda lo=1, hi=8: rng.integers(lo, hi + 1)  # noqa: E731
    cases = {}

    def case(name, fn, leaves):
        out_shape = fn().shape
        weights = Tensor(rng.uniform(-1, 1, out_shape)) if out_shape else None
        obj = (lambda: _weighted_sum(fn(), weights)) if weights is not None else fn
        cases[name] = (obj, leaves)

    m, k, p = dim(), dim(), dim()
    a, b = _leaf(rng, (m, k)), _leaf(rng, (m, k))
    case("add", lambda: T.add(a, b), {"a": a, "b": b})
    case("sub", lambda: T.sub(a, b), {"a": a, "b": b})
    case("mul", lambda: T.mul(a, b), {"a": a, "b": b})
    case("scale", lambda: T.scale(a, 1.7), {"a": a})
    bias = _leaf(rng, (k,))
    case("add_bias", lambda: T.add_bias(a, bias), {"a": a, "bias": bias})
    g = _leaf(rng, (m, k), -3, 3)
    case("gelu", lambda: T.gelu(g), {"x": g})
    case("reshape", lambda: T.reshape(a, (k, m)), {"a": a})
    case("transpose", lambda: T.transpose(a), {"a": a})
    c3 = _leaf(rng, (dim(1, 4), dim(1, 4), dim(1, 4)))
    case("permute", lambda: T.permute(c3, (2, 0, 1)), {"x": c3})
    wide = _leaf(rng, (m, dim(2, 8)))
    stop = rng.integers(1, wide.shape[1] + 1)
    case("take_cols", lambda: T.take_cols(wide, 0, stop), {"x": wide})
    table = _leaf(rng, (dim(2, 8), k))
    idx = rng.integers(0, table.shape[0], dim(1, 8))
    case("take_rows", lambda: T.take_rows(table, idx), {"table": table})
    case("concat", lambda: T.concat_rows([a, b]), {"a": a, "b": b})
    case("sum", lambda: T.sum_all(a), {"a": a})
    case("mean", lambda: T.mean_all(a), {"a": a})
    bm = _leaf(rng, (k, p))
    case("matmul", lambda: T.matmul(a, bm), {"a": a, "b": bm})
    s = _leaf(rng, (m, dim(2, 8)), -2, 2)
    case("softmax_rows", lambda: T.softmax_rows(s), {"x": s})
    mask = np.tril(np.ones((m, m), dtype=bool))
    sq = _leaf(rng, (m, m), -2, 2)
    case("softmax_rows_masked", lambda: T.softmax_rows(sq, mask), {"x": sq})
    d = dim(2, 8)
    ln_x, ln_g, ln_b = _leaf(rng, (m, d), -2, 2), _leaf(rng, (d,), 0.5, 1.5), _leaf(rng, (d,))
    case("layer_norm", lambda: T.layer_norm(ln_x, ln_g, ln_b, 1e-5), {"x": ln_x, "gamma": ln_g, "beta": ln_b})

    c, h, w = dim(1, 4), dim(2, 6), dim(2, 6)
    bn_x, bn_g, bn_b = _leaf(rng, (c, h, w), -2, 2), _leaf(rng, (c,), 0.5, 1.5), _leaf(rng, (c,))
    rm, rv = rng.uniform(-0.5, 0.5, c), rng.uniform(0.5, 2.0, c)
    case("batch_norm2d_train", lambda: T.batch_norm2d(bn_x, bn_g, bn_b, None, None, True),
         {"x": bn_x, "gamma": bn_g, "beta": bn_b})
    case("batch_norm2d_eval", lambda: T.batch_norm2d(bn_x, bn_g, bn_b, rm, rv, False),
         {"x": bn_x, "gamma": bn_g, "beta": bn_b})

    groups = rng.choice([1, 2])
    cin, cout = groups * dim(1, 3), groups * dim(1, 3)
    kh, kw = dim(1, 3), dim(1, 3)
    stride, dil, pad = dim(1, 2), dim(1, 2), dim(0, 2)
    size = max(kh, kw) * dil + 2
    cx = _leaf(rng, (cin, size + dim(0, 3), size + dim(0, 3)))
    cw, cb = _leaf(rng, (cout, cin // groups, kh, kw)), _leaf(rng, (cout,))
    case("conv2d", lambda: T.conv2d(cx, cw, cb, stride, pad, dil, groups), {"x": cx, "weight": cw, "bias": cb})

    px = _leaf(rng, (dim(1, 4), dim(2, 8), dim(2, 8)))
    oh, ow = rng.integers(1, px.shape[1] + 1), rng.integers(1, px.shape[2] + 1)
    case("adaptive_avg_pool2d", lambda: T.adaptive_avg_pool2d(px, oh, ow), {"x": px})
    r = rng.choice([1, 2])
    sx = _leaf(rng, (r * dim(1, 4), r * dim(1, 4), dim(1, 4)))
    case("pixel_shuffle_s2d", lambda: T.pixel_shuffle_s2d(sx, r), {"x": sx})
    ux = _leaf(rng, (dim(1, 4), dim(1, 4), r * r * dim(1, 3)))
    case("pixel_unshuffle_d2s", lambda: T.pixel_unshuffle_d2s(ux, r), {"x": ux})
    logits = _leaf(rng, (m, dim(2, 8)), -3, 3)
    targets = rng.integers(0, logits.shape[1], m)
    case("cross_entropy", lambda: T.cross_entropy_rows(logits, targets), {"logits": logits})
    return cases


def random_nta_config(seed):
    """Small NTA configuration (every dimension <= 16) plus its token grid."""
    rng = SplitMix64(seed)
    heads = rng.choice([1, 2])
    d = heads * rng.choice([2, 3, 4])
    h, w = 2 * rng.integers(1, 4), 2 * rng.integers(1, 4)
    while h * w < 4:
        h, w = 2 * rng.integers(1, 4), 2 * rng.integers(1, 4)
    while True:
        ph, pw = rng.integers(1, h + 1), rng.integers(1, w + 1)
        if ph * pw < h * w:
            break
    cfg = NtaConfig(dim_d=d, pooled_h=ph, pooled_w=pw, heads=heads, gdc_kernel=rng.choice([1, 3]),
                    gdc_dilation=rng.choice([1, 2]), dim_lang=rng.choice([2, 4, 6]),
                    softmax_stage1=bool(rng.integers(0, 5)))
    grid = Tensor(rng.uniform(-1, 1, (h, w, d)), requires_grad=True)
    return cfg, grid, rng


def nta_case(seed, training=None):
    cfg, grid, rng = random_nta_config(seed)
    params = init_nta_params(cfg, seed)
    # perturb affines and biases so no gradient is trivially structured
    for t in params.tensors().values():
        t.data += rng.uniform(-0.2, 0.2, t.shape)
    training = bool(rng.integers(0, 2)) if training is None else training
    out_shape = (grid.shape[0] * grid.shape[1] // 4, cfg.dim_lang)
    weights = Tensor(rng.uniform(-1, 1, out_shape))
    leaves = dict(params.tensors(), tokens=grid)
    return (lambda: _weighted_sum(nta_forward(grid, params, cfg, training), weights)), leaves, cfg


@dataclass
class GradReport:
    errors: dict

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    def ok(self, tol=TOLERANCE):
        return self.max_error <= tol


def run_primitive_suite(seeds):
    """Max relative error per primitive over all seeds."""
    errors = {}
    for seed in seeds:
        for name, (fn, leaves) in primitive_cases(seed).items():
            worst = max(check_gradients(fn, leaves).values())
            errors[name] = max(errors.get(name, 0.0), worst)
    return GradReport(errors)


def run_nta_suite(seeds, groups=True):
    """Max relative error per NTA parameter group (plus the input tokens)."""
    errors = {}
    for seed in seeds:
        fn, leaves, _ = nta_case(seed)
        per_leaf = check_gradients(fn, leaves)
        for leaf, err in per_leaf.items():
            key = leaf
            if groups:
                key = next((g for g, names in NtaParams.GROUPS.items() if leaf in names), leaf)
            errors[key] = max(errors.get(key, 0.0), err)
    return GradReport(errors)
