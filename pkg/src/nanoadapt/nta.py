"""Nano Transformer Adaptor and the two comparison adaptors.

Token grids are (h, w, d) tensors; internally tokens are handled as (N, d)
matrices in row-major grid order and as (d, h, w) maps for convolutions.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .exceptions import ConfigError, DimensionError
from .frontend import PatchTokens
from .tensor import (
    SplitMix64,
    Tensor,
    adaptive_avg_pool2d,
    add_bias,
    batch_norm2d,
    concat_cols,
    conv2d,
    gelu,
    layer_norm,
    linear,
    matmul,
    reshape,
    scale,
    softmax_rows,
    take_cols,
    transpose,
)


@dataclass
class NtaConfig:
    dim_d: int = 64
    pooled_h: int = 12
    pooled_w: int = 12
    heads: int = 4
    gdc_kernel: int = 3
    gdc_dilation: int = 2
    dim_lang: int = 96
    eps: float = 1e-5
    softmax_stage1: bool = True
    use_gdc: bool = True
    bn_momentum: float = 0.1

    @property
    def pooled_count(self):
        return self.pooled_h * self.pooled_w

    @property
    def head_dim(self):
        return self.dim_d // self.heads

    @property
    def gdc_padding(self):
        return self.gdc_dilation * (self.gdc_kernel - 1) // 2

    def validate(self):
        if min(self.dim_d, self.pooled_h, self.pooled_w, self.heads, self.gdc_kernel,
               self.gdc_dilation, self.dim_lang) < 1:
            raise ConfigError("NTA dimensions must be positive")
        if self.dim_d % self.heads:
            raise ConfigError(f"dim_d={self.dim_d} not divisible by heads={self.heads}")
        if self.gdc_dilation * (self.gdc_kernel - 1) % 2:
            raise ConfigError("GDC kernel/dilation cannot preserve spatial size")
        return self


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def _zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape):
    return Tensor(np.ones(shape), requires_grad=True)


class _ParamsMixin:
    """Name -> Tensor views over a params dataclass (buffers excluded)."""

    _buffers = ("bn_running_mean", "bn_running_var")

    def tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in self._buffers}

    def buffers(self):
        return {name: getattr(self, name) for name in self._buffers if hasattr(self, name)}

    def param_shapes(self):
        return {name: t.shape for name, t in self.tensors().items()}

    def to_arrays(self):
        out = {name: t.data for name, t in self.tensors().items()}
        out.update(self.buffers())
        return out

    @classmethod
    def from_arrays(cls, arrays):
        names = {f.name for f in fields(cls)}
        missing = names - set(arrays)
        if missing:
            raise ConfigError(f"missing parameters: {sorted(missing)}")
        kwargs = {}
        for name in names:
            arr = np.asarray(arrays[name], dtype=np.float64)
            kwargs[name] = arr.copy() if name in cls._buffers else Tensor(arr, requires_grad=True)
        return cls(**kwargs)


@dataclass
class NtaParams(_ParamsMixin):
    ln1_gamma: Tensor
    ln1_beta: Tensor
    qkv_weight: Tensor
    qkv_bias: Tensor
    gdc_weight: Tensor
    gdc_bias: Tensor
    bn_gamma: Tensor
    bn_beta: Tensor
    convd_weight: Tensor
    convd_bias: Tensor
    convr_weight: Tensor
    convr_bias: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    bn_running_mean: np.ndarray = field(repr=False, default=None)
    bn_running_var: np.ndarray = field(repr=False, default=None)

    GROUPS = {
        "ln1": ("ln1_gamma", "ln1_beta"),
        "qkv": ("qkv_weight", "qkv_bias"),
        "gdc": ("gdc_weight", "gdc_bias", "bn_gamma", "bn_beta"),
        "convd": ("convd_weight", "convd_bias"),
        "convr": ("convr_weight", "convr_bias"),
        "ln2": ("ln2_gamma", "ln2_beta"),
    }

    def __post_init__(self):
        d = self.ln1_gamma.shape[0]
        if self.bn_running_mean is None:
            self.bn_running_mean = np.zeros(d)
        if self.bn_running_var is None:
            self.bn_running_var = np.ones(d)


def init_nta_params(config, seed=0):
    """Fan-in uniform weights, zero biases, unit/zero norm affines."""
    config.validate()
    rng = SplitMix64(seed)
    d, dl, k = config.dim_d, config.dim_lang, config.gdc_kernel
    return NtaParams(
        ln1_gamma=_ones(d), ln1_beta=_zeros(d),
        qkv_weight=_uniform(rng, d, (d, 3 * d)), qkv_bias=_zeros(3 * d),
        gdc_weight=_uniform(rng, k * k, (d, 1, k, k)), gdc_bias=_zeros(d),
        bn_gamma=_ones(d), bn_beta=_zeros(d),
        convd_weight=_uniform(rng, 4 * d, (dl, d, 2, 2)), convd_bias=_zeros(dl),
        convr_weight=_uniform(rng, d, (dl, d, 1, 1)), convr_bias=_zeros(dl),
        ln2_gamma=_ones(dl), ln2_beta=_zeros(dl),
    )


# ---------------------------------------------------------------- layout helpers


def _as_grid(f):
    values = f.values if isinstance(f, PatchTokens) else f
    if not isinstance(values, Tensor):
        values = Tensor(values)
    if values.ndim != 3:
        raise DimensionError(f"expected an (h, w, d) token grid, got {values.shape}")
    return values


def _to_map(tokens, h, w):
    """(N, d) tokens -> (d, h, w) channel map."""
    return reshape(transpose(tokens), (tokens.shape[1], h, w))


def _to_tokens(fmap):
    c, h, w = fmap.shape
    return transpose(reshape(fmap, (c, h * w)))


# ---------------------------------------------------------------- NTA stages


def nta_norm_project(f, params, config, return_normalized=False):
    """LayerNorm the tokens then split one d -> 3d projection into Q, K, V."""
    grid = _as_grid(f)
    h, w, d = grid.shape
    n_tokens = h * w
    if d != config.dim_d:
        raise DimensionError(f"token dim {d} does not match dim_d={config.dim_d}")
    if n_tokens < config.pooled_count + 1:
        raise ConfigError(f"N={n_tokens} tokens must exceed pooled size n={config.pooled_count}")
    fv = layer_norm(reshape(grid, (n_tokens, d)), params.ln1_gamma, params.ln1_beta, config.eps)
    qkv = linear(fv, params.qkv_weight, params.qkv_bias)
    q, k, v = (take_cols(qkv, i * d, (i + 1) * d) for i in range(3))
    return (q, k, v, fv) if return_normalized else (q, k, v)


def gdc_branch(v, grid_h, grid_w, params, config, training=False):
    """Depthwise dilated conv, batch norm and GeLU on V laid out as a map."""
    vmap = _to_map(v, grid_h, grid_w)
    y = conv2d(vmap, params.gdc_weight, params.gdc_bias, padding=config.gdc_padding,
               dilation=config.gdc_dilation, groups=config.dim_d)
    y = batch_norm2d(y, params.bn_gamma, params.bn_beta, params.bn_running_mean,
                     params.bn_running_var, training, config.bn_momentum, config.eps)
    return _to_tokens(gelu(y))


def pool_queries(qh, grid_h, grid_w, config):
    """Adaptive-average-pool an (N, d_h) query block over the 2D token grid."""
    pooled = adaptive_avg_pool2d(_to_map(qh, grid_h, grid_w), config.pooled_h, config.pooled_w)
    return _to_tokens(pooled)


def pooled_query_attention(q, k, v, grid_h, grid_w, config, params=None, training=False):
    """Two-stage attention through n pooled queries, plus the GDC branch.

    Per head: the pooled queries gather from all keys/values into n slots,
    then every original query reads those slots back using the pooled
    queries as keys. Cost is linear in the token count N.
    """
    n_tokens, d = q.shape
    if k.shape != q.shape or v.shape != q.shape:
        raise DimensionError(f"Q, K, V shapes differ: {q.shape}, {k.shape}, {v.shape}")
    if grid_h * grid_w != n_tokens:
        raise DimensionError(f"grid {grid_h}x{grid_w} does not hold {n_tokens} tokens")
    if config.pooled_count >= n_tokens:
        raise ConfigError(f"pooled size n={config.pooled_count} must be < N={n_tokens}")
    if config.pooled_h > grid_h or config.pooled_w > grid_w:
        raise ConfigError(f"pooled grid {config.pooled_h}x{config.pooled_w} exceeds token grid")
    dh = d // config.heads
    inv = 1.0 / math.sqrt(dh)
    heads = []
    for i in range(config.heads):
        qh, kh, vh = (take_cols(t, i * dh, (i + 1) * dh) for t in (q, k, v))
        pooled = pool_queries(qh, grid_h, grid_w, config)
        scores = scale(matmul(pooled, transpose(kh)), inv)
        if config.softmax_stage1:
            scores = softmax_rows(scores)
        gathered = matmul(scores, vh)
        back = softmax_rows(scale(matmul(qh, transpose(pooled)), inv))
        heads.append(matmul(back, gathered))
    out = heads[0] if len(heads) == 1 else concat_cols(heads)
    if config.use_gdc and params is not None:
        out = out + gdc_branch(v, grid_h, grid_w, params, config, training)
    return out


def projection_head(ftilde, grid_h, grid_w, params, config):
    """LayerNorm(stride-2 conv) plus a pooled 1x1-conv residual, to d_lang."""
    fmap = _to_map(ftilde, grid_h, grid_w)
    down = _to_tokens(conv2d(fmap, params.convd_weight, params.convd_bias, stride=2))
    down = layer_norm(down, params.ln2_gamma, params.ln2_beta, config.eps)
    pooled = adaptive_avg_pool2d(fmap, grid_h // 2, grid_w // 2)
    resid = _to_tokens(conv2d(pooled, params.convr_weight, params.convr_bias))
    return down + resid


def nta_forward(f, params, config, training=False):
    """Full adaptor: (h, w, d) grid -> (h*w/4, d_lang) language tokens."""
    grid = _as_grid(f)
    h, w, _ = grid.shape
    if h % 2 or w % 2:
        raise DimensionError(f"NTA needs even grid dims, got {h}x{w}")
    q, k, v, fv = nta_norm_project(grid, params, config, return_normalized=True)
    ftilde = pooled_query_attention(q, k, v, h, w, config, params, training) + fv
    return projection_head(ftilde, h, w, params, config)


# ---------------------------------------------------------------- baselines


@dataclass
class MlpParams(_ParamsMixin):
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def init_mlp_params(dim_d, dim_lang, hidden=None, seed=0):
    rng = SplitMix64(seed)
    hidden = hidden or dim_lang
    return MlpParams(w1=_uniform(rng, dim_d, (dim_d, hidden)), b1=_zeros(hidden),
                     w2=_uniform(rng, hidden, (hidden, dim_lang)), b2=_zeros(dim_lang))


def baseline_mlp_adaptor(f, params):
    """Two linear layers with GeLU between; token count unchanged."""
    grid = _as_grid(f)
    h, w, d = grid.shape
    if d != params.w1.shape[0]:
        raise DimensionError(f"token dim {d} does not match MLP input {params.w1.shape[0]}")
    x = reshape(grid, (h * w, d))
    return linear(gelu(linear(x, params.w1, params.b1)), params.w2, params.b2)


@dataclass
class VanillaParams(_ParamsMixin):
    ln1_gamma: Tensor
    ln1_beta: Tensor
    qkv_weight: Tensor
    qkv_bias: Tensor
    out_weight: Tensor
    out_bias: Tensor
    convd_weight: Tensor
    convd_bias: Tensor
    convr_weight: Tensor
    convr_bias: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor


def init_vanilla_params(config, seed=0):
    config.validate()
    rng = SplitMix64(seed)
    d, dl = config.dim_d, config.dim_lang
    return VanillaParams(
        ln1_gamma=_ones(d), ln1_beta=_zeros(d),
        qkv_weight=_uniform(rng, d, (d, 3 * d)), qkv_bias=_zeros(3 * d),
        out_weight=_uniform(rng, d, (d, d)), out_bias=_zeros(d),
        convd_weight=_uniform(rng, 4 * d, (dl, d, 2, 2)), convd_bias=_zeros(dl),
        convr_weight=_uniform(rng, d, (dl, d, 1, 1)), convr_bias=_zeros(dl),
        ln2_gamma=_ones(dl), ln2_beta=_zeros(dl),
    )


def dense_attention(q, k, v, heads=1):
    """Multi-head ``softmax(Q K^T / sqrt(d_h)) V`` over all N tokens."""
    n_tokens, d = q.shape
    dh = d // heads
    inv = 1.0 / math.sqrt(dh)
    outs = []
    for i in range(heads):
        qh, kh, vh = (take_cols(t, i * dh, (i + 1) * dh) for t in (q, k, v))
        outs.append(matmul(softmax_rows(scale(matmul(qh, transpose(kh)), inv)), vh))
    return outs[0] if heads == 1 else concat_cols(outs)


def baseline_vanilla_xattn(f, params, config):
    """Same LayerNorm and QKV projection as the NTA, full quadratic attention."""
    grid = _as_grid(f)
    h, w, d = grid.shape
    if d != config.dim_d:
        raise DimensionError(f"token dim {d} does not match dim_d={config.dim_d}")
    fv = layer_norm(reshape(grid, (h * w, d)), params.ln1_gamma, params.ln1_beta, config.eps)
    qkv = linear(fv, params.qkv_weight, params.qkv_bias)
    q, k, v = (take_cols(qkv, i * d, (i + 1) * d) for i in range(3))
    return dense_attention(q, k, v, config.heads)


def vanilla_adaptor_forward(f, params, config):
    """NTA layout with pooled attention swapped for dense attention plus an output projection."""
    grid = _as_grid(f)
    h, w, d = grid.shape
    if h % 2 or w % 2:
        raise DimensionError(f"adaptor needs even grid dims, got {h}x{w}")
    fv = layer_norm(reshape(grid, (h * w, d)), params.ln1_gamma, params.ln1_beta, config.eps)
    qkv = linear(fv, params.qkv_weight, params.qkv_bias)
    q, k, v = (take_cols(qkv, i * d, (i + 1) * d) for i in range(3))
    attn = linear(dense_attention(q, k, v, config.heads), params.out_weight, params.out_bias)
    return projection_head(attn + fv, h, w, params, config)
