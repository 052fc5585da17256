"""Analytic parameter / FLOP accounting and wall-time scaling of the adaptors.

FLOP conventions: a multiply-accumulate is 2 FLOPs (matmul ``2mkp``, conv
``2*Cout*H'*W'*(Cin/groups)*kh*kw``); bias adds, residual adds and scalings
cost 1 per element; softmax, layer/batch norm and GeLU cost 5 per element;
an average pool costs one add per input element in each bin plus one divide
per output. Reshapes, transposes and pixel shuffles are free.
"""

import csv
import io
import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DimensionError
from .nta import (
    NtaConfig,
    baseline_mlp_adaptor,
    dense_attention,
    init_mlp_params,
    init_nta_params,
    init_vanilla_params,
    nta_forward,
    pooled_query_attention,
    vanilla_adaptor_forward,
)
from .tensor import SplitMix64, Tensor, conv_output_size, no_grad

NORM_FLOPS = 5


@dataclass
class CostReport:
    module: str
    params: int = 0
    breakdown: dict = field(default_factory=dict)

    @property
    def flops(self):
        return sum(self.breakdown.values())

    def add(self, name, flops):
        self.breakdown[name] = self.breakdown.get(name, 0) + int(flops)
        return self

    def __add__(self, other):
        out = CostReport(f"{self.module}+{other.module}", self.params + other.params, dict(self.breakdown))
        for k, v in other.breakdown.items():
            out.add(k, v)
        return out


# ---------------------------------------------------------------- primitive costs


def matmul_flops(m, k, p):
    return 2 * m * k * p


def conv_flops(cin, cout, h, w, kh, kw, stride=1, padding=0, dilation=1, groups=1, bias=True):
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    return 2 * cout * ho * wo * (cin // groups) * kh * kw + (cout * ho * wo if bias else 0)


def pool_flops(c, h, w, out_h, out_w):
    rows = [math.ceil((i + 1) * h / out_h) - math.floor(i * h / out_h) for i in range(out_h)]
    cols = [math.ceil((j + 1) * w / out_w) - math.floor(j * w / out_w) for j in range(out_w)]
    return c * (sum(rows) * sum(cols) + out_h * out_w)


# ---------------------------------------------------------------- module costs


def grid_for(n_tokens):
    """Near-square (h, w) grid with h a power of two and h * w = N."""
    h = 2 ** (int(math.log2(n_tokens)) // 2)
    if n_tokens % h:
        raise DimensionError(f"cannot lay {n_tokens} tokens on a power-of-two grid")
    return h, n_tokens // h


def pqa_cost(config, grid_h, grid_w, include_gdc=True):
    """Pooled-query attention on an h x w grid (QKV projection excluded)."""
    n_tokens, d, n = grid_h * grid_w, config.dim_d, config.pooled_count
    dh, heads = config.head_dim, config.heads
    r = CostReport("pooled_attention")
    r.add("pool_q", heads * pool_flops(dh, grid_h, grid_w, config.pooled_h, config.pooled_w))
    r.add("matmul_qK", heads * matmul_flops(n, dh, n_tokens))
    r.add("scale", heads * n * n_tokens)
    if config.softmax_stage1:
        r.add("softmax", heads * NORM_FLOPS * n * n_tokens)
    r.add("matmul_SV", heads * matmul_flops(n, n_tokens, dh))
    r.add("matmul_Qq", heads * matmul_flops(n_tokens, dh, n))
    r.add("scale", heads * n_tokens * n)
    r.add("softmax", heads * NORM_FLOPS * n_tokens * n)
    r.add("matmul_PA", heads * matmul_flops(n_tokens, n, dh))
    if include_gdc and config.use_gdc:
        k, p, dil = config.gdc_kernel, config.gdc_padding, config.gdc_dilation
        r.params += d * k * k + d + 2 * d
        r.add("gdc_conv", conv_flops(d, d, grid_h, grid_w, k, k, 1, p, dil, groups=d))
        r.add("gdc_norm_act", 2 * NORM_FLOPS * d * n_tokens)
        r.add("residual", d * n_tokens)
    return r


def vanilla_attention_cost(n_tokens, d, heads=1):
    dh = d // heads
    r = CostReport("vanilla_attention")
    r.add("matmul_QK", heads * matmul_flops(n_tokens, dh, n_tokens))
    r.add("scale", heads * n_tokens * n_tokens)
    r.add("softmax", heads * NORM_FLOPS * n_tokens * n_tokens)
    r.add("matmul_AV", heads * matmul_flops(n_tokens, n_tokens, dh))
    return r


def _stem_cost(r, n_tokens, d):
    r.params += 2 * d + 3 * d * d + 3 * d
    r.add("layernorm", NORM_FLOPS * n_tokens * d)
    r.add("qkv", matmul_flops(n_tokens, d, 3 * d) + 3 * n_tokens * d)


def _head_cost(r, config, grid_h, grid_w):
    d, dl = config.dim_d, config.dim_lang
    ho, wo = grid_h // 2, grid_w // 2
    r.params += 4 * d * dl + dl + d * dl + dl + 2 * dl
    r.add("conv_down", conv_flops(d, dl, grid_h, grid_w, 2, 2, stride=2))
    r.add("layernorm", NORM_FLOPS * ho * wo * dl)
    r.add("pool_residual", pool_flops(d, grid_h, grid_w, ho, wo))
    r.add("conv_residual", conv_flops(d, dl, ho, wo, 1, 1))
    r.add("residual", ho * wo * dl)


def nta_cost(config, grid_h, grid_w):
    n_tokens, d = grid_h * grid_w, config.dim_d
    r = CostReport("nta")
    _stem_cost(r, n_tokens, d)
    r = r + pqa_cost(config, grid_h, grid_w)
    r.module = "nta"
    r.add("residual", n_tokens * d)
    _head_cost(r, config, grid_h, grid_w)
    return r


def vanilla_adaptor_cost(config, grid_h, grid_w):
    n_tokens, d = grid_h * grid_w, config.dim_d
    r = CostReport("vanilla_adaptor")
    _stem_cost(r, n_tokens, d)
    r = r + vanilla_attention_cost(n_tokens, d, config.heads)
    r.module = "vanilla_adaptor"
    r.params += d * d + d
    r.add("out_proj", matmul_flops(n_tokens, d, d) + n_tokens * d)
    r.add("residual", n_tokens * d)
    _head_cost(r, config, grid_h, grid_w)
    return r


def mlp_cost(n_tokens, d, hidden, dim_lang):
    r = CostReport("mlp", params=d * hidden + hidden + hidden * dim_lang + dim_lang)
    r.add("fc1", matmul_flops(n_tokens, d, hidden) + n_tokens * hidden)
    r.add("gelu", NORM_FLOPS * n_tokens * hidden)
    r.add("fc2", matmul_flops(n_tokens, hidden, dim_lang) + n_tokens * dim_lang)
    return r


# ---------------------------------------------------------------- simple specs


@dataclass
class LinearSpec:
    d_in: int
    d_out: int
    bias: bool = True

    def param_shapes(self):
        shapes = {"weight": (self.d_in, self.d_out)}
        if self.bias:
            shapes["bias"] = (self.d_out,)
        return shapes

    def cost(self, input_shape):
        n, d = input_shape
        if d != self.d_in:
            raise DimensionError(f"linear expects width {self.d_in}, got {d}")
        r = CostReport("linear", count_params(self))
        r.add("matmul", matmul_flops(n, d, self.d_out))
        if self.bias:
            r.add("bias", n * self.d_out)
        return r


@dataclass
class PixelShuffleSpec:
    rate: int = 2

    def param_shapes(self):
        return {}

    def cost(self, input_shape):
        h, w, _ = input_shape
        if h % self.rate or w % self.rate:
            raise DimensionError(f"grid {h}x{w} not divisible by {self.rate}")
        return CostReport("pixel_shuffle")


def count_params(module):
    """Exact scalar parameter count.

    Accepts anything exposing ``param_shapes()`` or ``tensors()``, or a
    mapping of names to shapes/arrays.
    """
    if hasattr(module, "param_shapes"):
        shapes = module.param_shapes().values()
    elif hasattr(module, "tensors"):
        shapes = [t.shape for t in module.tensors().values()]
    else:
        shapes = [getattr(v, "shape", v) for v in module.values()]
    return sum(int(np.prod(s, dtype=np.int64)) for s in shapes)


def count_flops(module, input_shape):
    """Analytic FLOPs of ``module`` at ``input_shape`` as a CostReport."""
    if not hasattr(module, "cost"):
        raise TypeError(f"{type(module).__name__} has no cost model")
    return module.cost(tuple(input_shape))


# ---------------------------------------------------------------- scaling bench


@dataclass
class BenchRow:
    module: str
    N: int
    params: int
    flops: int
    wall_ns_median: int


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    def to_dict(self):
        return {"rows": [asdict(r) for r in self.rows], "slopes": self.slopes}

    @classmethod
    def from_dict(cls, obj):
        return cls([BenchRow(**r) for r in obj["rows"]], dict(obj["slopes"]))


def loglog_slope(xs, ys):
    """Least-squares slope of log2(y) against log2(x)."""
    lx = np.log2(np.asarray(xs, dtype=np.float64))
    ly = np.log2(np.asarray(ys, dtype=np.float64))
    lx = lx - lx.mean()
    return float((lx * (ly - ly.mean())).sum() / (lx * lx).sum())


def time_call(fn, trials=5, warmup=2, min_ns=2_000_000):
    """Median ns per call; inner repetitions grow until a trial lasts ``min_ns``."""
    for _ in range(warmup):
        fn()
    reps = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(reps):
            fn()
        if time.perf_counter_ns() - t0 >= min_ns or reps >= 1 << 16:
            break
        reps *= 2
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter_ns()
        for _ in range(reps):
            fn()
        samples.append((time.perf_counter_ns() - t0) / reps)
    return int(statistics.median(samples))


ADAPTORS = ("pooled_attention", "vanilla_attention", "nta", "vanilla_adaptor", "mlp")


def _bench_case(name, n_tokens, config, seed):
    """(params, flops, zero-arg callable) for one adaptor at N tokens."""
    h, w = grid_for(n_tokens)
    d = config.dim_d
    rng = SplitMix64(seed)
    if name in ("pooled_attention", "vanilla_attention"):
        q, k, v = (Tensor(rng.normal((n_tokens, d))) for _ in range(3))
        if name == "pooled_attention":
            params = init_nta_params(config, seed)
            cost = pqa_cost(config, h, w)
            return cost.params, cost.flops, lambda: pooled_query_attention(q, k, v, h, w, config, params)
        cost = vanilla_attention_cost(n_tokens, d, config.heads)
        return cost.params, cost.flops, lambda: dense_attention(q, k, v, config.heads)
    grid = Tensor(rng.normal((h, w, d)))
    if name == "nta":
        params, cost = init_nta_params(config, seed), nta_cost(config, h, w)
        return cost.params, cost.flops, lambda: nta_forward(grid, params, config)
    if name == "vanilla_adaptor":
        params, cost = init_vanilla_params(config, seed), vanilla_adaptor_cost(config, h, w)
        return cost.params, cost.flops, lambda: vanilla_adaptor_forward(grid, params, config)
    if name == "mlp":
        params = init_mlp_params(d, config.dim_lang, seed=seed)
        cost = mlp_cost(n_tokens, d, config.dim_lang, config.dim_lang)
        return cost.params, cost.flops, lambda: baseline_mlp_adaptor(grid, params)
    raise ValueError(f"unknown adaptor {name!r}; choose from {ADAPTORS}")


def run_scaling_bench(adaptors=("pooled_attention", "vanilla_attention"), n_list=(256, 512, 1024, 2048, 4096),
                      config=None, trials=5, seed=0, timed=True):
    """Analytic FLOPs and median wall time per (adaptor, N).

    Slopes are least-squares log-log fits over the three largest N.
    """
    config = (config or NtaConfig()).validate()
    n_list = sorted(int(n) for n in n_list)
    if len(n_list) < 3 or len(set(n_list)) != len(n_list):
        raise DimensionError("need at least three distinct N values")
    report = BenchReport()
    with no_grad():
        for name in adaptors:
            rows = []
            for n_tokens in n_list:
                params, flops, fn = _bench_case(name, n_tokens, config, seed)
                wall = time_call(fn, trials) if timed else 0
                rows.append(BenchRow(name, n_tokens, params, flops, wall))
            report.rows += rows
            top = rows[-3:]
            report.slopes[name] = {
                "flops": loglog_slope([r.N for r in top], [r.flops for r in top]),
                "wall": loglog_slope([r.N for r in top], [r.wall_ns_median for r in top]) if timed else None,
            }
    return report


CSV_FIELDS = ("module", "N", "params", "flops", "wall_ns_median")


def render_report(report, fmt="csv"):
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in report.rows:
        writer.writerow([getattr(r, f) for f in CSV_FIELDS])
    return buf.getvalue()


def emit_report(report, path, fmt="csv"):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_report(report, fmt))
    return path


def load_report(path):
    with open(path, encoding="utf-8") as fh:
        return BenchReport.from_dict(json.load(fh))
