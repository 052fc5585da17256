from .gradcheck import check_gradients, finite_diff_grad, max_relative_error
from .rng import SplitMix64
from .tensor import (
    Tensor,
    adaptive_avg_pool2d,
    add,
    add_bias,
    as_tensor,
    backward,
    batch_norm2d,
    concat,
    concat_cols,
    concat_rows,
    conv2d,
    conv_output_size,
    cross_entropy_rows,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean_all,
    mul,
    no_grad,
    permute,
    pixel_shuffle_s2d,
    pixel_unshuffle_d2s,
    reshape,
    scale,
    softmax_rows,
    sub,
    sum_all,
    take_cols,
    take_rows,
    transpose,
)
