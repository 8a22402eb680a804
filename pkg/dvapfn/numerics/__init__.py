"""
Numerical substrate: fp64 tensors with a reverse-mode tape, SPD algebra and
seeded random streams.
"""
from dvapfn.numerics.linalg import cholesky, jitter_schedule, sample_mvn
from dvapfn.numerics.rng import SeededRng, derive_seed
from dvapfn.numerics.tensor import (
    DimensionError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat_cols,
    concat_rows,
    conv1d_depthwise,
    div,
    elu_plus_one,
    exp,
    gelu,
    gradcheck,
    layer_norm,
    log,
    log_softmax_rows,
    matmul,
    mul,
    neg,
    reduce_mean,
    reduce_sum,
    row_sq_norms,
    slice_cols,
    slice_rows,
    softmax_rows,
    sub,
    take_rows,
    transpose,
)
