"""Small float64 autodiff engine: reverse mode on a tape, forward mode on duals."""

from .core import (
    PRIMITIVES,
    DualTensor,
    NumericError,
    Primitive,
    ShapeError,
    Tape,
    Tensor,
    Var,
    apply,
    backward,
    check_finite,
    jvp,
    register,
    tensor,
    value_of,
)
from .ops import (
    add,
    affine,
    concat_last_dim,
    matmul,
    mean,
    mul_scalar,
    silu,
    sin_cos_features,
    sub,
    sum_sq,
)
from .optim import AdamState, adam_step
from .rng import Rng, derive_seed, make_rng

__all__ = [
    "PRIMITIVES", "AdamState", "DualTensor", "NumericError", "Primitive", "Rng", "ShapeError",
    "Tape", "Tensor", "Var", "adam_step", "add", "affine", "apply", "backward", "check_finite",
    "concat_last_dim", "derive_seed", "jvp", "make_rng", "matmul", "mean", "mul_scalar",
    "register", "silu", "sin_cos_features", "sub", "sum_sq", "tensor", "value_of",
]
