"""Dense numerics: taped array primitives, seeded RNG, gradient checks."""

from .autodiff import (
    Tape,
    Var,
    absolute,
    add,
    backward,
    clip,
    concat,
    div,
    exp,
    expand_dims,
    log,
    matmul,
    maximum,
    mean,
    mul,
    neg,
    node_matmul,
    pack_upper,
    relu,
    reshape,
    scale,
    sigmoid,
    square,
    sub,
    sum_,
    sum_of_squares,
    transpose,
    unpack_upper,
    value,
)
from .gradcheck import grad_check, grad_check_report
from .rng import RngState, as_generator, gaussian, gaussian_matrix, uniform

__all__ = [
    "RngState", "Tape", "Var", "absolute", "add", "as_generator", "backward", "clip",
    "concat", "div", "exp", "expand_dims", "gaussian", "gaussian_matrix", "grad_check",
    "grad_check_report", "log", "matmul", "maximum", "mean", "mul", "neg", "node_matmul",
    "pack_upper", "relu", "reshape", "scale", "sigmoid", "square", "sub", "sum_",
    "sum_of_squares", "transpose", "uniform", "unpack_upper", "value",
]
