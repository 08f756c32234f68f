"""Minimal reverse-mode automatic differentiation."""

from clqlab.autodiff.gradcheck import NonFiniteError, grad_check
from clqlab.autodiff.optim import Parameter, ParameterSet, sgd_step
from clqlab.autodiff.tensor import (
    ShapeError,
    Tensor,
    abs_,
    add,
    as_tensor,
    bilinear_sample,
    clip,
    concat,
    conv2d,
    div,
    exp,
    index,
    log,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    stack,
    sub,
    sum_,
    track_kinks,
    transpose,
)

__all__ = [
    "NonFiniteError", "Parameter", "ParameterSet", "ShapeError", "Tensor",
    "abs_", "add", "as_tensor", "bilinear_sample", "clip", "concat", "conv2d",
    "div", "exp", "grad_check", "index", "log", "matmul", "maximum", "mean",
    "minimum", "mul", "no_grad", "power", "relu", "reshape", "sgd_step",
    "sigmoid", "stack", "sub", "sum_", "track_kinks", "transpose",
]
