"""Reverse-mode automatic differentiation over dense float64 tensors"""
from daepinn.autodiff._check import grad_check
from daepinn.autodiff._tape import Tape, tape_context
from daepinn.autodiff._tensor import (
    Tensor,
    add,
    affine,
    concat,
    constant,
    cos,
    div,
    getitem,
    matmul,
    mul,
    neg,
    reduce_mean,
    reduce_sum,
    reshape,
    scale,
    sin,
    softplus,
    square,
    stack,
    sub,
    variable,
)

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "affine",
    "concat",
    "constant",
    "cos",
    "div",
    "getitem",
    "grad_check",
    "matmul",
    "mul",
    "neg",
    "reduce_mean",
    "reduce_sum",
    "reshape",
    "scale",
    "sin",
    "softplus",
    "square",
    "stack",
    "sub",
    "tape_context",
    "variable",
]
