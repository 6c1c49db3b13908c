"""Array math, FFTs, reverse-mode differentiation, and the Adam optimizer."""

from .autodiff import (
    GradientRecord,
    Tensor,
    add,
    backpropagate,
    backward,
    complex_contract,
    concatenate,
    div,
    gelu,
    getitem,
    irfft,
    matmul,
    mean,
    moveaxis,
    mul,
    neg,
    power,
    reshape,
    rfft,
    sub,
    tanh,
    tensor,
    tsum,
    value_of,
)
from .checks import GradCheckReport, grad_check
from .optim import AdamState, adam_step, init_adam

__all__ = [
    "AdamState",
    "GradCheckReport",
    "GradientRecord",
    "Tensor",
    "add",
    "adam_step",
    "backpropagate",
    "backward",
    "complex_contract",
    "concatenate",
    "div",
    "gelu",
    "getitem",
    "grad_check",
    "init_adam",
    "irfft",
    "matmul",
    "mean",
    "moveaxis",
    "mul",
    "neg",
    "power",
    "reshape",
    "rfft",
    "sub",
    "tanh",
    "tensor",
    "tsum",
    "value_of",
]
