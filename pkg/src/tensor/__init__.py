"""Minimal float64 tensor engine with reverse-mode differentiation"""
from .tensor import Tensor, GradTape, no_grad, current_tape, set_debug_numerics
from .rng import Rng
from .params import ParameterTable, constants
from .gradcheck import finite_diff_check

__all__ = [
    "Tensor",
    "GradTape",
    "no_grad",
    "current_tape",
    "set_debug_numerics",
    "Rng",
    "ParameterTable",
    "constants",
    "finite_diff_check",
]
