"""Minimal reverse-mode automatic differentiation over float64 numpy arrays."""
from .gradcheck import GRAD_CHECK_CASES, NonDeterministicError, check_all, check_op, grad_check
from .ops import OPS, clamped_log_prob, forward_op
from .optim import Adam, AdamState, adam_step
from .tensor import NonFiniteError, ShapeError, Tensor, backward

__all__ = [
    "Adam",
    "AdamState",
    "GRAD_CHECK_CASES",
    "NonDeterministicError",
    "NonFiniteError",
    "OPS",
    "ShapeError",
    "Tensor",
    "adam_step",
    "backward",
    "check_all",
    "check_op",
    "clamped_log_prob",
    "forward_op",
    "grad_check",
]
