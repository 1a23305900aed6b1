"""Minimal reverse-mode differentiation substrate.

Everything downstream (encoders, output heads, consensus losses) is built
from the primitives in :mod:`pledgespec.diffcore.ops`, recorded on an
explicit tape and differentiated by one backward sweep.  No higher-order
derivatives, no broadcasting beyond what those graphs need.
"""

from pledgespec.diffcore.tape import (
    ParameterStore,
    ShapeError,
    Tape,
    Var,
    active_tape,
    evaluate,
)
from pledgespec.diffcore.optim import Adam, NonFiniteGradientError
from pledgespec.diffcore.check import gradient_check
from pledgespec.diffcore.serialize import ContainerError, load_tensors, save_tensors

__all__ = [
    "Adam",
    "ContainerError",
    "NonFiniteGradientError",
    "ParameterStore",
    "ShapeError",
    "Tape",
    "Var",
    "active_tape",
    "evaluate",
    "gradient_check",
    "load_tensors",
    "save_tensors",
]
