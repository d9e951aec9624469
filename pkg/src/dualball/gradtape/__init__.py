"""Minimal reverse-mode differentiation for the models in this package."""

from . import geometry, tape
from .check import GradCheckReport, grad_check, numeric_grad, relative_error
from .layers import MLP, DenseLayer, Module
from .tape import Var, as_var, backward, gradients, parameter, zero_grad

__all__ = [
    "DenseLayer",
    "GradCheckReport",
    "MLP",
    "Module",
    "Var",
    "as_var",
    "backward",
    "geometry",
    "grad_check",
    "gradients",
    "numeric_grad",
    "parameter",
    "relative_error",
    "tape",
    "zero_grad",
]
