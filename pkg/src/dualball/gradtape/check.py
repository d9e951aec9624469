"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tape as T
from .tape import Var


@dataclass
class GradCheckReport:
    tol: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale, initial=0.0))


def numeric_grad(fn: Callable[[], Var], p: Var, step: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(p.value)
    flat = p.value.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(fn().value)
        flat[i] = orig - step
        down = float(fn().value)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


def grad_check(fn: Callable[[], Var], params: Sequence[Var], tol: float = 1e-4,
               step: float = 1e-5, names: Sequence[str] | None = None) -> GradCheckReport:
    """Compare tape gradients of the scalar ``fn()`` with central differences.

    ``fn`` must rebuild its graph from the current parameter values on every
    call and must be deterministic.
    """
    names = list(names) if names is not None else [f"p{i}" for i in range(len(params))]
    report = GradCheckReport(tol=tol)
    if not params:
        return report
    T.zero_grad(params)
    analytic = [g.copy() for g in T.backward(fn(), params)]
    T.zero_grad(params)
    for name, p, a in zip(names, params, analytic):
        report.errors[name] = relative_error(a, numeric_grad(fn, p, step))
    return report
