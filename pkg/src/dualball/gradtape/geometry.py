"""Differentiable counterparts of the :mod:`dualball.hypmath` kernel.

The formulas match ``hypmath`` line for line, but are expressed in tape
operations so gradients flow through them.  ``hypmath`` remains the
reference used by finite-difference checks.
"""

from __future__ import annotations

import numpy as np

from . import tape as T
from .tape import Var


def _sq(x: Var) -> Var:
    return T.vsum(x * x, axis=-1, keepdims=True)


def clip_to_ball(h, c: float, eps_bnd: float = 0.05) -> Var:
    """Radial projection with its true Jacobian (not straight-through)."""
    h = T.as_var(h)
    rmax = (1.0 - eps_bnd) / np.sqrt(c)
    r = T.norm(h)
    return h * (rmax / T.maximum(r, rmax))


def exp0(v, c: float, eps_bnd: float | None = 0.05) -> Var:
    v = T.as_var(v)
    sc = np.sqrt(c)
    n = T.maximum(T.norm(v), T.MIN_NORM)
    h = T.tanh(sc * n) / (sc * n) * v
    return h if eps_bnd is None else clip_to_ball(h, c, eps_bnd)


def log0(h, c: float) -> Var:
    h = T.as_var(h)
    sc = np.sqrt(c)
    n = T.maximum(T.norm(h), T.MIN_NORM)
    return T.artanh(sc * n) / (sc * n) * h


def mobius_add(x, y, c: float) -> Var:
    x, y = T.as_var(x), T.as_var(y)
    xy = T.vsum(x * y, axis=-1, keepdims=True)
    x2, y2 = _sq(x), _sq(y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c**2 * x2 * y2
    return num / den


def poincare_dist(x, y, c: float) -> Var:
    """Distance per row; returns shape ``(...,)``."""
    sc = np.sqrt(c)
    diff = T.norm(mobius_add(-T.as_var(x), y, c), keepdims=False)
    return (2.0 / sc) * T.artanh(sc * diff)


def isometric_rescale(x, c1: float, c2: float) -> Var:
    x = T.as_var(x)
    r = T.maximum(T.norm(x), T.MIN_NORM)
    alpha = T.artanh(np.sqrt(c1) * r) / np.sqrt(c1)
    rho = T.tanh(np.sqrt(c2) * alpha) / np.sqrt(c2)
    return rho / r * x


def clip_norm(v, bound: float) -> Var:
    """Scale rows of ``v`` so their norm is at most ``bound``."""
    v = T.as_var(v)
    return v * (bound / T.maximum(T.norm(v), bound))


def squash_tangent(u, bound: float) -> Var:
    """Smooth radial bound ``bound * tanh(|u| / bound) * u / |u|``."""
    u = T.as_var(u)
    n = T.maximum(T.norm(u), T.MIN_NORM)
    return u * (bound * T.tanh(n * (1.0 / bound)) / n)
