"""Poincare-ball geometry kernel.

All functions are pure and operate on the last axis of numpy arrays, so a
batch of points is an array of shape ``(..., n)``.  The ball of curvature
``c`` is the open Euclidean ball of radius ``1/sqrt(c)``.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

EPS_BND = 0.05
# artanh arguments are clamped here so boundary-adjacent inputs stay finite.
ARTANH_MAX = 1.0 - 1e-15
MIN_NORM = 1e-15


def _check_c(c: float) -> float:
    c = float(c)
    if not np.isfinite(c) or c <= 0:
        raise DomainError(f"curvature must be a positive finite number, got {c}")
    return c


def _finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite input")


def _norm(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x, axis=-1, keepdims=True)


def artanh(x):
    return np.arctanh(np.clip(x, -ARTANH_MAX, ARTANH_MAX))


def check_curvature_ratio(c_e: float, c_a: float, lo: float = 0.5, hi: float = 2.0) -> float:
    """Return ``c_e/c_a`` or raise when it falls outside ``[lo, hi]``."""
    ratio = _check_c(c_e) / _check_c(c_a)
    if not lo <= ratio <= hi:
        raise DomainError(f"curvature ratio c_E/c_A={ratio:.4g} outside [{lo}, {hi}]")
    return ratio


def max_radius(c: float, eps_bnd: float = EPS_BND) -> float:
    return (1.0 - eps_bnd) / np.sqrt(c)


def _require_interior(h: np.ndarray, c: float) -> np.ndarray:
    r = _norm(h)
    if np.any(r * np.sqrt(c) >= 1.0):
        raise DomainError("point lies on or outside the ball boundary")
    return r


def clip_to_ball(h, c: float, eps_bnd: float = EPS_BND):
    """Radially project ``h`` into the ball of radius ``(1-eps_bnd)/sqrt(c)``.

    Returns the projected array and a boolean array (shape ``h.shape[:-1]``)
    marking which rows were rescaled.
    """
    c = _check_c(c)
    if not 0.0 < eps_bnd < 1.0:
        raise DomainError(f"eps_bnd must lie in (0, 1), got {eps_bnd}")
    h = np.asarray(h, dtype=float)
    r = _norm(h)
    rmax = max_radius(c, eps_bnd)
    clipped = r >= rmax
    scale = np.where(clipped, rmax / np.maximum(r, MIN_NORM), 1.0)
    return h * scale, clipped[..., 0]


def _maybe_clip(h, c, eps_bnd):
    return h if eps_bnd is None else clip_to_ball(h, c, eps_bnd)[0]


def exp0(v, c: float, eps_bnd: float | None = EPS_BND) -> np.ndarray:
    """Exponential map at the origin followed by radial clipping.

    ``eps_bnd=None`` disables clipping (the raw closed form).
    """
    c = _check_c(c)
    v = np.asarray(v, dtype=float)
    _finite(v)
    sc = np.sqrt(c)
    n = np.maximum(_norm(v), MIN_NORM)
    h = np.tanh(sc * n) / (sc * n) * v
    return _maybe_clip(h, c, eps_bnd)


def log0(h, c: float) -> np.ndarray:
    """Logarithmic map at the origin; inverse of :func:`exp0` on unclipped points."""
    c = _check_c(c)
    h = np.asarray(h, dtype=float)
    _finite(h)
    r = _require_interior(h, c)
    sc = np.sqrt(c)
    n = np.maximum(r, MIN_NORM)
    return artanh(sc * n) / (sc * n) * h


def _mobius_add_raw(x, y, c):
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2 = np.sum(x * x, axis=-1, keepdims=True)
    y2 = np.sum(y * y, axis=-1, keepdims=True)
    num = (1 + 2 * c * xy + c * y2) * x + (1 - c * x2) * y
    den = 1 + 2 * c * xy + c**2 * x2 * y2
    return num / np.maximum(den, MIN_NORM)


def mobius_add(x, y, c: float, eps_bnd: float | None = EPS_BND, c_y: float | None = None) -> np.ndarray:
    """Gyrovector addition ``x (+)_c y``, clipped to the interior.

    ``c_y`` may be passed to assert that ``y`` lives on the same ball.
    """
    c = _check_c(c)
    if c_y is not None and _check_c(c_y) != c:
        raise DomainError(f"curvature mismatch: {c} vs {c_y}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _finite(x, y)
    return _maybe_clip(_mobius_add_raw(x, y, c), c, eps_bnd)


def poincare_dist(x, y, c: float, c_y: float | None = None) -> np.ndarray:
    """Geodesic distance ``(2/sqrt c) artanh(sqrt c ||(-x) (+) y||)``.

    Returns an array of shape ``broadcast(x, y).shape[:-1]``.
    """
    c = _check_c(c)
    if c_y is not None and _check_c(c_y) != c:
        raise DomainError(f"curvature mismatch: {c} vs {c_y}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _finite(x, y)
    _require_interior(x, c)
    _require_interior(y, c)
    sc = np.sqrt(c)
    diff = _norm(_mobius_add_raw(-x, y, c))[..., 0]
    return 2.0 / sc * artanh(sc * diff)


def conformal_factor(h, c: float) -> np.ndarray:
    """``2 / (1 - c||h||^2)``, shape ``h.shape[:-1]``."""
    c = _check_c(c)
    h = np.asarray(h, dtype=float)
    _finite(h)
    r = _require_interior(h, c)[..., 0]
    return 2.0 / (1.0 - c * r**2)


def exp_at(w, v, c: float, eps_bnd: float | None = EPS_BND) -> np.ndarray:
    """Exponential map at an arbitrary base point ``w``."""
    c = _check_c(c)
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    _finite(w, v)
    lam = conformal_factor(w, c)[..., None]
    sc = np.sqrt(c)
    n = np.maximum(_norm(v), MIN_NORM)
    second = np.tanh(sc * lam * n / 2.0) * v / (sc * n)
    return _maybe_clip(_mobius_add_raw(w, second, c), c, eps_bnd)


def log_at(w, y, c: float) -> np.ndarray:
    """Logarithmic map at ``w``: the tangent vector at ``w`` pointing to ``y``."""
    c = _check_c(c)
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    _finite(w, y)
    lam = conformal_factor(w, c)[..., None]
    _require_interior(y, c)
    sc = np.sqrt(c)
    u = _mobius_add_raw(-w, y, c)
    n = np.maximum(_norm(u), MIN_NORM)
    return 2.0 / (sc * lam) * artanh(sc * n) * u / n


def linear_rescale(x, c1: float, c2: float) -> np.ndarray:
    """Scale ``x`` by ``sqrt(c1/c2)``, carrying ``B^{c1}`` onto ``B^{c2}``."""
    c1, c2 = _check_c(c1), _check_c(c2)
    return np.sqrt(c1 / c2) * np.asarray(x, dtype=float)


def isometric_rescale(x, c1: float, c2: float) -> np.ndarray:
    """Radial diffeomorphism ``B^{c1} -> B^{c2}`` preserving distance to the origin.

    The radius ``r`` maps to ``tanh(sqrt(c2) a) / sqrt(c2)`` with
    ``a = artanh(sqrt(c1) r) / sqrt(c1)``; directions are unchanged.
    """
    c1, c2 = _check_c(c1), _check_c(c2)
    x = np.asarray(x, dtype=float)
    _finite(x)
    r = _require_interior(x, c1)
    alpha = artanh(np.sqrt(c1) * r) / np.sqrt(c1)
    rho = np.tanh(np.sqrt(c2) * alpha) / np.sqrt(c2)
    return np.where(r > MIN_NORM, rho / np.maximum(r, MIN_NORM), 1.0) * x


def volume_weight(h, c: float, n: int | None = None, inverted: bool = False) -> np.ndarray:
    """Importance weight ``(1 - c||h||^2)^{-n}``.

    ``inverted=True`` returns the reciprocal ``(1 - c||h||^2)^{+n}``.
    ``n`` defaults to the ambient dimension ``h.shape[-1]``.
    """
    c = _check_c(c)
    h = np.asarray(h, dtype=float)
    if n is None:
        n = h.shape[-1]
    r = _require_interior(h, c)[..., 0]
    base = 1.0 - c * r**2
    return base**n if inverted else base ** (-n)


def log_volume_weight(h, c: float, n: int | None = None, inverted: bool = False) -> np.ndarray:
    """Natural log of :func:`volume_weight`; stable for large ``n``."""
    c = _check_c(c)
    h = np.asarray(h, dtype=float)
    if n is None:
        n = h.shape[-1]
    r = _require_interior(h, c)[..., 0]
    lb = np.log1p(-c * r**2)
    return n * lb if inverted else -n * lb


def squash_tangent(u, bound: float) -> np.ndarray:
    """Smooth radial bound ``bound * tanh(|u| / bound) * u / |u|`` on tangent vectors."""
    u = np.asarray(u, dtype=float)
    n = np.maximum(_norm(u), MIN_NORM)
    return u * (bound * np.tanh(n / bound) / n)


def tangent_bound(c: float, eps_bnd: float = EPS_BND, fraction: float = 0.9) -> float:
    """``fraction`` of the tangent norm at which ``exp0`` reaches the clip radius."""
    return float(fraction * artanh(np.sqrt(c) * max_radius(c, eps_bnd)) / np.sqrt(c))
