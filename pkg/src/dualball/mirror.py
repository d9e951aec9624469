"""Learnable mirror maps between the emotion ball ``B^{c_E}`` and the
anti-emotion ball ``B^{c_A}``.

Both directions are tangent-space residual maps::

    g(h) = exp0^{c_A}( u + clip_beta(R_phi(u)) ),   u = log0^{c_E}(h)
    f(h) = exp0^{c_E}( u + clip_beta(R_psi(u)) ),   u = log0^{c_A}(h)

so ``f(g(h)) == h`` exactly when both residual networks output zero.
"""

from __future__ import annotations

import numpy as np

from . import hypmath as hm
from .errors import ContractError, DomainError
from .gradtape import MLP, Module, Var
from .gradtape import geometry as G
from .gradtape import tape as T


def residual_bound(c: float, margin: float = 0.9) -> float:
    """``beta`` with ``tanh(sqrt(c) beta)/sqrt(c) = margin/sqrt(c)``."""
    return float(np.arctanh(margin) / np.sqrt(c))


class MirrorLayer(Module):
    """Pair of residual maps ``g: M_E -> M_A`` and ``f: M_A -> M_E``.

    Parameters
    ----------
    dim : int
        Manifold dimension of both balls.
    c_e, c_a : float
        Curvatures of the emotion and anti-emotion balls.
    hidden, depth : int
        Width and number of hidden tanh layers of each residual network.
    beta : float, optional
        Residual norm bound; defaults to :func:`residual_bound` of the
        target curvature.  ``np.inf`` disables residual clipping.
    residual_e_to_a, residual_a_to_e : Module, optional
        Replace the default MLPs (used to build analytic test maps).
    """

    def __init__(self, dim: int, c_e: float = 1.0, c_a: float = 0.8, hidden: int = 64,
                 depth: int = 2, beta: float | None = None, eps_bnd: float = 0.05,
                 rng: np.random.Generator | None = None, init_scale: float = 1.0,
                 residual_e_to_a: Module | None = None, residual_a_to_e: Module | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = [dim] + [hidden] * depth + [dim]
        self.residual_e_to_a = residual_e_to_a or MLP(sizes, "tanh", rng, out_scale=init_scale)
        self.residual_a_to_e = residual_a_to_e or MLP(sizes, "tanh", rng, out_scale=init_scale)
        self.dim = dim
        self.c_e, self.c_a = float(c_e), float(c_a)
        self.beta_e_to_a = residual_bound(c_a) if beta is None else float(beta)
        self.beta_a_to_e = residual_bound(c_e) if beta is None else float(beta)
        self.eps_bnd = eps_bnd

    def _map(self, h, c_src, c_dst, net, beta) -> Var:
        u = G.log0(h, c_src)
        r = net(u)
        if np.isfinite(beta):
            r = G.clip_norm(r, beta)
        return G.exp0(u + r, c_dst, self.eps_bnd)

    def g(self, h_e) -> Var:
        """``M_E -> M_A`` on the tape."""
        return self._map(h_e, self.c_e, self.c_a, self.residual_e_to_a, self.beta_e_to_a)

    def f(self, h_a) -> Var:
        """``M_A -> M_E`` on the tape."""
        return self._map(h_a, self.c_a, self.c_e, self.residual_a_to_e, self.beta_a_to_e)

    def mirror_e_to_a(self, h_e) -> np.ndarray:
        _check_interior(h_e, self.c_e)
        return self.g(np.asarray(h_e, dtype=float)).value

    def mirror_a_to_e(self, h_a) -> np.ndarray:
        _check_interior(h_a, self.c_a)
        return self.f(np.asarray(h_a, dtype=float)).value

    def cycle(self, h_e) -> Var:
        """``f(g(h))``."""
        return self.f(self.g(h_e))

    def twice(self, h_e) -> Var:
        """``g`` applied twice, with ``M_A`` carried back to ``M_E`` after each application.

        When the curvatures differ, the distance-preserving radial map moves
        points between the balls, so the composition is well typed and
        returns a point of ``M_E``.  Zero residuals give the identity.
        """
        mid = self._to_e(self.g(h_e))
        return self._to_e(self.g(mid))

    def _to_e(self, h_a) -> Var:
        if self.c_a == self.c_e:
            return T.as_var(h_a)
        return G.isometric_rescale(h_a, self.c_a, self.c_e)

    def zero_residuals(self) -> "MirrorLayer":
        for net in (self.residual_e_to_a, self.residual_a_to_e):
            last = net.layers[-1] if hasattr(net, "layers") else net
            last.weight.value[:] = 0.0
            last.bias.value[:] = 0.0
        return self


def _check_interior(h, c):
    h = np.asarray(h, dtype=float)
    if np.any(np.linalg.norm(h, axis=-1) * np.sqrt(c) >= 1.0):
        raise DomainError("point lies on or outside the ball boundary")


def _as_batch(h) -> Var:
    h = T.as_var(h)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ContractError("expected a non-empty (batch, dim) array of points")
    return h


def importance_weights(h: np.ndarray, c: float, inverted: bool = False) -> np.ndarray:
    """Volume weights ``w(h)`` for a batch (treated as constants by the losses)."""
    return hm.volume_weight(h, c, h.shape[-1], inverted=inverted)


def weighted_distance_loss(h, h_back, c: float, weighting: str | None = "volume",
                           self_normalize: bool = False) -> Var:
    """Weighted mean of ``d_P(h, h_back)`` over the batch.

    ``weighting`` is ``"volume"`` (``(1 - c|h|^2)^{-n}``), ``"inverted"``
    (its reciprocal) or ``None``.  With ``self_normalize`` the weights are
    divided by their sum instead of the batch size.
    """
    h, h_back = _as_batch(h), T.as_var(h_back)
    d = G.poincare_dist(h, h_back, c)
    b = h.shape[0]
    if weighting is None:
        return T.mean(d)
    inverted = weighting == "inverted"
    if weighting not in ("volume", "inverted"):
        raise ContractError(f"unknown weighting {weighting!r}")
    if self_normalize:
        logw = hm.log_volume_weight(h.value, c, h.shape[-1], inverted=inverted)
        w = np.exp(logw - logw.max())
        return T.vsum(d * (w / w.sum()))
    w = importance_weights(h.value, c, inverted)
    return T.vsum(d * w) * (1.0 / b)


def cycle_loss(mirror: MirrorLayer, h_e, weighting: str | None = "volume",
               self_normalize: bool = False) -> Var:
    """Weighted cycle loss ``E[w(h) d_P(h, f(g(h)))]``."""
    h_e = _as_batch(h_e)
    return weighted_distance_loss(h_e, mirror.cycle(h_e), mirror.c_e, weighting, self_normalize)


def involution_loss(mirror: MirrorLayer, h_e, weighting: str | None = "volume",
                    self_normalize: bool = False) -> Var:
    """Weighted involution loss ``E[w(h) d_P(h, g(g(h)))]``."""
    h_e = _as_batch(h_e)
    return weighted_distance_loss(h_e, mirror.twice(h_e), mirror.c_e, weighting, self_normalize)


def asymmetry_score(mirror: MirrorLayer, h_fus) -> np.ndarray:
    """Per-sample ``d_P(h, f(g(h)))`` on the emotion ball."""
    h_fus = np.atleast_2d(np.asarray(h_fus, dtype=float))
    _check_interior(h_fus, mirror.c_e)
    back = mirror.cycle(h_fus).value
    return hm.poincare_dist(h_fus, back, mirror.c_e)
