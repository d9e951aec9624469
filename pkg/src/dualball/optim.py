"""Optimizers, gradient clipping and dynamic loss normalization.

Riemannian Adam keeps a tangent first moment and a scalar second moment per
ball point, retracts with the exponential map at the current point and
rescales the momentum by the ratio of conformal factors after each move.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import hypmath as hm
from .errors import ContractError
from .gradtape import Var


def egrad2rgrad(w, egrad, c: float) -> np.ndarray:
    """Riemannian gradient ``egrad * (1 - c|w|^2)^2 / 4``."""
    w = np.asarray(w, dtype=float)
    scale = (1.0 - c * np.sum(w * w, axis=-1, keepdims=True)) ** 2 / 4.0
    return np.asarray(egrad, dtype=float) * scale


def eta_schedule(t: int, D: float, G: float, sigma: float, c: float, gamma: float) -> float:
    """``(D/G) * sqrt((1 - c gamma^2) / (2 sigma t))``."""
    if t < 1:
        raise ContractError("step counter starts at 1")
    return float(D / G * np.sqrt((1.0 - c * gamma**2) / (2.0 * sigma * t)))


class Adam:
    """Euclidean Adam over a fixed list of parameter arrays."""

    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None
        self.skipped = 0

    def step(self, params: Sequence[Var], grads: Sequence[np.ndarray]) -> bool:
        """Update in place; returns False (and skips) on non-finite gradients."""
        if any(not np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            return False
        if self.m is None:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v, "skipped": self.skipped}

    def load_state_dict(self, state: dict):
        self.t, self.skipped = int(state["t"]), int(state["skipped"])
        self.m = None if state["m"] is None else [np.array(a) for a in state["m"]]
        self.v = None if state["v"] is None else [np.array(a) for a in state["v"]]


@dataclass
class RiemannianAdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    # online estimates for the step-size schedule
    start: np.ndarray | None = None
    average: np.ndarray | None = None
    D: float = 0.0
    G: float = 0.0
    skipped: int = 0
    last_eta: float = 0.0


class RiemannianAdam:
    """Adam on the Poincare ball for an array of points ``(k, n)``.

    Parameters
    ----------
    c : float
        Ball curvature.
    lr : float, optional
        Constant step size.  When ``None`` the decaying schedule
        :func:`eta_schedule` is used with ``D`` and ``G`` either fixed
        (``D``, ``G`` arguments) or estimated online.
    betas : pair of float
        Moment decay rates; ``(0, 0)`` gives normalized Riemannian descent.
    sigma, gamma : float
        Smoothness and radius constants of the schedule.
    d_floor : float
        Lower bound on the online distance estimate, so the first steps move.
    """

    def __init__(self, c: float, lr: float | None = None, betas=(0.9, 0.999), eps: float = 1e-8,
                 sigma: float = 2.0, gamma: float = 0.9, D: float | None = None, G: float | None = None,
                 d_floor: float = 0.5, avg_decay: float = 0.99, g_decay: float = 0.99,
                 eps_bnd: float = hm.EPS_BND):
        if lr is None and c * gamma**2 >= 1.0:
            raise ContractError("schedule needs gamma < 1/sqrt(c)")
        self.c, self.lr, self.betas, self.eps = c, lr, tuple(betas), eps
        self.sigma, self.gamma = sigma, gamma
        self.fixed_D, self.fixed_G = D, G
        self.d_floor, self.avg_decay, self.g_decay = d_floor, avg_decay, g_decay
        self.eps_bnd = eps_bnd

    def init_state(self, w: np.ndarray) -> RiemannianAdamState:
        w = np.asarray(w, dtype=float)
        return RiemannianAdamState(m=np.zeros_like(w), v=np.zeros(w.shape[:-1] + (1,)),
                                   start=w.copy(), average=w.copy())

    def _eta(self, state: RiemannianAdamState, direction_norm: float) -> float:
        if self.lr is not None:
            return self.lr
        if self.fixed_D is not None:
            D = self.fixed_D
        else:
            dist = hm.poincare_dist(state.start, state.average, self.c)
            D = max(self.d_floor, float(np.max(dist, initial=0.0)))
        if self.fixed_G is not None:
            G = self.fixed_G
        else:
            b = self.g_decay
            state.G = b * state.G + (1.0 - b) * direction_norm
            G = max(state.G / (1.0 - b**state.t), 1e-12)
        state.D = D
        return eta_schedule(state.t, D, G, self.sigma, self.c, self.gamma)

    def step(self, w: np.ndarray, rgrad: np.ndarray, state: RiemannianAdamState):
        """One step from ``w`` with Riemannian gradient ``rgrad``.

        Returns ``(w_new, applied)``; a non-finite gradient leaves ``w`` and
        the state untouched apart from the skip counter.
        """
        w = np.asarray(w, dtype=float)
        rgrad = np.asarray(rgrad, dtype=float)
        if not np.all(np.isfinite(rgrad)):
            state.skipped += 1
            return w, False
        c = self.c
        b1, b2 = self.betas
        state.t += 1
        lam = hm.conformal_factor(w, c)[..., None]
        sq_norm = np.sum((lam * rgrad) ** 2, axis=-1, keepdims=True)
        state.m = b1 * state.m + (1.0 - b1) * rgrad
        state.v = b2 * state.v + (1.0 - b2) * sq_norm
        m_hat = state.m / (1.0 - b1**state.t) if b1 > 0 else state.m
        v_hat = state.v / (1.0 - b2**state.t) if b2 > 0 else state.v
        direction = m_hat / (np.sqrt(v_hat) + self.eps)
        dir_norm = float(np.mean(np.linalg.norm(lam * direction, axis=-1)))
        eta = self._eta(state, dir_norm)
        state.last_eta = eta
        w_new = hm.exp_at(w, -eta * direction, c, self.eps_bnd)
        state.m = state.m * lam / hm.conformal_factor(w_new, c)[..., None]
        a = self.avg_decay
        state.average = a * state.average + (1.0 - a) * w_new
        return w_new, True


def global_grad_clip(grads: Sequence[np.ndarray], max_norm: float = 1.0):
    """Scale all gradients by ``max_norm / g`` when their joint norm ``g`` exceeds it.

    Returns ``(grads, g)`` where ``g`` is the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm and np.isfinite(total):
        scale = max_norm / total
        return [g * scale for g in grads], total
    return list(grads), total


class LossNormalizer:
    """Running standard deviation per loss term.

    Raw values enter a sliding window of ``window`` batches.  Every
    ``interval`` batches ``sigma`` is refreshed: the first refresh takes the
    window standard deviation, later ones blend it in with ``decay``.
    Before the first refresh ``sigma`` is 1.
    """

    def __init__(self, names: Sequence[str], decay: float = 0.99, interval: int = 50,
                 window: int = 100, eps_num: float = 1e-5):
        self.names = list(names)
        self.decay, self.interval, self.eps_num = decay, interval, eps_num
        self.window = window
        self.history = {k: deque(maxlen=window) for k in self.names}
        self.sigma = {k: 1.0 for k in self.names}
        self.count = 0
        self.warm = False

    def observe(self, raw: Mapping[str, float]) -> bool:
        """Record one batch; returns True when sigma was refreshed."""
        for k in self.names:
            self.history[k].append(float(raw[k]))
        self.count += 1
        if self.count % self.interval:
            return False
        for k in self.names:
            sd = float(np.std(np.asarray(self.history[k])))
            self.sigma[k] = sd if not self.warm else self.decay * self.sigma[k] + (1 - self.decay) * sd
        self.warm = True
        return True

    def factors(self) -> dict[str, float]:
        return {k: 1.0 / (self.sigma[k] + self.eps_num) for k in self.names}

    def normalize(self, raw: Mapping[str, object]) -> dict[str, object]:
        f = self.factors()
        return {k: raw[k] * f[k] for k in self.names}

    def state_dict(self) -> dict:
        return {"history": {k: list(v) for k, v in self.history.items()}, "sigma": dict(self.sigma),
                "count": self.count, "warm": self.warm}

    def load_state_dict(self, state: dict):
        self.history = {k: deque(state["history"][k], maxlen=self.window) for k in self.names}
        self.sigma = {k: float(state["sigma"][k]) for k in self.names}
        self.count, self.warm = int(state["count"]), bool(state["warm"])


LOSS_NAMES = ("task", "grad", "score", "cycle", "inv", "prop", "orth", "fus")

DEFAULT_WEIGHTS = {"task": 1.0, "grad": 0.0, "score": 1.0, "cycle": 5.0, "inv": 5.0,
                   "prop": 1.0, "orth": 0.1, "fus": 0.0}


def total_loss(normalized: Mapping[str, object], weights: Mapping[str, float] | None = None):
    """Weighted sum; the task term always carries weight 1."""
    weights = dict(DEFAULT_WEIGHTS if weights is None else weights)
    weights["task"] = 1.0
    total = 0.0
    for k in LOSS_NAMES:
        if k in normalized and weights.get(k, 0.0) != 0.0:
            total = total + weights[k] * normalized[k]
    return total
