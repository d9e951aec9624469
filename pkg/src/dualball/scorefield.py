"""Denoising score matching in the mirror space, reverse-diffusion sampling,
vector-field recovery on the emotion ball and the curl diagnostic.

The forward kernel is variance exploding, ``q_t(z_t | z_0) = N(z_0, sigma(t)^2 I)``
with a geometric noise level between ``sigma_min`` and ``sigma_max``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from . import hypmath as hm
from .errors import ContractError
from .gradtape import MLP, Module, Var
from .gradtape import tape as T


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float = 0.01
    sigma_max: float = 1.0
    T: float = 1.0
    num_steps: int = 50

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ContractError("need 0 < sigma_min < sigma_max")
        if self.T <= 0 or self.num_steps < 0:
            raise ContractError("need T > 0 and num_steps >= 0")

    def sigma(self, t):
        """Geometric interpolation, ``sigma(0) = sigma_min``, ``sigma(T) = sigma_max``."""
        t = np.asarray(t, dtype=float)
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** (t / self.T)

    def sigmas(self) -> np.ndarray:
        """Decreasing levels visited by the reverse sampler (``num_steps + 1`` values)."""
        ts = np.linspace(self.T, 0.0, self.num_steps + 1)
        return self.sigma(ts)

    def check_t(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0) or np.any(t > self.T) or not np.all(np.isfinite(t)):
            raise ContractError(f"t must lie in (0, {self.T}]")
        return t


class ScoreFunction(Protocol):
    def score_numpy(self, z: np.ndarray, sigma: np.ndarray) -> np.ndarray: ...


def perturb(z0, t, rng: np.random.Generator | None = None, schedule: NoiseSchedule = NoiseSchedule(),
            eps: np.ndarray | None = None):
    """Draw ``z_t ~ q_t(. | z0)`` and return ``(z_t, grad log q_t(z_t | z0))``.

    ``t`` is a scalar or one value per row of ``z0``.  Passing ``eps``
    fixes the Gaussian draw.
    """
    z0 = np.asarray(z0, dtype=float)
    t = schedule.check_t(t)
    sig = schedule.sigma(t)
    if sig.ndim:
        sig = sig[..., None]
    if eps is None:
        if rng is None:
            raise ContractError("either rng or eps must be given")
        eps = rng.standard_normal(z0.shape)
    z_t = z0 + sig * eps
    return z_t, (z0 - z_t) / sig**2


class ScoreModel(Module):
    """``s(z, t) = -(z - m(z, t)) / (a^2 + sigma(t)^2)``.

    ``m`` is a tanh MLP fed with ``z`` and the normalized log noise level.
    ``a^2`` is not trained: it tracks the per-coordinate variance of the
    data seen by :func:`score_loss` (an exponential average).  For Gaussian
    data ``N(mu, s^2 I)`` the exact score is then reached with ``m = mu``,
    and for a point mass ``a = 0``.
    """

    def __init__(self, dim: int, hidden: int = 64, depth: int = 2,
                 schedule: NoiseSchedule = NoiseSchedule(), rng: np.random.Generator | None = None,
                 init_scale: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mean_net = MLP([dim + 1] + [hidden] * depth + [dim], "tanh", rng, out_scale=init_scale)
        self.data_var = 0.0
        self.var_initialized = False
        self.dim = dim
        self.schedule = schedule

    def track_data(self, z0: np.ndarray, decay: float = 0.99):
        """Fold the batch variance of ``z0`` into ``a^2``."""
        var = float(np.mean(np.var(z0, axis=0))) if len(z0) > 1 else 0.0
        if not self.var_initialized:
            self.data_var, self.var_initialized = var, True
        else:
            self.data_var = decay * self.data_var + (1.0 - decay) * var

    def state_dict(self) -> dict[str, np.ndarray]:
        state = super().state_dict()
        state["data_var"] = np.array([self.data_var, float(self.var_initialized)])
        return state

    def load_state_dict(self, state):
        super().load_state_dict({k: v for k, v in state.items() if k != "data_var"})
        if "data_var" in state:
            self.data_var, self.var_initialized = float(state["data_var"][0]), bool(state["data_var"][1])

    def _time_feature(self, sigma: np.ndarray) -> np.ndarray:
        lo, hi = np.log(self.schedule.sigma_min), np.log(self.schedule.sigma_max)
        return (2.0 * (np.log(sigma) - lo) / (hi - lo) - 1.0)[..., None]

    def _sigma_rows(self, z, sigma):
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), z.shape[:-1])
        return sigma

    def score_sigma(self, z, sigma) -> Var:
        """Score at noise level ``sigma`` on the tape."""
        z = T.as_var(z)
        if z.shape[-1] != self.dim:
            raise ContractError(f"expected points of dimension {self.dim}")
        sigma = self._sigma_rows(z, sigma)
        inp = T.concat([z, self._time_feature(sigma)], axis=-1)
        m = self.mean_net(inp)
        var = self.data_var + (sigma**2)[..., None]
        return -(z - m) / var

    def __call__(self, z, t) -> Var:
        return self.score_sigma(z, self.schedule.sigma(self.schedule.check_t(t)))

    def score_numpy(self, z: np.ndarray, sigma) -> np.ndarray:
        sigma = self._sigma_rows(z, sigma)
        m = self.mean_net.numpy_forward(np.concatenate([z, self._time_feature(sigma)], axis=-1))
        var = self.data_var + sigma[..., None] ** 2
        return -(z - m) / var


@dataclass
class GaussianScore:
    """Analytic score of ``N(mean, std^2 I)`` smoothed by the kernel (``std=0``: point mass)."""

    mean: np.ndarray
    std: float = 0.0

    def score_numpy(self, z, sigma):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim:
            sigma = sigma[..., None]
        return -(z - np.asarray(self.mean)) / (self.std**2 + sigma**2)


def score_loss(model: ScoreModel, z0, schedule: NoiseSchedule | None = None,
               rng: np.random.Generator | None = None, antithetic: bool = True,
               track: bool = True) -> Var:
    """Monte-Carlo denoising score-matching loss.

    ``t ~ Uniform(0, T]`` per sample.  With ``antithetic`` each sample is
    used twice with noise ``eps`` and ``-eps``; the estimator stays unbiased.
    With ``track`` the model's data variance is updated from ``z0`` first.
    """
    schedule = schedule or model.schedule
    z0 = np.asarray(z0.value if isinstance(z0, Var) else z0, dtype=float)
    if z0.ndim != 2 or z0.shape[0] == 0:
        raise ContractError("score_loss needs a non-empty (batch, dim) array")
    rng = rng if rng is not None else np.random.default_rng(0)
    if track:
        model.track_data(z0)
    b = z0.shape[0]
    t = schedule.T * (1.0 - rng.uniform(size=b))
    eps = rng.standard_normal(z0.shape)
    if antithetic:
        z0, t, eps = np.concatenate([z0, z0]), np.concatenate([t, t]), np.concatenate([eps, -eps])
    z_t, target = perturb(z0, t, schedule=schedule, eps=eps)
    s = model(z_t, t)
    diff = s - target
    return T.mean(T.vsum(diff * diff, axis=-1))


def reverse_sample(model: ScoreFunction, schedule: NoiseSchedule, rng: np.random.Generator,
                   n_samples: int = 1, dim: int | None = None) -> np.ndarray:
    """Euler-Maruyama integration of the reverse VE SDE.

    Starts from ``N(0, sigma_max^2 I)`` and walks the decreasing noise
    levels of ``schedule.sigmas()``.  Returns ``(n_samples, dim)``.
    """
    dim = dim if dim is not None else model.dim
    sig = schedule.sigmas()
    z = schedule.sigma_max * rng.standard_normal((n_samples, dim))
    for s_hi, s_lo in zip(sig[:-1], sig[1:]):
        step = s_hi**2 - s_lo**2
        z = z + step * model.score_numpy(z, s_hi) + np.sqrt(step) * rng.standard_normal(z.shape)
    return z


@dataclass
class VectorFieldSample:
    base: np.ndarray
    vector: np.ndarray


def recover_vector_field(model: ScoreFunction, schedule: NoiseSchedule, h, rng: np.random.Generator,
                         mirror, z0_hat: np.ndarray | None = None) -> VectorFieldSample:
    """Recovered direction ``V(h) = log0(f(clip(z0_hat))) - log0(h)`` on the emotion ball.

    ``z0_hat`` is drawn by :func:`reverse_sample` unless supplied; one draw
    per row of ``h``.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    if z0_hat is None:
        z0_hat = reverse_sample(model, schedule, rng, h.shape[0], h.shape[-1])
    z_a, _ = hm.clip_to_ball(z0_hat, mirror.c_a, mirror.eps_bnd)
    back = mirror.f(z_a).value
    vec = hm.log0(back, mirror.c_e) - hm.log0(h, mirror.c_e)
    return VectorFieldSample(base=h, vector=vec)


def vector_field_tape(mirror, z0_hat: np.ndarray, anchor_tangent) -> Var:
    """Differentiable ``V = log0(f(clip(z0_hat))) - u`` with ``u = log0(anchor)``."""
    from .gradtape import geometry as G

    z_a, _ = hm.clip_to_ball(np.asarray(z0_hat, dtype=float), mirror.c_a, mirror.eps_bnd)
    return G.log0(mirror.f(z_a), mirror.c_e) - anchor_tangent


def curl_proxy(field: Callable[[np.ndarray], np.ndarray], points, delta: float = 1e-3) -> float:
    """``max |d_i V_j - d_j V_i|`` over points and index pairs, by central differences.

    ``field`` maps a ``(k, n)`` batch to ``(k, n)``.
    """
    if delta <= 0:
        raise ContractError("delta must be positive")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ContractError("need at least one sample point")
    p, n = pts.shape
    eye = np.eye(n) * delta
    shifted = np.concatenate([pts[:, None, :] + eye, pts[:, None, :] - eye], axis=1)
    vals = np.asarray(field(shifted.reshape(-1, n)), dtype=float).reshape(p, 2 * n, n)
    # jac[k, j, i] = dV_j / dx_i
    jac = ((vals[:, :n] - vals[:, n:]) / (2 * delta)).transpose(0, 2, 1)
    return float(np.max(np.abs(jac - jac.transpose(0, 2, 1)), initial=0.0))


def curl_penalty(proxy: float, lam: float = 0.1, bound: float = 0.01) -> float:
    """Hinge ``lam * max(0, proxy - bound)``."""
    return float(lam * max(0.0, proxy - bound))


def fit_score_model(model: ScoreModel, sampler: Callable[[np.random.Generator, int], np.ndarray],
                    steps: int = 2000, batch: int = 256, lr: float = 1e-2, final_lr: float = 1e-4,
                    rng: np.random.Generator | None = None) -> list[float]:
    """Train ``model`` alone on draws of ``sampler(rng, batch)``.

    Adam with ``betas=(0.9, 0.99)`` and an exponential learning-rate decay
    from ``lr`` to ``final_lr``.  Returns the loss trace.
    """
    from .gradtape import gradients
    from .optim import Adam

    rng = rng if rng is not None else np.random.default_rng(0)
    params = model.parameters()
    opt = Adam(lr=lr, betas=(0.9, 0.99))
    trace = []
    for k in range(steps):
        opt.lr = lr * (final_lr / lr) ** (k / max(steps - 1, 1))
        loss = score_loss(model, sampler(rng, batch), rng=rng)
        opt.step(params, gradients(loss, params))
        trace.append(float(loss.value))
    return trace
