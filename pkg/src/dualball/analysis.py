"""Rank and trend statistics, complexity bounds, the Lipschitz probe of the
Poincare distance, clipping summaries and the Riemannian Adam rate probe."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import hypmath as hm
from .errors import ContractError, DomainError


def spearman_rho(x, y) -> tuple[float, float]:
    """Spearman correlation with average ranks for ties.

    The two-sided p-value uses the t approximation with ``n - 2`` degrees
    of freedom.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError("x and y must be 1-D of equal length")
    n = x.size
    if n < 3:
        raise ContractError("need at least 3 observations")
    rx, ry = stats.rankdata(x), stats.rankdata(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    denom = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if denom == 0:
        return float("nan"), float("nan")
    rho = float(np.sum(rx * ry) / denom)
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, float(2.0 * stats.t.sf(abs(t), n - 2))


@dataclass
class TrendResult:
    T: float
    z: float
    p: float
    # lower-tail probability; only the exact test fills it
    p_lower: float = float("nan")


def cochran_armitage(table, scores=None) -> TrendResult:
    """Linear trend test on a ``2 x K`` table of counts.

    Row 1 holds the events.  ``T = sum_k w_k (O_1k - n_k p)``, standardized
    by its null variance; the p-value is one-sided for an increasing trend.
    """
    tab = np.asarray(table, dtype=float)
    if tab.ndim != 2 or tab.shape[0] != 2 or tab.shape[1] < 2:
        raise ContractError("table must be 2 x K with K >= 2")
    if np.any(tab < 0):
        raise ContractError("counts must be non-negative")
    k = tab.shape[1]
    w = np.arange(k, dtype=float) if scores is None else np.asarray(scores, dtype=float)
    if w.shape != (k,) or np.any(np.diff(w) < 0):
        raise ContractError("scores must be non-decreasing with one per column")
    n_k = tab.sum(axis=0)
    if np.any(n_k == 0):
        raise ContractError("empty column")
    N = n_k.sum()
    p_hat = tab[1].sum() / N
    T = float(np.sum(w * (tab[1] - n_k * p_hat)))
    var = p_hat * (1 - p_hat) * (np.sum(w * w * n_k) - np.sum(w * n_k) ** 2 / N)
    if var <= 0:
        return TrendResult(T, 0.0, 0.5)
    z = T / np.sqrt(var)
    return TrendResult(T, float(z), float(stats.norm.sf(z)))


def cochran_armitage_permutation(table, scores=None) -> TrendResult:
    """Exact conditional version given both margins.

    Under the null the events are a uniformly random subset of the units, so
    the event score sum follows a multivariate hypergeometric law; it is
    built column by column with binomial counts.  ``p`` is the upper tail
    ``P(S >= s_obs)`` and ``p_lower`` the lower tail ``P(S <= s_obs)``.
    ``z`` is standardized with the exact null mean and variance of ``S``.
    """
    tab = np.asarray(table, dtype=int)
    obs = cochran_armitage(tab, scores)
    k = tab.shape[1]
    w = np.arange(k, dtype=float) if scores is None else np.asarray(scores, dtype=float)
    n_k = tab.sum(axis=0)
    events = int(tab[1].sum())
    # T differs from the event score sum by a constant under fixed margins
    observed = float(np.sum(w * tab[1]))
    dist = {(0, 0.0): 1}
    for n, wk in zip(n_k, w):
        nxt: dict = {}
        for (e, s), ways in dist.items():
            for o in range(0, min(int(n), events - e) + 1):
                key = (e + o, round(s + o * wk, 9))
                nxt[key] = nxt.get(key, 0) + ways * math.comb(int(n), o)
        dist = nxt
    total = math.comb(int(n_k.sum()), events)
    law = {s: v / total for (e, s), v in dist.items() if e == events}
    upper = sum(q for s, q in law.items() if s >= observed - 1e-9)
    lower = sum(q for s, q in law.items() if s <= observed + 1e-9)
    mean = sum(s * q for s, q in law.items())
    var = sum((s - mean) ** 2 * q for s, q in law.items())
    z = (observed - mean) / np.sqrt(var) if var > 1e-12 else 0.0
    return TrendResult(obs.T, float(z), float(upper), float(lower))


def _check_gamma(gamma: float, c: float):
    if c <= 0 or not 0 <= gamma < 1.0 / np.sqrt(c):
        raise DomainError("need c > 0 and 0 <= gamma < 1/sqrt(c)")


def rademacher_bound(gamma: float, c: float, n: int, N: int) -> float:
    """``4 sqrt(2) gamma / (1 - c gamma^2) * sqrt(n / N)``."""
    _check_gamma(gamma, c)
    if N < 1:
        raise ContractError("N must be >= 1")
    return float(4.0 * np.sqrt(2.0) * gamma / (1.0 - c * gamma**2) * np.sqrt(n / N))


def generalization_bound(gamma: float, c: float, n: int, N: int, delta: float,
                         empirical_risk: float) -> float:
    """Empirical risk plus twice the complexity term plus the confidence term."""
    if not 0 < delta <= 1:
        raise ContractError("delta must lie in (0, 1]")
    conf = np.sqrt(np.log(1.0 / delta) / (2.0 * N))
    return float(empirical_risk + 2.0 * rademacher_bound(gamma, c, n, N) + conf)


@dataclass
class LipschitzReport:
    c: float
    gamma: float
    trials: int
    empirical_max: float
    stated_bound: float
    tight_bound: float

    @property
    def within_stated(self) -> bool:
        return self.empirical_max <= self.stated_bound

    @property
    def within_tight(self) -> bool:
        return self.empirical_max <= self.tight_bound


def uniform_ball(rng: np.random.Generator, size: int, n: int, radius: float) -> np.ndarray:
    v = rng.standard_normal((size, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius * rng.uniform(size=(size, 1)) ** (1.0 / n)


@dataclass
class VolumeCheck:
    c: float
    n: int
    monte_carlo: float
    quadrature: float

    @property
    def rel_error(self) -> float:
        return abs(self.monte_carlo - self.quadrature) / abs(self.quadrature)


def volume_integral_check(c: float, n: int = 2, samples: int = 1_000_000,
                          rng: np.random.Generator | None = None,
                          eps_bnd: float = hm.EPS_BND) -> VolumeCheck:
    """Integrate ``f = exp(-d(0, h)^2)`` over the clipped ball two ways.

    The Monte-Carlo estimate draws ``h`` uniformly in the Euclidean ball of
    radius ``(1 - eps_bnd)/sqrt(c)`` and averages ``f * 2^n * w(h)`` with
    ``w`` from :func:`hm.volume_weight`; the reference integrates
    ``f(r) * lambda(r)^n`` against the sphere area by radial quadrature.
    """
    from scipy import integrate, special

    rng = rng if rng is not None else np.random.default_rng(0)
    R = hm.max_radius(c, eps_bnd)

    def f_of_r(r):
        return np.exp(-(2.0 / np.sqrt(c) * hm.artanh(np.sqrt(c) * r)) ** 2)

    h = uniform_ball(rng, samples, n, R)
    vals = f_of_r(np.linalg.norm(h, axis=1)) * 2.0**n * hm.volume_weight(h, c, n)
    ball = np.pi ** (n / 2) / special.gamma(n / 2 + 1) * R**n
    sphere = 2 * np.pi ** (n / 2) / special.gamma(n / 2)
    ref, _ = integrate.quad(lambda r: f_of_r(r) * (2.0 / (1 - c * r * r)) ** n * sphere * r ** (n - 1),
                            0.0, R, limit=200, epsabs=0.0, epsrel=1e-12)
    return VolumeCheck(c, n, float(ball * vals.mean()), float(ref))


def lipschitz_check(c: float, gamma: float, trials: int = 100_000,
                    rng: np.random.Generator | None = None, n: int = 2,
                    batch: int = 20_000) -> LipschitzReport:
    """Largest ``|d(x,y) - d(x',y')| / (|x-x'| + |y-y'|)`` over random quadruples.

    Points are uniform in the Euclidean ball of radius ``gamma``.  The
    report carries the closed-form constant ``2 sqrt(c) / (1 - c gamma^2)``
    and the sharper-in-general ``2 / (1 - c gamma^2)`` (the supremum of the
    conformal factor on the ball).
    """
    _check_gamma(gamma, c)
    rng = rng if rng is not None else np.random.default_rng(0)
    best, done = 0.0, 0
    while done < trials:
        m = min(batch, trials - done)
        x, y, x2, y2 = (uniform_ball(rng, m, n, gamma) for _ in range(4))
        num = np.abs(hm.poincare_dist(x, y, c) - hm.poincare_dist(x2, y2, c))
        den = np.linalg.norm(x - x2, axis=1) + np.linalg.norm(y - y2, axis=1)
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        best = max(best, float(ratio.max()))
        done += m
    stated = 2.0 * np.sqrt(c) / (1.0 - c * gamma**2)
    tight = 2.0 / (1.0 - c * gamma**2)
    return LipschitzReport(c, gamma, trials, best, float(stated), float(tight))


def nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile: the ``ceil(q N)``-th smallest value."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ContractError("need at least one value")
    k = max(int(np.ceil(q * v.size)), 1)
    return float(v[k - 1])


def clipping_stats(fractions) -> tuple[float, float]:
    """Median and nearest-rank 95th percentile of per-batch clipping fractions."""
    return float(np.median(np.asarray(fractions, dtype=float))), nearest_rank(fractions, 0.95)


# -- optimizer rate probe -------------------------------------------------------

def adam_rate_probe(seed: int, steps: int = 10_000, starts: int = 32, n: int = 2, c: float = 1.0,
                    sigma: float = 2.0, gamma: float = 0.9, betas=(0.0, 0.0)):
    """Minimize ``d(w, w*)^2`` with Riemannian Adam and the decaying schedule.

    ``starts`` points begin at geodesic distance ``U[0.5, 1]`` from a random
    target.  Returns ``(T, running minimum of the mean Riemannian gradient
    norm)`` for ``T = 1..steps``.  ``D`` is the mean initial distance and
    ``G`` twice the largest initial distance (a bound on the gradient norm).
    """
    from .optim import RiemannianAdam

    rng = np.random.default_rng(seed)
    target = hm.exp0(0.5 * rng.standard_normal(n), c)
    dirs = rng.standard_normal((starts, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radius = rng.uniform(0.5, 1.0, size=(starts, 1))
    base = np.repeat(target[None], starts, axis=0)
    w = hm.exp_at(base, dirs * radius / hm.conformal_factor(target, c), c)
    dist0 = hm.poincare_dist(w, target, c)
    opt = RiemannianAdam(c, betas=betas, sigma=sigma, gamma=gamma, D=float(dist0.mean()),
                         G=2.0 * float(dist0.max()), eps=1e-12)
    state = opt.init_state(w)
    best, trace = np.inf, np.empty(steps)
    for t in range(steps):
        rgrad = -2.0 * hm.log_at(w, base, c)
        lam = hm.conformal_factor(w, c)
        gnorm = float(np.mean(lam * np.linalg.norm(rgrad, axis=1)))
        best = min(best, gnorm)
        trace[t] = best
        w, _ = opt.step(w, rgrad, state)
    return np.arange(1, steps + 1), trace


def loglog_slope(T, y, lo: int = 100, hi: int = 10_000, points: int = 9) -> float:
    """Least-squares slope of ``log y`` on ``log T`` at log-spaced ``T`` in ``[lo, hi]``."""
    T, y = np.asarray(T), np.asarray(y)
    grid = np.unique(np.round(np.logspace(np.log10(lo), np.log10(hi), points)).astype(int))
    idx = np.searchsorted(T, grid)
    return float(np.polyfit(np.log(T[idx]), np.log(y[idx]), 1)[0])
