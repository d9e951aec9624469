"""Invariant suite run by ``dualball check``.

Each check measures one quantity, compares it with a tolerance and reports
``(module, name, measured, tolerance, passed)``.  The loss-term gradient
builders are shared with the test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import hypmath as hm
from . import mirror as mir
from .analysis import cochran_armitage, spearman_rho
from .data import SyntheticConfig, drop_modalities, generate_synthetic
from .fusion import MaskTokens, PredictionHead, SetFuser, build_slots, task_loss
from .gradtape import grad_check
from .gradtape import tape as T
from .optim import RiemannianAdam, global_grad_clip
from .propdecomp import Decomposer, ema_update, orth_loss, prop_loss
from .scorefield import NoiseSchedule, ScoreModel, curl_proxy, score_loss


@dataclass
class CheckResult:
    module: str
    name: str
    measured: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.module:<10} {self.name:<38} measured={self.measured:.3e} "
                f"tol={self.tolerance:.1e}")


def _le(module, name, measured, tol) -> CheckResult:
    measured = float(measured)
    return CheckResult(module, name, measured, float(tol), bool(np.isfinite(measured) and measured <= tol))


# -- loss-term gradient checks ----------------------------------------------------

def loss_term_builders(seed: int, batch: int = 8, dim: int = 3) -> dict:
    """Small random instances of every term of the total objective.

    Returns ``{name: (fn, params)}`` where ``fn()`` rebuilds the scalar loss
    deterministically from the current parameter values.
    """
    rng = np.random.default_rng(seed)
    h = hm.exp0(0.6 * rng.standard_normal((batch, dim)), 1.0)
    out = {}

    fuser = SetFuser(dim, d_model=8, heads=2, rng=rng)
    tokens = MaskTokens(dim, 4, rng=rng)
    head = PredictionHead(dim, 4, hidden=6, rng=rng)
    slots_t = 0.5 * rng.standard_normal((batch, 4, dim))
    mask = rng.uniform(size=(batch, 4)) < 0.7
    labels = rng.integers(0, 4, size=batch)

    def task():
        slots, _ = build_slots(slots_t, mask, tokens.tangents())
        return task_loss(head(fuser(slots)), labels)

    out["task"] = (task, fuser.parameters() + tokens.parameters() + head.parameters())
    sub = mask.copy()
    sub[:, 0] = False

    def fus():
        slots, _ = build_slots(slots_t, sub, tokens.tangents())
        return task_loss(head(fuser(slots)), labels)

    out["fus"] = (fus, fuser.parameters() + tokens.parameters() + head.parameters())

    mirror = mir.MirrorLayer(dim, 1.0, 0.8, hidden=6, depth=2, rng=rng, init_scale=0.5)
    out["cycle"] = (lambda: mir.cycle_loss(mirror, h, "volume", True), mirror.parameters())
    out["inv"] = (lambda: mir.involution_loss(mirror, h, "volume", True), mirror.parameters())

    score = ScoreModel(dim, hidden=6, depth=2, schedule=NoiseSchedule(), rng=rng, init_scale=0.5)
    z0 = 0.3 * rng.standard_normal((batch, dim))
    score.track_data(z0)
    out["score"] = (lambda: score_loss(score, z0, rng=np.random.default_rng(seed), track=False),
                    score.parameters())

    dec = Decomposer(dim, d_p=5, hidden=6, rng=rng)
    P = T.parameter(rng.standard_normal(5))
    x = rng.standard_normal((batch, dim))

    def prop():
        _, mu = dec(x)
        return prop_loss(P, mu)

    def orth():
        sig, mu = dec(x)
        return orth_loss(sig, mu, 0.1)

    out["prop"] = (prop, dec.parameters() + [P])
    out["orth"] = (orth, dec.parameters())
    return out


def gradient_checks(seeds=(0, 1, 2), tol: float = 1e-4) -> list[CheckResult]:
    rows = []
    for seed in seeds:
        for name, (fn, params) in loss_term_builders(seed).items():
            rep = grad_check(fn, params, tol=tol)
            rows.append(_le("gradtape", f"grad {name} seed={seed}", rep.max_error, tol))
    return rows


# -- individual invariants ----------------------------------------------------------

def _geometry(rng, clip_eps: float) -> list[CheckResult]:
    rows = []
    for c in (1.0, 0.8):
        v = rng.standard_normal((1000, 4))
        v *= 3.0 * rng.uniform(size=(1000, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
        err = np.abs(hm.log0(hm.exp0(v, c, None), c) - v).max()
        rows.append(_le("hypmath", f"exp0/log0 round trip c={c}", err, 1e-9))
        # constructor outputs respect the interior margin
        far = rng.standard_normal((1000, 4)) * 10.0
        h, _ = hm.clip_to_ball(far, c, clip_eps)
        excess = np.max(np.linalg.norm(h, axis=1)) - hm.max_radius(c, hm.EPS_BND)
        rows.append(_le("hypmath", f"clip margin c={c}", max(excess, 0.0), 1e-12))
    c1 = rng.uniform(0.5, 2.0, 1000)
    c2 = c1 * np.exp(rng.uniform(np.log(0.5), np.log(2.0), 1000))
    err = 0.0
    for a, b in zip(c1, c2):
        x = hm.exp0(rng.standard_normal(3), a)
        y = hm.isometric_rescale(x, a, b)
        err = max(err, abs(hm.poincare_dist(np.zeros(3), x, a) - hm.poincare_dist(np.zeros(3), y, b)))
    rows.append(_le("hypmath", "isometric_rescale origin distance", err, 1e-9))
    x = hm.exp0(rng.standard_normal((500, 3)), 1.0)
    lin = hm.linear_rescale(x * (1.0 - 1e-9) / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1.0), 1.0, 0.8)
    rows.append(_le("hypmath", "linear_rescale stays inside", np.max(np.linalg.norm(lin, axis=1) * np.sqrt(0.8)), 1.0 - 1e-12))
    zero = np.zeros_like(x)
    e1 = np.abs(hm.mobius_add(zero, x, 1.0, None) - x).max()
    e2 = np.abs(hm.mobius_add(-x, x, 1.0, None)).max()
    rows.append(_le("hypmath", "mobius left identity", e1, 1e-12))
    rows.append(_le("hypmath", "mobius left inverse", e2, 1e-12))
    r = np.linalg.norm(x, axis=1)
    e3 = np.abs(hm.poincare_dist(zero, x, 1.0) - 2.0 * np.arctanh(r)).max()
    rows.append(_le("hypmath", "distance from origin closed form", e3, 1e-12))
    e4 = np.abs(hm.volume_weight(x, 1.0) / (hm.conformal_factor(x, 1.0) / 2.0) ** 3 - 1.0).max()
    rows.append(_le("hypmath", "volume weight vs conformal factor (rel)", e4, 1e-12))
    return rows


def _mirror(rng) -> list[CheckResult]:
    m = mir.MirrorLayer(4, 1.0, 0.8, hidden=8, rng=rng, init_scale=1.0)
    h = hm.exp0(rng.standard_normal((256, 4)), 1.0)
    weighted = mir.cycle_loss(m, h, "volume").value
    plain = mir.cycle_loss(m, h, None).value
    z = m.g(h).value
    excess = np.max(np.linalg.norm(z, axis=1)) - hm.max_radius(0.8)
    ident = mir.MirrorLayer(4, 1.0, 0.8, hidden=8, rng=rng).zero_residuals()
    return [
        _le("mirror", "weighted >= unweighted cycle loss", plain - weighted, 0.0),
        _le("mirror", "mirror output interior margin", max(excess, 0.0), 1e-12),
        _le("mirror", "identity residuals cycle loss", mir.cycle_loss(ident, h).value, 1e-9),
        _le("mirror", "identity residuals involution loss", mir.involution_loss(ident, h).value, 1e-9),
    ]


def _score(rng) -> list[CheckResult]:
    pts = rng.standard_normal((20, 3))
    # gradient of x0^2 x1 + sin(x2)
    grad_field = lambda x: np.stack([2 * x[:, 0] * x[:, 1], x[:, 0] ** 2, np.cos(x[:, 2])], 1)
    rot = lambda x: np.stack([-x[:, 1], x[:, 0]], 1)
    return [
        _le("scorefield", "curl of gradient field", curl_proxy(grad_field, pts, 1e-3), 1e-5),
        _le("scorefield", "curl of rotation field minus 2", abs(curl_proxy(rot, pts[:, :2], 1e-3) - 2.0), 1e-6),
    ]


def _propdecomp(rng) -> list[CheckResult]:
    P0, mu = rng.standard_normal(16), rng.standard_normal(16)
    P = P0.copy()
    for k in range(1, 11):
        P, _ = ema_update(P, mu, k * 100)
    err = abs(np.linalg.norm(P - mu) - 0.95**10 * np.linalg.norm(P0 - mu))
    sig = rng.standard_normal((8, 6))
    mu_b = rng.standard_normal((8, 6))
    mu_b -= (np.sum(mu_b * sig, 1) / np.sum(sig * sig, 1))[:, None] * sig
    return [
        _le("propdecomp", "EMA geometric decay after 10 updates", err, 1e-12),
        _le("propdecomp", "orth loss zero when orthogonal", orth_loss(sig, mu_b).value, 1e-20),
    ]


def _fusion(rng) -> list[CheckResult]:
    fuser = SetFuser(4, d_model=16, heads=4, rng=rng)
    tokens = MaskTokens(4, 4, rng=rng)
    slots_t = rng.standard_normal((6, 4, 4))
    worst_shape = 0.0
    for bits in range(16):
        mask = np.array([[(bits >> j) & 1 for j in range(4)]] * 6, dtype=bool)
        slots, _ = build_slots(slots_t, mask, tokens.tangents())
        worst_shape = max(worst_shape, float(fuser(slots).shape != (6, 4)))
    perm = rng.permutation(4)
    a = fuser(slots_t).value
    b = fuser(slots_t[:, perm]).value
    return [
        _le("fusion", "output shape under all masks", worst_shape, 0.0),
        _le("fusion", "permutation invariance", np.abs(a - b).max(), 1e-12),
    ]


def _optim(rng) -> list[CheckResult]:
    opt = RiemannianAdam(1.0, lr=0.5)
    w = hm.exp0(rng.standard_normal((32, 3)), 1.0)
    state = opt.init_state(w)
    worst = 0.0
    for _ in range(20):
        w, _ = opt.step(w, 50.0 * rng.standard_normal(w.shape), state)
        worst = max(worst, np.max(np.linalg.norm(w, axis=1)) - hm.max_radius(1.0))
    big = [5.0 * rng.standard_normal((3, 3)), rng.standard_normal(4)]
    clipped, _ = global_grad_clip(big, 1.0)
    norm = np.sqrt(sum(np.sum(g * g) for g in clipped))
    return [
        _le("optim", "manifold parameters stay interior", max(worst, 0.0), 1e-12),
        _le("optim", "global clip output norm", norm, 1.0 + 1e-12),
    ]


def _data(rng) -> list[CheckResult]:
    cfg = SyntheticConfig(n_train=64, n_test=16)
    a, b = generate_synthetic(cfg, 3), generate_synthetic(cfg, 3)
    diff = max(np.abs(a.features[m] - b.features[m]).max() for m in a.features)
    mask = drop_modalities(a.mask, 0.5, rng)
    return [
        _le("data", "generation is a pure function of seed", diff, 0.0),
        _le("data", "masking preserves sample count", abs(mask.shape[0] - len(a)), 0.0),
    ]


def _analysis(rng) -> list[CheckResult]:
    ca = cochran_armitage([[8, 2], [2, 8]], [0, 1])
    rho, _ = spearman_rho([1, 2, 3, 4], [1, 3, 2, 4])
    return [
        _le("analysis", "Cochran-Armitage hand example T=3", abs(ca.T - 3.0), 0.0),
        _le("analysis", "Spearman 4-point example rho=0.8", abs(rho - 0.8), 1e-12),
    ]


def run_checks(seed: int = 0, clip_eps: float = hm.EPS_BND, gradients: bool = True,
               printer: Callable[[str], None] | None = print) -> list[CheckResult]:
    """Run the whole suite.

    ``clip_eps`` is the margin handed to the boundary projection in the
    clip-margin check; anything below the published margin must fail it.
    """
    groups = [lambda r: _geometry(r, clip_eps), _mirror, _score, _propdecomp, _fusion, _optim,
              _data, _analysis]
    if gradients:
        groups.append(lambda r: gradient_checks())
    results = []
    for group in groups:
        t0 = time.perf_counter()
        rows = group(np.random.default_rng(seed))
        dt = time.perf_counter() - t0
        for row in rows:
            row.seconds = dt / max(len(rows), 1)
            if printer:
                printer(row.line())
        results.extend(rows)
    if printer:
        failed = sum(not r.passed for r in results)
        printer(f"{len(results) - failed}/{len(results)} checks passed")
    return results
