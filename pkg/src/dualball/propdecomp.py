"""Shared property embeddings and the sample-specific / sample-invariant
decomposition, with the orthogonality penalty, the EMA refresh of the
property bank and a principal-angle diagnostic."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError
from .gradtape import DenseLayer, Module, Var, parameter
from .gradtape import tape as T

MODALITIES = ("L", "A", "V")


class Decomposer(Module):
    """Shared tanh trunk with two linear heads emitting ``Sigma`` and ``mu``."""

    def __init__(self, n_in: int, d_p: int = 128, hidden: int = 64,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.trunk = DenseLayer(n_in, hidden, "tanh", rng)
        self.sigma_head = DenseLayer(hidden, d_p, "identity", rng)
        self.mu_head = DenseLayer(hidden, d_p, "identity", rng)
        self.d_p = d_p

    def __call__(self, x) -> tuple[Var, Var]:
        x = T.as_var(x)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ContractError("decompose needs a non-empty (batch, features) array")
        hid = self.trunk(x)
        return self.sigma_head(hid), self.mu_head(hid)


def decompose(net: Decomposer, features) -> tuple[Var, Var]:
    return net(features)


def prop_loss(P, mu) -> Var:
    """``|P - mean_j mu_j|^2``."""
    P, mu = T.as_var(P), T.as_var(mu)
    if P.shape[-1] != mu.shape[-1]:
        raise ContractError(f"property dim {P.shape[-1]} != component dim {mu.shape[-1]}")
    diff = P - T.mean(mu, axis=0)
    return T.vsum(diff * diff)


def orth_loss(sigma, mu, lam: float = 0.1) -> Var:
    """``lam * mean_j <Sigma_j, mu_j>^2``."""
    sigma, mu = T.as_var(sigma), T.as_var(mu)
    if sigma.shape != mu.shape:
        raise ContractError(f"shape mismatch {sigma.shape} vs {mu.shape}")
    inner = T.vsum(sigma * mu, axis=-1)
    return lam * T.mean(inner * inner)


@dataclass
class PropertyBank:
    """One property vector per modality, refreshed by EMA every ``interval`` steps."""

    d_p: int = 128
    decay: float = 0.95
    interval: int = 100
    P: dict = field(default_factory=dict)
    off_schedule_calls: int = 0

    def __post_init__(self):
        for m in MODALITIES:
            self.P.setdefault(m, parameter(np.zeros(self.d_p), name=f"P_{m}"))

    def parameters(self) -> list[Var]:
        return [self.P[m] for m in MODALITIES]

    def update(self, mu_bar: dict, step: int) -> bool:
        """EMA refresh of every modality present in ``mu_bar``; no-op off schedule."""
        applied = False
        for m, mb in mu_bar.items():
            new, applied = ema_update(self.P[m].value, mb, step, self.decay, self.interval)
            self.P[m].value = new
        if not applied:
            self.off_schedule_calls += 1
        return applied


def ema_update(P, mu_bar, step: int, decay: float = 0.95, interval: int = 100):
    """``decay * P + (1 - decay) * mu_bar`` when ``step`` is a positive multiple of ``interval``.

    Returns ``(P', applied)``; off-schedule calls return ``P`` unchanged.
    """
    P = np.asarray(P, dtype=float)
    if step <= 0 or step % interval:
        return P, False
    return decay * P + (1.0 - decay) * np.asarray(mu_bar, dtype=float), True


@dataclass
class AngleStats:
    mean: float
    max: float
    counts: np.ndarray
    edges: np.ndarray
    skipped: int
    mean_abs_inner: float

    def write_csv(self, path):
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([f"{lo:.4f}", f"{hi:.4f}", int(c)])


def principal_angles(sigma, mu, bins: int = 50) -> AngleStats:
    """Per-sample angle ``arccos(|<S_j, m_j>| / (|S_j| |m_j|))`` in degrees.

    Rows where either vector is zero are skipped and counted.
    """
    sigma = np.asarray(sigma.value if isinstance(sigma, Var) else sigma, dtype=float)
    mu = np.asarray(mu.value if isinstance(mu, Var) else mu, dtype=float)
    if sigma.shape != mu.shape:
        raise ContractError(f"shape mismatch {sigma.shape} vs {mu.shape}")
    ns, nm = np.linalg.norm(sigma, axis=-1), np.linalg.norm(mu, axis=-1)
    ok = (ns > 0) & (nm > 0)
    inner = np.sum(sigma * mu, axis=-1)
    cos = np.clip(np.abs(inner[ok]) / (ns[ok] * nm[ok]), 0.0, 1.0)
    ang = np.degrees(np.arccos(cos))
    counts, edges = np.histogram(ang, bins=bins, range=(0.0, 90.0))
    return AngleStats(
        mean=float(ang.mean()) if ang.size else float("nan"),
        max=float(ang.max()) if ang.size else float("nan"),
        counts=counts, edges=edges, skipped=int((~ok).sum()),
        mean_abs_inner=float(np.mean(np.abs(inner))) if inner.size else float("nan"),
    )
