"""Synthetic three-modality data, record-file ingestion and missing-modality masks.

Synthetic samples live on the emotion ball: each class owns a prototype
point, samples are Mobius translations of it, and every modality observes a
fixed random linear image of ``log0(point)`` plus modality-specific noise.
A fraction of samples receives one modality generated from another class;
those carry ``flag = 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import hypmath as hm
from .errors import ContractError, DataError

MODALITIES = ("L", "A", "V")

# modality subsets of the fixed-pattern protocol; "t" is the language channel
PATTERNS = {
    "t": (True, False, False),
    "a": (False, True, False),
    "v": (False, False, True),
    "t,a": (True, True, False),
    "t,v": (True, False, True),
    "a,v": (False, True, True),
    "t,a,v": (True, True, True),
}


@dataclass
class Dataset:
    ids: list
    labels: np.ndarray
    features: dict
    mask: np.ndarray
    flags: np.ndarray
    split: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dims(self) -> dict:
        return {m: self.features[m].shape[1] for m in MODALITIES}

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset([self.ids[i] for i in np.arange(len(self))[idx]], self.labels[idx],
                       {m: f[idx] for m, f in self.features.items()}, self.mask[idx],
                       self.flags[idx], self.split[idx])

    @property
    def train(self) -> "Dataset":
        return self.subset(self.split == "train")

    @property
    def test(self) -> "Dataset":
        return self.subset(self.split == "test")

    def with_mask(self, mask) -> "Dataset":
        return replace(self, mask=np.asarray(mask, dtype=bool) & self.mask)


@dataclass(frozen=True)
class SyntheticConfig:
    classes: int = 7
    n_train: int = 2000
    n_test: int = 500
    latent_dim: int = 8
    c_e: float = 1.0
    dims: tuple = (32, 24, 16)
    noise: tuple = (0.05, 0.6, 0.6)
    proto_radius: float = 1.2
    spread: float = 0.15
    rho_inc: float = 0.2
    corrupt: tuple = ("A", "V")

    def validate(self):
        if self.classes < 2 or self.latent_dim < 1 or self.n_train < 0 or self.n_test < 0:
            raise ContractError("need >= 2 classes, positive latent dim and non-negative sizes")
        if len(self.dims) != 3 or min(self.dims) < 1 or len(self.noise) != 3 or min(self.noise) < 0:
            raise ContractError("dims and noise need one positive entry per modality")
        if not 0.0 <= self.rho_inc <= 1.0:
            raise ContractError("rho_inc must lie in [0, 1]")
        if self.spread < 0 or self.proto_radius <= 0:
            raise ContractError("spread must be >= 0 and proto_radius > 0")
        if not self.corrupt or any(m not in MODALITIES for m in self.corrupt):
            raise ContractError(f"corrupt modalities must be drawn from {MODALITIES}")


def generate_synthetic(config: SyntheticConfig = SyntheticConfig(), seed: int = 0) -> Dataset:
    """Deterministic synthetic dataset of ``n_train + n_test`` samples."""
    config.validate()
    rng = np.random.default_rng(seed)
    k, n, c = config.classes, config.latent_dim, config.c_e
    dirs = rng.standard_normal((k, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    protos = hm.exp0(config.proto_radius * dirs, c)
    maps = {m: rng.standard_normal((d, n)) / np.sqrt(n) for m, d in zip(MODALITIES, config.dims)}

    total = config.n_train + config.n_test
    labels = rng.integers(0, k, size=total)

    def points(lab):
        offset = hm.exp0(config.spread * rng.standard_normal((len(lab), n)), c, None)
        return hm.mobius_add(protos[lab], offset, c)

    tangent = hm.log0(points(labels), c)
    flags = (rng.uniform(size=total) < config.rho_inc).astype(int)
    other = (labels + rng.integers(1, k, size=total)) % k
    alt_tangent = hm.log0(points(other), c)
    which = rng.integers(0, len(config.corrupt), size=total)

    feats = {}
    for j, m in enumerate(MODALITIES):
        src = tangent.copy()
        hit = (flags == 1) & (np.array(config.corrupt)[which] == m)
        src[hit] = alt_tangent[hit]
        noise = config.noise[j] * rng.standard_normal((total, config.dims[j]))
        feats[m] = src @ maps[m].T + noise

    split = np.array(["train"] * config.n_train + ["test"] * config.n_test)
    return Dataset([f"s{i:05d}" for i in range(total)], labels, feats,
                   np.ones((total, 3), dtype=bool), flags, split)


# -- record files -------------------------------------------------------------

def write_records(dataset: Dataset, path):
    with open(Path(path), "w") as fh:
        for i in range(len(dataset)):
            rec = {
                "id": dataset.ids[i],
                "label": dataset.labels[i].item(),
                "features": {m: dataset.features[m][i].tolist()
                             for j, m in enumerate(MODALITIES) if dataset.mask[i, j]},
                "mask": [int(b) for b in dataset.mask[i]],
                "flag": int(dataset.flags[i]),
                "split": str(dataset.split[i]),
            }
            fh.write(json.dumps(rec) + "\n")


def load_records(path) -> Dataset:
    """Read newline-delimited JSON records.

    A modality may be absent when its mask bit is 0 (or when no mask is
    given); its feature slot is then zero-filled.  Feature widths are fixed
    by the first record that carries each modality.
    """
    ids, labels, flags, splits, masks = [], [], [], [], []
    rows = {m: [] for m in MODALITIES}
    dims: dict = {}
    with open(Path(path)) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                feats = rec["features"]
                mask = rec.get("mask", [int(m in feats) for m in MODALITIES])
                if len(mask) != 3:
                    raise ValueError("mask needs three entries")
                ids.append(str(rec["id"]))
                labels.append(rec["label"])
                flags.append(int(rec.get("flag", 0)))
                splits.append(str(rec.get("split", "train")))
                masks.append([bool(b) for b in mask])
                for j, m in enumerate(MODALITIES):
                    vec = feats.get(m)
                    if vec is None:
                        if mask[j]:
                            raise ValueError(f"modality {m} marked available but missing")
                        rows[m].append(None)
                        continue
                    vec = np.asarray(vec, dtype=float)
                    if vec.ndim != 1 or not np.all(np.isfinite(vec)):
                        raise ValueError(f"modality {m} must be a finite flat list")
                    dims.setdefault(m, vec.size)
                    if vec.size != dims[m]:
                        raise ValueError(f"modality {m} has width {vec.size}, expected {dims[m]}")
                    rows[m].append(vec)
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    feats = {}
    for m in MODALITIES:
        d = dims.get(m, 0)
        feats[m] = np.array([r if r is not None else np.zeros(d) for r in rows[m]]).reshape(len(ids), d)
    lab = np.asarray(labels)
    if lab.size and not np.issubdtype(lab.dtype, np.number):
        raise DataError(f"{path}: labels must be numeric")
    return Dataset(ids, lab if lab.size else np.zeros(0, dtype=int), feats,
                   np.asarray(masks, dtype=bool).reshape(len(ids), 3),
                   np.asarray(flags, dtype=int), np.asarray(splits, dtype=str))


# -- masking ------------------------------------------------------------------

@dataclass(frozen=True)
class MaskSchedule:
    rates: tuple = (0.2, 0.5, 0.8)
    min_start: float = 0.5
    min_end: float = 0.1
    anneal_epochs: int = 10
    anneal_steps: int = 4
    test_rate: float = 0.3
    floor_mode: str = "clip"


def anneal_min_rate(epoch: int, schedule: MaskSchedule = MaskSchedule()) -> float:
    """Minimum training mask rate, lowered in equal steps every ``anneal_epochs``."""
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    s = schedule
    step = (s.min_start - s.min_end) / s.anneal_steps
    k = min(epoch // s.anneal_epochs, s.anneal_steps)
    return float(max(s.min_end, s.min_start - k * step))


def effective_rate(p: float, floor: float, mode: str = "clip", rates=(0.2, 0.5, 0.8),
                   rng: np.random.Generator | None = None) -> float:
    if mode == "clip":
        return max(p, floor)
    if mode == "filter":
        allowed = [r for r in rates if r >= floor]
        if not allowed:
            return max(rates)
        return float(rng.choice(allowed)) if rng is not None else float(min(allowed))
    raise ContractError(f"unknown floor mode {mode!r}")


def drop_modalities(mask, p: float, rng: np.random.Generator, guard: bool = True) -> np.ndarray:
    """Independently drop available modalities with probability ``p``.

    With ``guard`` a sample whose available modalities would all vanish
    keeps one of them chosen uniformly.
    """
    mask = np.asarray(mask, dtype=bool)
    keep = mask & (rng.uniform(size=mask.shape) >= p)
    if guard:
        lost = ~keep.any(axis=1) & mask.any(axis=1)
        if lost.any():
            scores = rng.uniform(size=mask.shape) * mask
            pick = np.argmax(scores, axis=1)
            keep[lost, pick[lost]] = True
    return keep


def sample_mask(mask, epoch: int, rng: np.random.Generator, schedule: MaskSchedule = MaskSchedule(),
                p: float | None = None):
    """Training mask for one batch; returns ``(mask, rate used)``.

    A per-batch rate is drawn from ``schedule.rates`` and raised to the
    annealed floor.  An explicit ``p`` bypasses both.
    """
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    if p is None:
        drawn = float(rng.choice(schedule.rates))
        p = effective_rate(drawn, anneal_min_rate(epoch, schedule), schedule.floor_mode,
                           schedule.rates, rng)
    return drop_modalities(mask, p, rng), p


def eta_masks(n: int, etas, seed: int = 0) -> dict:
    """Nested test masks for global missing rates ``etas``.

    One uniform draw per (sample, modality) is shared by every rate, so a
    slot missing at rate ``eta`` stays missing at any larger rate.  A
    sample that would lose everything keeps its highest-draw modality.
    """
    u = np.random.default_rng(seed).uniform(size=(n, 3))
    best = np.argmax(u, axis=1)
    out = {}
    for eta in etas:
        keep = u >= eta
        keep[np.arange(n), best] |= ~keep.any(axis=1)
        out[float(eta)] = keep
    return out


def pattern_mask(n: int, pattern: str) -> np.ndarray:
    if pattern not in PATTERNS:
        raise ContractError(f"unknown pattern {pattern!r}")
    return np.tile(np.array(PATTERNS[pattern], dtype=bool), (n, 1))


def corrupt_features(dataset: Dataset, fraction: float = 0.1, scale: float = 1.0,
                     seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Add Gaussian noise to every modality of a random ``fraction`` of samples."""
    rng = np.random.default_rng(seed)
    hit = rng.uniform(size=len(dataset)) < fraction
    feats = {}
    for m in MODALITIES:
        f = dataset.features[m].copy()
        sd = f.std() if f.size else 0.0
        f[hit] += scale * sd * rng.standard_normal((int(hit.sum()), f.shape[1]))
        feats[m] = f
    return replace(dataset, features=feats), hit
