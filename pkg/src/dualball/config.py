"""Run configuration stored as flat ``key=value`` text."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import hypmath as hm
from .errors import ConfigError, DomainError


@dataclass
class Config:
    # geometry and the published constants
    c_e: float = 1.0
    c_a: float = 0.8
    eps_bnd: float = 0.05
    lambda_orth: float = 0.1
    lambda_curl: float = 0.1
    curl_bound: float = 0.01
    ema_decay: float = 0.95
    ema_interval: int = 100
    loss_ewma_decay: float = 0.99
    loss_update_interval: int = 50
    loss_window: int = 100
    grad_clip: float = 1.0
    mask_rates: tuple = (0.2, 0.5, 0.8)
    mask_min_start: float = 0.5
    mask_min_end: float = 0.1
    mask_anneal_epochs: int = 10
    test_mask: float = 0.3
    d_p: int = 128
    lr: float = 0.001
    heads: int = 8
    mirror_depth: int = 2
    seeds: tuple = (42, 123, 2025)
    # schedule details
    mask_anneal_steps: int = 4
    mask_floor_mode: str = "clip"
    epochs: int = 40
    batch_size: int = 64
    # architecture
    manifold_dim: int = 8
    hidden: int = 64
    fusion_dim: int = 128
    tangent_fraction: float = 0.9
    task: str = "classification"
    # loss weights of the total objective
    w_grad: float = 0.0
    w_score: float = 1.0
    w_cycle: float = 5.0
    w_inv: float = 5.0
    w_prop: float = 1.0
    w_fus: float = 0.0
    cycle_weighting: str = "volume"
    self_normalize: int = 1
    cycle_points: str = "both"
    use_vhat: int = 1
    # diffusion and diagnostics
    sigma_min: float = 0.01
    sigma_max: float = 1.0
    diffusion_steps: int = 50
    curl_points: int = 16
    curl_delta: float = 1e-3
    radam_sigma: float = 2.0
    radam_gamma: float = 0.9
    radam_d_floor: float = 0.5
    # data
    data_path: str = ""
    data_seed: int = 7
    classes: int = 7
    n_train: int = 2000
    n_test: int = 500
    latent_dim: int = 8
    feature_dims: tuple = (32, 24, 16)
    feature_noise: tuple = (0.05, 0.6, 0.6)
    proto_radius: float = 1.2
    spread: float = 0.15
    rho_inc: float = 0.2
    corrupt_modalities: tuple = ("A", "V")
    eval_seed: int = 0

    def validate(self) -> "Config":
        try:
            hm.check_curvature_ratio(self.c_e, self.c_a)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        checks = [
            (0 < self.eps_bnd < 1, "eps_bnd must lie in (0, 1)"),
            (0 < self.ema_decay < 1, "ema_decay must lie in (0, 1)"),
            (0 < self.loss_ewma_decay < 1, "loss_ewma_decay must lie in (0, 1)"),
            (self.ema_interval >= 1 and self.loss_update_interval >= 1 and self.loss_window >= 1,
             "intervals and windows must be positive"),
            (self.grad_clip > 0 and self.lr > 0, "grad_clip and lr must be positive"),
            (all(0 <= r <= 1 for r in self.mask_rates) and len(self.mask_rates) > 0,
             "mask_rates must lie in [0, 1]"),
            (0 <= self.mask_min_end <= self.mask_min_start <= 1, "need 0 <= mask_min_end <= mask_min_start <= 1"),
            (0 <= self.test_mask < 1, "test_mask must lie in [0, 1)"),
            (0 <= self.tangent_fraction < 1, "tangent_fraction must lie in [0, 1)"),
            (self.fusion_dim % self.heads == 0, "heads must divide fusion_dim"),
            (self.mirror_depth >= 1 and self.manifold_dim >= 1, "mirror_depth and manifold_dim must be >= 1"),
            (self.epochs >= 0 and self.batch_size >= 1, "epochs >= 0 and batch_size >= 1 required"),
            (self.task in ("classification", "regression"), "task must be classification or regression"),
            (self.mask_floor_mode in ("clip", "filter"), "mask_floor_mode must be clip or filter"),
            (self.cycle_weighting in ("volume", "inverted", "none"), "cycle_weighting must be volume, inverted or none"),
            (len(self.seeds) > 0, "seeds must not be empty"),
            (self.cycle_points in ("modalities", "fused", "both"), "cycle_points must be modalities, fused or both"),
            (0 < self.sigma_min < self.sigma_max, "need 0 < sigma_min < sigma_max"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    @property
    def weights(self) -> dict:
        return {"task": 1.0, "grad": self.w_grad, "score": self.w_score, "cycle": self.w_cycle,
                "inv": self.w_inv, "prop": self.w_prop, "orth": self.lambda_orth, "fus": self.w_fus}

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            lines.append(f"{f.name}={val}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text())


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(s) for s in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str, base: Config | None = None) -> Config:
    """Apply ``key=value`` lines (``#`` comments allowed) on top of ``base``."""
    cfg = asdict(base or Config())
    defaults = asdict(Config())
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        cfg[key] = _coerce(key, val, defaults[key])
    return Config(**cfg).validate()


def load_config(path=None, overrides: dict | None = None) -> Config:
    text = ""
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
    if overrides:
        text += "\n" + "\n".join(f"{k}={v}" for k, v in overrides.items())
    return parse_config(text)
