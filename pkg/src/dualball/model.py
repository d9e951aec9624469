"""The dual-ball network: paired projections, decomposition, mirror maps,
mirror-space score model, set fusion and prediction head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hypmath as hm
from . import mirror as mir
from .config import Config
from .data import MODALITIES, Dataset
from .fusion import MaskTokens, PredictionHead, SetFuser, build_slots, task_loss
from .gradtape import DenseLayer, Module, Var
from .gradtape import geometry as G
from .gradtape import tape as T
from .propdecomp import Decomposer, PropertyBank, orth_loss, prop_loss
from .scorefield import NoiseSchedule, ScoreModel, curl_penalty, curl_proxy, reverse_sample, score_loss


class DualBallNet(Module):
    def __init__(self, cfg: Config, dims: dict, n_out: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        n = cfg.manifold_dim
        self.cfg = cfg
        self.proj_e = [DenseLayer(dims[m], n, "identity", rng, scale=0.25) for m in MODALITIES]
        self.proj_a = [DenseLayer(dims[m], n, "identity", rng, scale=0.25) for m in MODALITIES]
        frac = cfg.tangent_fraction
        self.bound_e = hm.tangent_bound(cfg.c_e, cfg.eps_bnd, frac) if frac > 0 else None
        self.bound_a = hm.tangent_bound(cfg.c_a, cfg.eps_bnd, frac) if frac > 0 else None
        self.decomposers = [Decomposer(n, cfg.d_p, cfg.hidden, rng) for _ in MODALITIES]
        self.bank = PropertyBank(cfg.d_p, cfg.ema_decay, cfg.ema_interval)
        self.properties = self.bank.parameters()
        self.mirror = mir.MirrorLayer(n, cfg.c_e, cfg.c_a, cfg.hidden, cfg.mirror_depth,
                                      eps_bnd=cfg.eps_bnd, rng=rng, init_scale=0.1)
        self.schedule = NoiseSchedule(cfg.sigma_min, cfg.sigma_max, 1.0, cfg.diffusion_steps)
        self.score = ScoreModel(n, cfg.hidden, 2, self.schedule, rng, init_scale=0.1)
        self.fuser = SetFuser(n, cfg.fusion_dim, cfg.heads, cfg.c_e, cfg.eps_bnd, rng=rng,
                              tangent_bound=self.bound_e, out_scale=0.25)
        self.tokens = MaskTokens(n, 4, cfg.c_e, rng)
        self.head = PredictionHead(n, n_out, cfg.hidden, cfg.c_e, rng)
        self.feat_mean = {m: np.zeros(dims[m]) for m in MODALITIES}
        self.feat_std = {m: np.ones(dims[m]) for m in MODALITIES}
        self.n_out = n_out

    # parameters on the ball are stepped by Riemannian Adam
    def manifold_parameters(self) -> list[Var]:
        return [self.tokens.points]

    def euclidean_parameters(self) -> list[Var]:
        ball = {id(p) for p in self.manifold_parameters()}
        return [p for p in self.parameters() if id(p) not in ball]

    def fit_normalizer(self, data: Dataset):
        for j, m in enumerate(MODALITIES):
            rows = data.features[m][data.mask[:, j]]
            if len(rows):
                self.feat_mean[m] = rows.mean(axis=0)
                self.feat_std[m] = rows.std(axis=0) + 1e-6

    def state_dict(self) -> dict:
        state = super().state_dict()
        state["score.data_var"] = self.score.state_dict()["data_var"]
        for m in MODALITIES:
            state[f"feat_mean.{m}"] = self.feat_mean[m].copy()
            state[f"feat_std.{m}"] = self.feat_std[m].copy()
        return state

    def load_state_dict(self, state: dict):
        super().load_state_dict(state)
        dv = state["score.data_var"]
        self.score.data_var, self.score.var_initialized = float(dv[0]), bool(dv[1])
        for m in MODALITIES:
            self.feat_mean[m] = np.array(state[f"feat_mean.{m}"])
            self.feat_std[m] = np.array(state[f"feat_std.{m}"])


@dataclass
class StepOutput:
    raw: dict
    logits: Var
    h_fus: np.ndarray
    clip_fraction: float
    curl: float
    angles: tuple = (np.zeros((0, 1)), np.zeros((0, 1)))
    mu_bar: dict = field(default_factory=dict)
    empty_rows: int = 0


def _on_clip_radius(h: np.ndarray, c: float, eps_bnd: float) -> np.ndarray:
    """Rows the boundary safeguard has moved (they sit exactly on the clip radius)."""
    r = np.linalg.norm(h, axis=-1)
    return r >= hm.max_radius(c, eps_bnd) * (1.0 - 1e-12)


def project(model: DualBallNet, j: int, x, space: str = "E") -> Var:
    """Tangent projection of modality ``j`` into ``space`` (smoothly bounded)."""
    if space == "E":
        u, bound = model.proj_e[j](x), model.bound_e
    else:
        u, bound = model.proj_a[j](x), model.bound_a
    return u if bound is None else G.squash_tangent(u, bound)


def _fuse(model: DualBallNet, tangents: Var, vhat: Var | None, mask: np.ndarray):
    b = mask.shape[0]
    if vhat is None:
        slots_t = tangents
        full_mask = mask
        tokens = T.getitem(model.tokens.tangents(), slice(0, 3))
    else:
        slots_t = T.concat([tangents, T.reshape(vhat, (b, 1, -1))], axis=1)
        full_mask = np.concatenate([mask, np.ones((b, 1), dtype=bool)], axis=1)
        tokens = model.tokens.tangents()
    slots, empty = build_slots(slots_t, full_mask, tokens)
    return model.fuser(slots), empty


def forward(model: DualBallNet, feats: dict, mask: np.ndarray, labels, rng: np.random.Generator,
            train: bool = True) -> StepOutput:
    """One pass of the full objective on a batch.

    ``mask`` is the (already sampled) ``(B, 3)`` availability array.  With
    ``train=False`` only the fused prediction path runs.
    """
    cfg = model.cfg
    c_e, c_a, eps = cfg.c_e, cfg.c_a, cfg.eps_bnd
    mask = np.asarray(mask, dtype=bool)
    b = mask.shape[0]
    u_e, h_e, clipped = [], [], []
    for j, m in enumerate(MODALITIES):
        x = (feats[m] - model.feat_mean[m]) / model.feat_std[m]
        h = G.exp0(project(model, j, x, "E"), c_e, eps)
        u_e.append(G.log0(h, c_e))
        h_e.append(h)
        if train:
            h_a = hm.exp0(project(model, j, x, "A").value, c_a, eps)
            clipped.append(_on_clip_radius(h.value, c_e, eps)[mask[:, j]])
            clipped.append(_on_clip_radius(h_a, c_a, eps)[mask[:, j]])
    tangents = T.stack(u_e, axis=1)

    # anchor = exp0 of the mean available tangent; V-hat is measured from it
    weights = mask / np.maximum(mask.sum(axis=1, keepdims=True), 1)
    anchor_t = T.vsum(tangents * weights[..., None], axis=1)
    vhat = None
    z0_hat = None
    if cfg.use_vhat:
        z0_hat = reverse_sample(model.score, model.schedule, rng, b, cfg.manifold_dim)
        from .scorefield import vector_field_tape
        vhat = vector_field_tape(model.mirror, z0_hat, anchor_t)

    h_fus, empty = _fuse(model, tangents, vhat, mask)
    logits = model.head(h_fus)
    raw = {"task": task_loss(logits, labels, cfg.task)}
    if not train:
        return StepOutput(raw, logits, h_fus.value, 0.0, float("nan"), empty_rows=int(empty.sum()))

    clipped.append(_on_clip_radius(h_fus.value, c_e, eps))

    # decomposition per modality on available rows
    props, orths, mu_bar, sig_all, mu_all = [], [], {}, [], []
    for j, m in enumerate(MODALITIES):
        idx = np.flatnonzero(mask[:, j])
        if idx.size == 0:
            continue
        sig, mu = model.decomposers[j](T.getitem(u_e[j], idx))
        props.append(prop_loss(model.bank.P[m], mu))
        orths.append(orth_loss(sig, mu, cfg.lambda_orth))
        mu_bar[m] = mu.value.mean(axis=0)
        sig_all.append(sig.value)
        mu_all.append(mu.value)
    raw["prop"] = sum(props[1:], props[0]) * (1.0 / len(props))
    raw["orth"] = sum(orths[1:], orths[0]) * (1.0 / len(orths))

    # mirror losses on observed embeddings (and optionally the fused point)
    rows = []
    if cfg.cycle_points in ("modalities", "both"):
        rows = [T.getitem(h_e[j], np.flatnonzero(mask[:, j])) for j in range(3) if mask[:, j].any()]
    if cfg.cycle_points in ("fused", "both"):
        rows.append(h_fus)
    pts = T.concat(rows, axis=0)
    weighting = None if cfg.cycle_weighting == "none" else cfg.cycle_weighting
    raw["cycle"] = mir.cycle_loss(model.mirror, pts, weighting, bool(cfg.self_normalize))
    raw["inv"] = mir.involution_loss(model.mirror, pts, weighting, bool(cfg.self_normalize))

    # score model on mirror images of observed embeddings (no gradient into g)
    obs = np.concatenate([h_e[j].value[mask[:, j]] for j in range(3)])
    z0 = model.mirror.g(obs).value
    raw["score"] = score_loss(model.score, z0, model.schedule, rng)
    clipped.append(_on_clip_radius(z0, c_a, eps))
    clipped.append(_on_clip_radius(model.mirror.f(z0).value, c_e, eps))
    all_clip = np.concatenate(clipped)
    clip_fraction = float(all_clip.mean()) if all_clip.size else 0.0

    # curl of the recovered field around a few embedding points
    curl = float("nan")
    if z0_hat is not None:
        k = min(cfg.curl_points, obs.shape[0])
        pick = rng.choice(obs.shape[0], size=k, replace=False)
        back = hm.log0(model.mirror.f(hm.clip_to_ball(z0_hat[: 1], c_a, eps)[0]).value, c_e)[0]

        def field(h):
            h, _ = hm.clip_to_ball(h, c_e, eps)
            return back - hm.log0(h, c_e)

        curl = curl_proxy(field, obs[pick], cfg.curl_delta)
    raw["grad"] = T.as_var(np.array(curl_penalty(curl, cfg.lambda_curl, cfg.curl_bound)
                                    if np.isfinite(curl) else 0.0))

    # fusion of a random sub-mask of the available modalities
    if cfg.w_fus > 0:
        sub = mask.copy()
        for i in range(b):
            avail = np.flatnonzero(sub[i])
            if avail.size > 1:
                sub[i, rng.choice(avail)] = False
        h_sub, _ = _fuse(model, tangents, vhat, sub)
        raw["fus"] = task_loss(model.head(h_sub), labels, cfg.task)
    else:
        raw["fus"] = T.as_var(np.array(0.0))

    sig_cat = np.concatenate(sig_all) if sig_all else np.zeros((0, cfg.d_p))
    mu_cat = np.concatenate(mu_all) if mu_all else np.zeros((0, cfg.d_p))
    return StepOutput(raw, logits, h_fus.value, clip_fraction, curl, (sig_cat, mu_cat), mu_bar,
                      int(empty.sum()))
