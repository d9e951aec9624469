"""Training loop, checkpoints, evaluation protocols and diagnostics files."""

from __future__ import annotations

import csv
import logging
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mirror as mir
from .config import Config
from .data import (MODALITIES, PATTERNS, Dataset, MaskSchedule, SyntheticConfig, corrupt_features,
                   drop_modalities, eta_masks, generate_synthetic, load_records, pattern_mask, sample_mask)
from .errors import ContractError, DataError
from .gradtape import gradients
from .model import DualBallNet, forward
from .optim import LOSS_NAMES, Adam, LossNormalizer, RiemannianAdam, egrad2rgrad, global_grad_clip, total_loss
from .propdecomp import principal_angles

log = logging.getLogger(__name__)

METRIC_FIELDS = (["epoch", "step"] + [f"raw_{k}" for k in LOSS_NAMES] + [f"norm_{k}" for k in LOSS_NAMES]
                 + ["total", "clip_fraction", "curl", "angle_mean", "angle_max", "orth_inner",
                    "s_asym_consistent", "s_asym_inconsistent", "eta_t", "train_acc", "mask_floor"])


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def load_dataset(cfg: Config) -> Dataset:
    if cfg.data_path:
        data = load_records(cfg.data_path)
        if not len(data):
            raise DataError(f"{cfg.data_path}: no records")
        return data
    syn = SyntheticConfig(cfg.classes, cfg.n_train, cfg.n_test, cfg.latent_dim, cfg.c_e,
                          tuple(cfg.feature_dims), tuple(cfg.feature_noise), cfg.proto_radius,
                          cfg.spread, cfg.rho_inc, tuple(cfg.corrupt_modalities))
    return generate_synthetic(syn, cfg.data_seed)


def n_outputs(cfg: Config, data: Dataset) -> int:
    if cfg.task == "regression":
        return 1
    return max(cfg.classes, int(data.labels.max()) + 1 if len(data) else cfg.classes)


class Trainer:
    """Mini-batch training with resumable position ``(epoch, batch, step)``."""

    def __init__(self, cfg: Config, data: Dataset, seed: int):
        self.cfg, self.seed = cfg, seed
        self.train_data = data.train
        if not len(self.train_data):
            raise DataError("no training samples")
        self.model = DualBallNet(cfg, data.dims, n_outputs(cfg, data), seed)
        self.model.fit_normalizer(self.train_data)
        self.adam = Adam(lr=cfg.lr)
        self.radam = RiemannianAdam(cfg.c_e, sigma=cfg.radam_sigma, gamma=cfg.radam_gamma,
                                    d_floor=cfg.radam_d_floor, eps_bnd=cfg.eps_bnd)
        self.radam_state = self.radam.init_state(self.model.tokens.points.value)
        self.normalizer = LossNormalizer(LOSS_NAMES, cfg.loss_ewma_decay, cfg.loss_update_interval,
                                         cfg.loss_window)
        self.mask_schedule = MaskSchedule(tuple(cfg.mask_rates), cfg.mask_min_start, cfg.mask_min_end,
                                          cfg.mask_anneal_epochs, cfg.mask_anneal_steps, cfg.test_mask,
                                          cfg.mask_floor_mode)
        self.epoch = self.batch = self.step = 0
        self.batch_log: list[tuple] = []
        self._epoch_rows: list[dict] = []
        self.metrics: list[dict] = []
        self.ema_applied = 0
        self.skipped_steps = 0

    # -- one optimisation step --------------------------------------------------
    def _batches(self, epoch: int) -> list[np.ndarray]:
        n, bs = len(self.train_data), self.cfg.batch_size
        perm = np.random.default_rng([self.seed, epoch, 1]).permutation(n)
        return [perm[i:i + bs] for i in range(0, n, bs)]

    def train_step(self, idx: np.ndarray) -> dict:
        cfg, model = self.cfg, self.model
        rng = np.random.default_rng([self.seed, self.step, 2])
        d = self.train_data
        mask, p = sample_mask(d.mask[idx], self.epoch, rng, self.mask_schedule)
        feats = {m: d.features[m][idx] for m in MODALITIES}
        out = forward(model, feats, mask, d.labels[idx], rng, train=True)

        raw_vals = {k: float(out.raw[k].value) for k in LOSS_NAMES}
        self.normalizer.observe(raw_vals)
        normed = self.normalizer.normalize(out.raw)
        loss = total_loss(normed, cfg.weights)

        euc = model.euclidean_parameters()
        ball = model.manifold_parameters()
        grads = gradients(loss, euc + ball)
        grads, gnorm = global_grad_clip(grads, cfg.grad_clip)
        ok = self.adam.step(euc, grads[: len(euc)])
        tok = model.tokens.points
        rgrad = egrad2rgrad(tok.value, grads[len(euc)], cfg.c_e)
        if ok:
            tok.value, _ = self.radam.step(tok.value, rgrad, self.radam_state)
        else:
            self.skipped_steps += 1
        self.step += 1
        if self.step % cfg.ema_interval == 0 and out.mu_bar:
            self.ema_applied += model.bank.update(out.mu_bar, self.step)

        angles = principal_angles(*out.angles) if len(out.angles[0]) else None
        pred = out.logits.value.argmax(axis=1) if cfg.task == "classification" else None
        row = {
            "raw": raw_vals,
            "norm": {k: float(np.asarray(getattr(normed[k], "value", normed[k]))) for k in LOSS_NAMES},
            "total": float(loss.value),
            "clip": out.clip_fraction,
            "curl": out.curl,
            "angle_mean": angles.mean if angles else float("nan"),
            "angle_max": angles.max if angles else float("nan"),
            "orth_inner": angles.mean_abs_inner if angles else float("nan"),
            "acc": float(np.mean(pred == d.labels[idx])) if pred is not None else float("nan"),
        }
        self.batch_log.append((self.epoch, self.batch, self.step, p, out.clip_fraction, gnorm))
        self._epoch_rows.append(row)
        return row

    # -- loop ---------------------------------------------------------------------
    def run(self, max_steps: int | None = None, run_dir: Path | None = None):
        """Train until ``cfg.epochs`` are done or ``max_steps`` more steps were taken."""
        budget = max_steps
        while self.epoch < self.cfg.epochs:
            batches = self._batches(self.epoch)
            while self.batch < len(batches):
                if budget is not None and budget <= 0:
                    return
                self.train_step(batches[self.batch])
                self.batch += 1
                if budget is not None:
                    budget -= 1
            self._end_epoch()
            self.epoch += 1
            self.batch = 0
            if run_dir is not None:
                self.save(run_dir)

    def _end_epoch(self):
        rows = self._epoch_rows
        self._epoch_rows = []
        if not rows:
            return
        asym = self.asymmetry_by_flag()
        rec = {"epoch": self.epoch, "step": self.step}
        for k in LOSS_NAMES:
            rec[f"raw_{k}"] = np.mean([r["raw"][k] for r in rows])
            rec[f"norm_{k}"] = np.mean([r["norm"][k] for r in rows])
        rec["total"] = np.mean([r["total"] for r in rows])
        rec["clip_fraction"] = np.mean([r["clip"] for r in rows])
        rec["curl"] = rows[-1]["curl"]
        rec["angle_mean"] = np.mean([r["angle_mean"] for r in rows])
        rec["angle_max"] = np.max([r["angle_max"] for r in rows])
        rec["orth_inner"] = np.mean([r["orth_inner"] for r in rows])
        rec["s_asym_consistent"], rec["s_asym_inconsistent"] = asym
        rec["eta_t"] = self.radam_state.last_eta
        rec["train_acc"] = np.mean([r["acc"] for r in rows])
        from .data import anneal_min_rate
        rec["mask_floor"] = anneal_min_rate(self.epoch, self.mask_schedule)
        self.metrics.append(rec)
        log.info("epoch %d step %d total %.4f acc %.3f", self.epoch, self.step, rec["total"], rec["train_acc"])

    def asymmetry_by_flag(self, limit: int = 256):
        d = self.train_data
        n = min(limit, len(d))
        if n == 0:
            return float("nan"), float("nan")
        idx = np.arange(n)
        res = predict(self.model, d.subset(idx), seed=self.cfg.eval_seed)
        flags = d.flags[idx]
        means = [float(res.s_asym[flags == f].mean()) if np.any(flags == f) else float("nan") for f in (0, 1)]
        return tuple(means)

    # -- persistence ----------------------------------------------------------------
    def state(self) -> dict:
        return {
            "model": self.model.state_dict(), "adam": self.adam.state_dict(),
            "radam": self.radam_state, "normalizer": self.normalizer.state_dict(),
            "position": (self.epoch, self.batch, self.step), "metrics": self.metrics,
            "batch_log": self.batch_log, "epoch_rows": self._epoch_rows,
            "ema_applied": self.ema_applied, "skipped": self.skipped_steps,
            "off_schedule": self.model.bank.off_schedule_calls, "seed": self.seed,
        }

    def load_state(self, st: dict):
        self.model.load_state_dict(st["model"])
        self.adam.load_state_dict(st["adam"])
        self.radam_state = st["radam"]
        self.normalizer.load_state_dict(st["normalizer"])
        self.epoch, self.batch, self.step = st["position"]
        self.metrics, self.batch_log = list(st["metrics"]), list(st["batch_log"])
        self._epoch_rows = list(st["epoch_rows"])
        self.ema_applied, self.skipped_steps = st["ema_applied"], st["skipped"]
        self.model.bank.off_schedule_calls = st["off_schedule"]

    def save(self, run_dir):
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "checkpoint.pkl", "wb") as fh:
            pickle.dump(self.state(), fh)
        self.cfg.save(run_dir / "config.txt")
        write_metrics(self.metrics, run_dir / "metrics.csv")
        with open(run_dir / "batches.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "batch", "step", "mask_rate", "clip_fraction", "grad_norm"])
            for r in self.batch_log:
                w.writerow([_fmt(v) for v in r])

    @classmethod
    def restore(cls, run_dir, cfg: Config | None = None, data: Dataset | None = None) -> "Trainer":
        run_dir = Path(run_dir)
        ck = run_dir / "checkpoint.pkl"
        if not ck.is_file():
            raise FileNotFoundError(f"no checkpoint in {run_dir}")
        from .config import load_config
        cfg = cfg or load_config(run_dir / "config.txt")
        with open(ck, "rb") as fh:
            st = pickle.load(fh)
        data = data if data is not None else load_dataset(cfg)
        tr = cls(cfg, data, st["seed"])
        tr.load_state(st)
        return tr


def write_metrics(rows: list[dict], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in METRIC_FIELDS])


# -- inference and evaluation -------------------------------------------------------

@dataclass
class Prediction:
    scores: np.ndarray
    labels: np.ndarray
    h_fus: np.ndarray
    s_asym: np.ndarray
    token_slots: np.ndarray
    empty_rows: int


def predict(model: DualBallNet, data: Dataset, seed: int = 0, batch: int = 256) -> Prediction:
    """Forward pass honouring ``data.mask``; deterministic for a given ``seed``."""
    outs, hs = [], []
    empty = 0
    for start in range(0, len(data), batch):
        idx = np.arange(start, min(start + batch, len(data)))
        rng = np.random.default_rng([seed, start])
        feats = {m: data.features[m][idx] for m in MODALITIES}
        out = forward(model, feats, data.mask[idx], _dummy_labels(model, data.labels[idx]), rng, train=False)
        outs.append(out.logits.value)
        hs.append(out.h_fus)
        empty += out.empty_rows
    scores = np.concatenate(outs) if outs else np.zeros((0, model.n_out))
    h = np.concatenate(hs) if hs else np.zeros((0, model.cfg.manifold_dim))
    s_asym = mir.asymmetry_score(model.mirror, h) if len(h) else np.zeros(0)
    token_slots = (~data.mask).sum(axis=0)
    return Prediction(scores, data.labels, h, s_asym, token_slots, empty)


def _dummy_labels(model, labels):
    if model.cfg.task == "classification":
        return np.clip(np.asarray(labels, dtype=int), 0, model.n_out - 1)
    return np.asarray(labels, dtype=float)


def classification_metrics(scores: np.ndarray, labels: np.ndarray, classes: int) -> dict:
    """Acc7 over all classes; Acc2 and weighted F1 on the sign around the
    middle class, leaving the neutral class out."""
    pred = scores.argmax(axis=1)
    acc7 = float(np.mean(pred == labels)) if len(labels) else float("nan")
    mid = (classes - 1) / 2.0
    keep = labels != mid
    yb, pb = labels[keep] > mid, pred[keep] > mid
    acc2 = float(np.mean(yb == pb)) if keep.any() else float("nan")
    f1s, weights = [], []
    for cls in (True, False):
        tp = np.sum((pb == cls) & (yb == cls))
        fp = np.sum((pb == cls) & (yb != cls))
        fn = np.sum((pb != cls) & (yb == cls))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
        weights.append(np.sum(yb == cls))
    f1 = float(np.average(f1s, weights=weights)) if sum(weights) else float("nan")
    return {"acc7": acc7, "acc2": acc2, "f1": f1}


def regression_metrics(scores: np.ndarray, labels: np.ndarray) -> dict:
    pred = scores.reshape(-1)
    mae = float(np.mean(np.abs(pred - labels)))
    corr = float(np.corrcoef(pred, labels)[0, 1]) if len(labels) > 1 else float("nan")
    return {"mae": mae, "corr": corr}


def evaluate(model: DualBallNet, data: Dataset, cfg: Config, protocol: str, seed: int = 0) -> list[dict]:
    """Rows of metrics for one protocol on ``data`` (normally the test split)."""
    n = len(data)
    if n == 0:
        raise DataError("evaluation set is empty")
    k = model.n_out

    def score(name, subset: Dataset, **extra):
        res = predict(model, subset, seed)
        if cfg.task == "classification":
            met = classification_metrics(res.scores, subset.labels, k)
        else:
            met = regression_metrics(res.scores, subset.labels)
        row = {"protocol": protocol, "setting": name, **met}
        for j, m in enumerate(MODALITIES):
            row[f"tokens_{m}"] = int(res.token_slots[j])
        row.update(extra)
        return row

    rows = []
    if protocol == "clean":
        rows.append(score("full", data))
        rng = np.random.default_rng([seed, 3])
        rows.append(score(f"mask_{cfg.test_mask:g}", data.with_mask(drop_modalities(data.mask, cfg.test_mask, rng))))
    elif protocol == "fixed":
        for pat in PATTERNS:
            rows.append(score(pat, data.with_mask(pattern_mask(n, pat))))
    elif protocol == "eta":
        etas = [round(0.1 * i, 1) for i in range(1, 8)]
        for eta, mk in eta_masks(n, etas, seed).items():
            rows.append(score(f"eta_{eta:g}", data.with_mask(mk)))
    elif protocol == "corrupt":
        bad, hit = corrupt_features(data, 0.1, 1.0, seed)
        rows.append(score("clean", data))
        rows.append(score("corrupted", bad, corrupted=int(hit.sum())))
    else:
        raise ContractError(f"unknown protocol {protocol!r}")
    return rows


def write_rows(rows: list[dict], path):
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([r.get(k, "") if isinstance(r.get(k, ""), str) else _fmt(r[k]) for k in keys])


def run_train(cfg: Config, seed: int, out_dir, max_steps: int | None = None, resume: bool = False) -> Trainer:
    out_dir = Path(out_dir)
    data = load_dataset(cfg)
    if resume and (out_dir / "checkpoint.pkl").is_file():
        tr = Trainer.restore(out_dir, cfg, data)
    else:
        tr = Trainer(cfg, data, seed)
    tr.run(max_steps, out_dir)
    tr.save(out_dir)
    return tr


def run_eval(run_dir, protocol: str, out_path=None) -> list[dict]:
    tr = Trainer.restore(run_dir)
    data = load_dataset(tr.cfg).test
    rows = evaluate(tr.model, data, tr.cfg, protocol, tr.cfg.eval_seed)
    write_rows(rows, out_path or Path(run_dir) / f"eval_{protocol}.csv")
    return rows
