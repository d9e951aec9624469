"""Permutation-invariant fusion of the modality slots and the prediction head.

Every sample carries a fixed-length set of slots ``[L, A, V, Vhat]`` in the
tangent space at the origin of the emotion ball.  Missing entries are
replaced by learned mask tokens, so the input shape never changes.  A
multi-head attention pool with one learned seed query summarises the set.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .gradtape import MLP, DenseLayer, Module, Var, parameter
from .gradtape import geometry as G
from .gradtape import tape as T

SLOTS = ("L", "A", "V", "Vhat")


class SetFuser(Module):
    """Attention pooling over slots followed by a feed-forward block.

    Parameters
    ----------
    dim : int
        Tangent dimension of the slots and of the output.
    d_model : int
        Hidden width of the attention block.
    heads : int
        Number of attention heads; must divide ``d_model``.
    pooling : {"attention", "mean"}
        ``"mean"`` replaces attention by a plain average (test configuration).
    n_slots : int, optional
        When given, learned slot-position encodings are added, which breaks
        permutation invariance on purpose.
    tangent_bound : float, optional
        Smooth radial bound applied to the pooled tangent vector before
        ``exp0``; ``None`` leaves it unbounded.
    """

    def __init__(self, dim: int, d_model: int = 128, heads: int = 8, c: float = 1.0,
                 eps_bnd: float = 0.05, pooling: str = "attention", n_slots: int | None = None,
                 rng: np.random.Generator | None = None, tangent_bound: float | None = None,
                 out_scale: float = 1.0):
        if d_model % heads:
            raise ContractError("heads must divide d_model")
        if pooling not in ("attention", "mean"):
            raise ContractError(f"unknown pooling {pooling!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.embed = DenseLayer(dim, d_model, "identity", rng)
        self.seed = parameter(rng.normal(scale=1.0 / np.sqrt(d_model), size=(1, d_model)))
        self.query = DenseLayer(d_model, d_model, "identity", rng)
        self.key = DenseLayer(d_model, d_model, "identity", rng)
        self.value_proj = DenseLayer(d_model, d_model, "identity", rng)
        self.out_attn = DenseLayer(d_model, d_model, "identity", rng)
        self.ff = MLP([d_model, d_model, d_model], "relu", rng)
        self.out = DenseLayer(d_model, dim, "identity", rng, scale=out_scale)
        self.pos = parameter(rng.normal(scale=0.1, size=(n_slots, d_model))) if n_slots else None
        self.dim, self.d_model, self.heads = dim, d_model, heads
        self.c, self.eps_bnd, self.pooling = c, eps_bnd, pooling
        self.tangent_bound = tangent_bound

    def pool(self, slots) -> Var:
        """Tangent-space summary ``(B, dim)`` of ``(B, S, dim)`` slots."""
        slots = T.as_var(slots)
        if slots.ndim != 3 or slots.shape[-1] != self.dim:
            raise ContractError(f"expected (batch, slots, {self.dim}) input, got {slots.shape}")
        b, s, _ = slots.shape
        x = self.embed(slots)
        if self.pos is not None:
            if s != self.pos.shape[0]:
                raise ContractError("slot count differs from the position table")
            x = x + self.pos
        if self.pooling == "mean":
            hidden = T.mean(x, axis=1)
        else:
            h, dh = self.heads, self.d_model // self.heads
            q = T.reshape(self.query(self.seed), (1, h, 1, dh))
            k = T.swapaxes(T.reshape(self.key(x), (b, s, h, dh)), 1, 2)
            v = T.swapaxes(T.reshape(self.value_proj(x), (b, s, h, dh)), 1, 2)
            att = T.softmax(T.matmul(q, T.swapaxes(k, 2, 3)) * (1.0 / np.sqrt(dh)), axis=-1)
            o = T.reshape(T.matmul(att, v), (b, self.d_model))
            hidden = self.seed + self.out_attn(o)
        hidden = hidden + self.ff(hidden)
        u = self.out(hidden)
        return u if self.tangent_bound is None else G.squash_tangent(u, self.tangent_bound)

    def __call__(self, slots) -> Var:
        """Fused point ``h_fus`` on the emotion ball (clipped)."""
        return G.exp0(self.pool(slots), self.c, self.eps_bnd)


class MaskTokens(Module):
    """One learned ball point per slot, used when the slot is unavailable."""

    def __init__(self, dim: int, n_slots: int = len(SLOTS), c: float = 1.0,
                 rng: np.random.Generator | None = None, scale: float = 0.05):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.points = parameter(rng.normal(scale=scale, size=(n_slots, dim)))
        self.c = c

    def tangents(self) -> Var:
        return G.log0(self.points, self.c)


def build_slots(tangents: Var, mask: np.ndarray, tokens: Var) -> tuple[Var, np.ndarray]:
    """Substitute mask tokens for unavailable slots.

    ``tangents`` is ``(B, S, dim)``, ``mask`` a ``(B, S)`` availability array
    and ``tokens`` the ``(S, dim)`` token tangents.  Returns the slot tensor
    and a per-sample flag marking rows with no available slot.
    """
    tangents = T.as_var(tangents)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tangents.shape[:2]:
        raise ContractError(f"mask shape {mask.shape} does not match slots {tangents.shape[:2]}")
    tok = T.reshape(T.as_var(tokens), (1,) + tuple(T.as_var(tokens).shape))
    slots = T.where(mask[..., None], tangents, tok)
    return slots, ~mask.any(axis=1)


class PredictionHead(Module):
    """``y = head(log0(h_fus))``; ``n_out`` logits or one regression value."""

    def __init__(self, dim: int, n_out: int, hidden: int = 64, c: float = 1.0,
                 rng: np.random.Generator | None = None):
        self.net = MLP([dim, hidden, n_out], "tanh", rng)
        self.c, self.n_out = c, n_out

    def __call__(self, h_fus) -> Var:
        return self.net(G.log0(h_fus, self.c))


def predict(head: PredictionHead, h_fus) -> Var:
    return head(h_fus)


def task_loss(y_hat, y, kind: str = "classification") -> Var:
    """Cross-entropy over logits, or mean absolute error for regression."""
    y_hat = T.as_var(y_hat)
    y = np.asarray(y)
    if kind == "classification":
        k = y_hat.shape[-1]
        if y.shape != y_hat.shape[:-1]:
            raise ContractError("one label per row expected")
        if y.size and (np.any(y < 0) or np.any(y >= k) or not np.issubdtype(y.dtype, np.integer)):
            raise ContractError(f"labels must be integers in [0, {k})")
        onehot = np.eye(k)[y]
        return -T.mean(T.vsum(T.log_softmax(y_hat, axis=-1) * onehot, axis=-1))
    if kind == "regression":
        pred = T.reshape(y_hat, y.shape) if y_hat.value.size == y.size else None
        if pred is None:
            raise ContractError("regression target shape does not match the head")
        return T.mean(T.vabs(pred - y.astype(float)))
    raise ContractError(f"unknown task kind {kind!r}")
