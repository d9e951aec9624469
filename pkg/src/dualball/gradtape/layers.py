"""Parameter containers and dense layers built on the tape."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from ..errors import ContractError
from . import tape as T
from .tape import Var, parameter

ACTIVATIONS = {
    "identity": lambda x: x,
    "tanh": T.tanh,
    "relu": T.relu,
}


class Module:
    """Minimal parameter tree: attributes that are ``Var`` parameters or
    ``Module`` children are discovered in sorted attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Var]]:
        for key in sorted(vars(self)):
            val = getattr(self, key)
            name = f"{prefix}{key}"
            if isinstance(val, Var) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Var) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Var]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for k, v in self.named_parameters():
            if k not in state:
                raise ContractError(f"missing parameter {k!r} in state")
            if state[k].shape != v.value.shape:
                raise ContractError(f"shape mismatch for {k!r}: {state[k].shape} vs {v.value.shape}")
            v.value = np.array(state[k], dtype=float)


class DenseLayer(Module):
    """``act(x @ W.T + b)`` with ``W`` of shape ``(out, in)``."""

    def __init__(self, n_in: int, n_out: int, activation: str = "identity",
                 rng: np.random.Generator | None = None, scale: float = 1.0):
        if activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = scale * np.sqrt(6.0 / (n_in + n_out))
        self.weight = parameter(rng.uniform(-bound, bound, size=(n_out, n_in)))
        self.bias = parameter(np.zeros(n_out))
        self.activation = activation
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x) -> Var:
        x = T.as_var(x)
        if x.shape[-1] != self.n_in:
            raise ContractError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        return ACTIVATIONS[self.activation](x @ self.weight.T + self.bias)


class MLP(Module):
    """Stack of dense layers; hidden layers share one activation, the last is linear."""

    def __init__(self, sizes: Sequence[int], activation: str = "tanh",
                 rng: np.random.Generator | None = None, out_scale: float = 1.0):
        if len(sizes) < 2:
            raise ContractError("an MLP needs at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            self.layers.append(DenseLayer(a, b, "identity" if last else activation, rng,
                                          scale=out_scale if last else 1.0))

    def __call__(self, x) -> Var:
        for layer in self.layers:
            x = layer(x)
        return x

    def numpy_forward(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without recording a graph."""
        for layer in self.layers:
            x = x @ layer.weight.value.T + layer.bias.value
            if layer.activation == "tanh":
                x = np.tanh(x)
            elif layer.activation == "relu":
                x = np.maximum(x, 0.0)
        return x
