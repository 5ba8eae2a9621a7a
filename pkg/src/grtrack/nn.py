"""Parameter containers and initialisers."""
from __future__ import annotations

import math

import numpy as np

from .numeric import Tensor


class Module:
    """Walks attributes (in definition order) to find trainable tensors."""

    def named_parameters(self, prefix: str = ""):
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(val, prefix + name)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if strict and missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, arr in state.items():
            if name not in own:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            if own[name].shape != tuple(arr.shape):
                raise ValueError(f"{name}: shape {arr.shape} != {own[name].shape}")
            own[name].data[...] = arr

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(val, name: str):
    if isinstance(val, Tensor):
        if val.requires_grad:
            yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            yield from _walk(item, f"{name}.{i}")


def param(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


class Linear(Module):
    def __init__(self, rng: np.random.Generator, fan_in: int, fan_out: int, zero: bool = False):
        self.w = param(np.zeros((fan_in, fan_out))) if zero else xavier(rng, fan_in, fan_out)
        self.b = param(np.zeros(fan_out))

    def as_pair(self) -> tuple[Tensor, Tensor]:
        return self.w, self.b


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.g = param(np.ones(dim))
        self.b = param(np.zeros(dim))
