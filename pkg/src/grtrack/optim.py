"""AdamW with per-group learning rates and global-norm gradient clipping."""
from __future__ import annotations

import numpy as np

from .numeric import Tensor


class AdamW:
    """Decoupled weight decay Adam over named parameter groups."""

    def __init__(self, groups: list[dict], betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 1e-4):
        self.groups = []
        seen = set()
        for g in groups:
            params = [p for p in g["params"] if id(p) not in seen]
            seen.update(id(p) for p in params)
            self.groups.append({"lr": float(g["lr"]), "params": params})
        self.b1, self.b2 = float(betas[0]), float(betas[1])
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [[np.zeros_like(p.data) for p in g["params"]] for g in self.groups]
        self.v = [[np.zeros_like(p.data) for p in g["params"]] for g in self.groups]

    def params(self) -> list[Tensor]:
        return [p for g in self.groups for p in g["params"]]

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def clip_grad_norm(self, max_norm: float) -> float:
        """Rescale all gradients so their global L2 norm is at most ``max_norm``; returns the norm before."""
        sq = sum(float((p.grad * p.grad).sum()) for p in self.params() if p.grad is not None)
        norm = float(np.sqrt(sq))
        if not np.isfinite(norm):
            raise FloatingPointError("gradient norm is not finite")
        if max_norm > 0 and norm > max_norm:
            scale = max_norm / (norm + 1e-12)
            for p in self.params():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for gi, g in enumerate(self.groups):
            lr = g["lr"]
            for pi, p in enumerate(g["params"]):
                if p.grad is None:
                    continue
                m, v = self.m[gi][pi], self.v[gi][pi]
                m *= self.b1
                m += (1 - self.b1) * p.grad
                v *= self.b2
                v += (1 - self.b2) * p.grad * p.grad
                p.data *= 1.0 - lr * self.weight_decay
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self, prefix: str = "optim") -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.float64)}
        for gi, g in enumerate(self.groups):
            for pi in range(len(g["params"])):
                out[f"{prefix}.{gi}.{pi}.m"] = self.m[gi][pi]
                out[f"{prefix}.{gi}.{pi}.v"] = self.v[gi][pi]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "optim") -> None:
        if f"{prefix}.t" not in arrays:
            return
        self.t = int(arrays[f"{prefix}.t"][0])
        for gi, g in enumerate(self.groups):
            for pi, p in enumerate(g["params"]):
                for name, store in (("m", self.m), ("v", self.v)):
                    key = f"{prefix}.{gi}.{pi}.{name}"
                    if key not in arrays or arrays[key].shape != p.data.shape:
                        raise ValueError(f"optimizer state {key} missing or mis-shaped")
                    store[gi][pi] = np.array(arrays[key], dtype=np.float64)


def two_tier(model, lr_fast: float, lr_slow: float, betas=(0.9, 0.999), weight_decay: float = 1e-4) -> AdamW:
    """Fast group = the model's ``fast_parameters()``; slow group = everything else."""
    fast = model.fast_parameters()
    fast_ids = {id(p) for p in fast}
    slow = [p for p in model.parameters() if id(p) not in fast_ids]
    return AdamW([{"lr": lr_fast, "params": fast}, {"lr": lr_slow, "params": slow}], betas, weight_decay=weight_decay)
