from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                      max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    ``f`` must rebuild its graph from ``params`` on every call. The error for
    one coordinate is ``|analytic - numeric| / max(1, |numeric|)``. With
    ``max_entries`` set, only that many randomly chosen coordinates per
    parameter are perturbed.
    """
    for p in params:
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise FloatingPointError("finite_diff_check: f is not finite")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    pick = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(pick.choice(flat.size, size=max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("finite_diff_check: f is not finite under perturbation")
            num = (fp - fm) / (2.0 * eps)
            err = abs(a.reshape(-1)[i] - num) / max(1.0, abs(num))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
