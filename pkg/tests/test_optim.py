import numpy as np
import pytest

from grtrack.config import Config
from grtrack.model import TrackerNet
from grtrack.numeric import Tensor
from grtrack.optim import AdamW, two_tier


def param(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_first_step_moves_by_lr():
    # bias-corrected first step is lr * sign(g) (up to eps) before weight decay
    p = param([1.0, -2.0])
    opt = AdamW([{"lr": 0.1, "params": [p]}], weight_decay=0.0)
    p.grad = np.array([0.5, -3.0])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)


def test_matches_reference_adamw():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=5)
    grads = rng.normal(size=(4, 5))
    p = param(x0.copy())
    opt = AdamW([{"lr": 0.01, "params": [p]}], betas=(0.9, 0.99), eps=1e-8, weight_decay=0.1)
    x, m, v = x0.copy(), np.zeros(5), np.zeros(5)
    for t, g in enumerate(grads, start=1):
        p.grad = g
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.99 * v + 0.01 * g * g
        x = x * (1 - 0.01 * 0.1) - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, x, rtol=1e-12)


def test_clip_grad_norm():
    a, b = param([0.0, 0.0]), param([0.0])
    opt = AdamW([{"lr": 0.1, "params": [a, b]}])
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert opt.clip_grad_norm(1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(np.r_[a.grad, b.grad], [0.6, 0.0, 0.8], atol=1e-12)


def test_clip_non_finite():
    a = param([0.0])
    opt = AdamW([{"lr": 0.1, "params": [a]}])
    a.grad = np.array([np.inf])
    with pytest.raises(FloatingPointError):
        opt.clip_grad_norm(1.0)


def test_params_without_grad_untouched():
    a = param([1.0])
    opt = AdamW([{"lr": 0.1, "params": [a]}])
    opt.step()
    assert a.data[0] == 1.0


def test_two_tier_partition():
    cfg = Config.desk()
    model = TrackerNet(cfg.model, seed=0)
    opt = two_tier(model, 1e-3, 1e-4)
    fast, slow = opt.groups
    assert fast["lr"] == 1e-3 and slow["lr"] == 1e-4
    ids = [id(p) for p in fast["params"]] + [id(p) for p in slow["params"]]
    assert len(ids) == len(set(ids)) == len(model.parameters())
    head_ids = {id(p) for p in model.head.parameters()}
    assert head_ids <= {id(p) for p in fast["params"]}
    assert id(model.patch_embed.proj.w) in {id(p) for p in slow["params"]}


def test_state_round_trip():
    p = param([1.0, 2.0])
    opt = AdamW([{"lr": 0.1, "params": [p]}])
    p.grad = np.array([1.0, -1.0])
    opt.step()
    q = param([1.0, 2.0])
    opt2 = AdamW([{"lr": 0.1, "params": [q]}])
    opt2.load_state_arrays(opt.state_arrays())
    assert opt2.t == 1
    np.testing.assert_array_equal(opt2.v[0][0], opt.v[0][0])
    with pytest.raises(ValueError):
        AdamW([{"lr": 0.1, "params": [param([1.0])]}]).load_state_arrays(opt.state_arrays())
