"""Batch sampling and the two-stage training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import Config
from .data import Sequence
from .head import BBox, boxes_at_cells
from .losses import center_cell, focal_loss, gaussian_target, giou_loss, l1_loss, ratio_loss, total_loss
from .model import TrackerNet
from .numeric import Rng, Tensor
from .optim import AdamW, two_tier
from .tracker import crop_region

log = logging.getLogger(__name__)


@dataclass
class Batch:
    templates: np.ndarray  # (B, T, 3, Hz, Wz); template 0 is the anchor
    search: np.ndarray     # (B, 3, Hx, Wx)
    gt: np.ndarray         # (B, 4) normalised cx, cy, w, h in the search crop


def sample_batch(sequences: list[Sequence], rng: np.random.Generator, cfg: Config, n_templates: int,
                 batch_size: int | None = None) -> Batch:
    """Anchor from frame 0, other templates uniform in a window before a random search frame."""
    enc, crop = cfg.model, cfg.crop
    bsz = batch_size or cfg.train.batch_size
    window = cfg.train.template_window_frames
    temps, searches, gts = [], [], []
    for _ in range(bsz):
        seq = sequences[int(rng.integers(len(sequences)))]
        n = len(seq)
        s = int(rng.integers(1, n)) if n > 1 else 0
        lo = max(0, s - window)
        ids = [0] + [int(rng.integers(lo, s)) if s > lo else 0 for _ in range(n_templates - 1)]
        temps.append(np.stack([crop_region(seq.frames[i], seq.gt[i], crop.template_area_factor,
                                           enc.template_size_px)[0] for i in ids]))
        x, y, w, h = seq.gt[s]
        scale = math.exp(rng.normal(0.0, crop.scale_jitter_log))
        jw, jh = w * scale, h * scale
        shift = crop.center_jitter_frac * math.sqrt(crop.search_area_factor * jw * jh)
        cx = x + w / 2 + rng.uniform(-shift, shift)
        cy = y + h / 2 + rng.uniform(-shift, shift)
        img, tf = crop_region(seq.frames[s], (cx - jw / 2, cy - jh / 2, jw, jh), crop.search_area_factor,
                              enc.search_size_px)
        searches.append(img)
        gts.append(tf.to_crop(seq.gt[s]).as_array())
    return Batch(np.stack(temps), np.stack(searches), np.stack(gts))


def filter_keep_target(cfg: Config) -> float:
    """Fraction of candidates the token filter keeps once memory is full."""
    c = cfg.memory.capacity_templates
    return (c - 1) / c


def compute_loss(batch: Batch, model: TrackerNet, cfg: Config, *, step: int, tau: float, rng: Rng | None = None,
                 hard: bool = True, noise: list[np.ndarray] | None = None) -> tuple[dict[str, Tensor], Tensor]:
    """Forward the training path and return (loss parts, weighted total)."""
    lc = cfg.loss
    maps, masks, tf_dec = model.forward_train(batch.templates, batch.search, rng=rng, step=step, tau=tau, hard=hard,
                                              noise=noise)
    g = maps.grid
    boxes = [BBox(*row) for row in batch.gt]
    target = np.stack([gaussian_target(b, g, lc.gaussian_min_overlap) for b in boxes])
    cells = np.array([center_cell(b, g) for b in boxes])
    pred = boxes_at_cells(maps, cells)
    ratio = ratio_loss(masks, model.cfg.keep_ratios)
    if tf_dec is not None:
        ratio = ratio + ratio_loss([tf_dec.D], [filter_keep_target(cfg)])
    parts = {
        "focal": focal_loss(maps.R, target, lc.focal_alpha, lc.focal_beta),
        "giou": giou_loss(pred, batch.gt),
        "l1": l1_loss(pred, batch.gt),
        "ratio": ratio,
    }
    return parts, total_loss(parts, lc)


def train_step(batch: Batch, model: TrackerNet, opt: AdamW, cfg: Config, *, step: int, tau: float,
               rng: Rng) -> dict[str, float]:
    """One optimisation step; returns the four loss parts and the weighted total."""
    parts, total = compute_loss(batch, model, cfg, step=step, tau=tau, rng=rng)
    opt.zero_grad()
    total.backward()
    opt.clip_grad_norm(cfg.train.grad_clip)
    opt.step()
    out = {k: v.item() for k, v in parts.items()}
    out["total"] = total.item()
    return out


def tau_at(cfg: Config, step: int, steps: int) -> float:
    tc = cfg.train
    frac = step / max(steps - 1, 1)
    return tc.tau_start + (tc.tau_end - tc.tau_start) * min(max(frac, 0.0), 1.0)


def lr_scale(step: int, steps: int, drop_at: float = 0.8, factor: float = 0.1) -> float:
    """Step schedule: full rate, then ``factor`` from ``drop_at`` of the stage onwards."""
    return 1.0 if step < drop_at * steps else factor


def make_optimizer(model: TrackerNet, cfg: Config) -> AdamW:
    tc = cfg.train
    return two_tier(model, tc.lr_fast, tc.lr_slow, tuple(tc.betas), tc.weight_decay)


def train(model: TrackerNet, sequences: list[Sequence], cfg: Config, *, stage: int = 1, steps: int | None = None,
          opt: AdamW | None = None, start_step: int = 0, batch_size: int | None = None,
          callback: Callable[[int, dict], None] | None = None) -> tuple[AdamW, list[dict]]:
    """Run one training stage; stage 2 uses more templates per sample."""
    tc = cfg.train
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    n_t = tc.stage1_templates if stage == 1 else tc.stage2_templates
    steps = steps if steps is not None else (tc.stage1_steps if stage == 1 else tc.stage2_steps)
    opt = opt or make_optimizer(model, cfg)
    noise_rng = Rng(tc.seed).spawn(stage)
    data_rng = np.random.default_rng([tc.seed, stage, start_step])
    base = [g["lr"] for g in opt.groups]
    # stage 2 fine-tunes at the already-decayed rate
    stage_scale = 1.0 if stage == 1 else tc.stage2_lr_scale
    history = []
    for i in range(steps):
        step = start_step + i
        for g, lr in zip(opt.groups, base):
            g["lr"] = lr * stage_scale * (lr_scale(i, steps, tc.lr_drop_at, tc.lr_drop_factor) if stage == 1 else 1.0)
        batch = sample_batch(sequences, data_rng, cfg, n_t, batch_size)
        parts = train_step(batch, model, opt, cfg, step=step, tau=tau_at(cfg, i, steps), rng=noise_rng)
        history.append(parts)
        if callback is not None:
            callback(step, parts)
        if i % 25 == 0 or i == steps - 1:
            log.info("stage %d step %d total %.4f focal %.4f giou %.4f l1 %.4f ratio %.4f", stage, step,
                     parts["total"], parts["focal"], parts["giou"], parts["l1"], parts["ratio"])
    for g, lr in zip(opt.groups, base):
        g["lr"] = lr
    return opt, history
