"""Training objectives: center focal loss, box L1/GIoU, keep-ratio loss and their weighted sum."""
from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from .config import LossConfig
from .head import BBox
from .numeric import Tensor, maximum, minimum


def gaussian_radius(h: float, w: float, min_overlap: float = 0.7) -> float:
    """CenterNet radius: largest center shift keeping IoU >= ``min_overlap`` (in cells)."""
    a1 = 1.0
    b1 = h + w
    c1 = w * h * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * a1 * c1)) / 2

    a2 = 4.0
    b2 = 2 * (h + w)
    c2 = (1 - min_overlap) * w * h
    r2 = (b2 + math.sqrt(b2 ** 2 - 4 * a2 * c2)) / 2

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (h + w)
    c3 = (min_overlap - 1) * w * h
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def center_cell(box: BBox, grid: int) -> tuple[int, int]:
    x = min(max(int(math.floor(box.cx * grid)), 0), grid - 1)
    y = min(max(int(math.floor(box.cy * grid)), 0), grid - 1)
    return x, y


def gaussian_target(gt: BBox, grid: int, min_overlap: float = 0.7) -> np.ndarray:
    """(1, G, G) heatmap equal to 1 at the gt center cell, spread with the box size."""
    cx, cy = center_cell(gt, grid)
    r = gaussian_radius(gt.h * grid, gt.w * grid, min_overlap)
    sigma = (2.0 * r + 1.0) / 6.0
    ys, xs = np.mgrid[0:grid, 0:grid]
    heat = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
    return heat[None]


def focal_loss(R: Tensor, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """Penalty-reduced pixel-wise focal loss, normalised by the number of peaks."""
    target = np.asarray(target, dtype=np.float64)
    if R.shape != target.shape:
        raise ValueError(f"score map {R.shape} vs target {target.shape}")
    pos = target == 1.0
    p = minimum(maximum(R, 1e-12), 1.0 - 1e-12)
    pos_term = ((1.0 - p) ** alpha) * p.log() * pos.astype(np.float64)
    neg_w = ((1.0 - target) ** beta) * (~pos)
    neg_term = (p ** alpha) * (1.0 - p).log() * neg_w
    n_pos = max(int(pos.sum()), 1)
    return -(pos_term.sum() + neg_term.sum()) * (1.0 / n_pos)


def l1_loss(pred: Tensor, gt) -> Tensor:
    gt = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=np.float64))
    if pred.shape != gt.shape:
        raise ValueError(f"l1_loss shape mismatch {pred.shape} vs {gt.shape}")
    return (pred - gt).abs().mean()


def _corners(b: Tensor):
    cx, cy, w, h = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def giou(pred: Tensor, gt: Tensor) -> Tensor:
    """Per-row generalised IoU of (B, 4) center/size boxes."""
    px1, py1, px2, py2 = _corners(pred)
    gx1, gy1, gx2, gy2 = _corners(gt)
    iw = maximum(minimum(px2, gx2) - maximum(px1, gx1), 0.0)
    ih = maximum(minimum(py2, gy2) - maximum(py1, gy1), 0.0)
    inter = iw * ih
    area_p = (px2 - px1) * (py2 - py1)
    area_g = (gx2 - gx1) * (gy2 - gy1)
    union = area_p + area_g - inter
    enc = (maximum(px2, gx2) - minimum(px1, gx1)) * (maximum(py2, gy2) - minimum(py1, gy1))
    return inter / union - (enc - union) / enc


def giou_loss(pred, gt) -> Tensor:
    """Mean of 1 - GIoU over the batch; degenerate ground truth is rejected."""
    pred = _as_boxes(pred)
    gt = _as_boxes(gt)
    if np.any(gt.data[:, 2] <= 0) or np.any(gt.data[:, 3] <= 0):
        raise ValueError("degenerate ground-truth box (zero width or height)")
    return (1.0 - giou(pred, gt)).mean()


def _as_boxes(b) -> Tensor:
    if isinstance(b, BBox):
        return Tensor(b.as_array()[None])
    if isinstance(b, Tensor):
        return b if b.ndim == 2 else b.reshape(1, 4)
    return Tensor(np.asarray(b, dtype=np.float64).reshape(-1, 4))


def ratio_loss(decisions: Sequence[Tensor], q: Sequence[float]) -> Tensor:
    """Mean over batch and stages of (q_s - kept fraction)^2; each D is (B, N)."""
    if len(decisions) != len(q):
        raise ValueError(f"{len(decisions)} stage decisions for {len(q)} ratios")
    if not decisions:
        return Tensor(0.0)
    b = decisions[0].shape[0]
    total = None
    for d, qs in zip(decisions, q):
        term = ((d.mean(axis=-1) - qs) ** 2).sum()
        total = term if total is None else total + term
    return total * (1.0 / (b * len(q)))


PARTS = ("focal", "giou", "l1", "ratio")


def total_loss(parts: Mapping[str, Tensor], cfg: LossConfig | None = None) -> Tensor:
    """Weighted objective; raises naming the first non-finite part."""
    cfg = cfg or LossConfig()
    weights = {"focal": cfg.w_score, "giou": cfg.w_iou, "l1": cfg.w_l1, "ratio": cfg.w_ratio}
    total = None
    for name in PARTS:
        part = parts[name]
        val = part.data if isinstance(part, Tensor) else np.asarray(part)
        if not np.all(np.isfinite(val)):
            raise FloatingPointError(f"loss term {name!r} is not finite ({val})")
        term = part * weights[name]
        total = term if total is None else total + term
    return total
