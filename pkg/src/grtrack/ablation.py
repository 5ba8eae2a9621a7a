"""Memory-policy comparison over a set of sequences."""
from __future__ import annotations

import numpy as np

from .config import Config
from .data import Sequence
from .memory import POLICIES
from .metrics import SequenceResult, success_auc, iou
from .model import TrackerNet
from .tracker import track_sequence


def run_ablation(model: TrackerNet, cfg: Config, sequences: list[Sequence],
                 policies=("one_template", "fifo", "score", "gr")) -> list[dict]:
    """Track every sequence under each policy; one row per policy with mean per-sequence AUC."""
    rows = []
    for policy in policies:
        if policy not in POLICIES:
            raise ValueError(f"unknown memory policy {policy!r}")
        aucs, mious = [], []
        for seq in sequences:
            pred = track_sequence(seq.frames, seq.gt[0], model, cfg, policy)
            ov = iou(pred, seq.gt)
            aucs.append(success_auc(ov))
            mious.append(float(np.mean(ov)))
        rows.append({"policy": policy, "sequences": len(sequences), "auc": float(np.mean(aucs)),
                     "auc_std": float(np.std(aucs)), "mean_iou": float(np.mean(mious))})
    return rows


def ablation_results(model: TrackerNet, cfg: Config, seq: Sequence, policy: str) -> SequenceResult:
    pred = track_sequence(seq.frames, seq.gt[0], model, cfg, policy)
    return SequenceResult(seq.name, pred, seq.gt)
