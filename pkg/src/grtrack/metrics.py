"""Overlap metrics, success/precision curves and the CSV results tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError

THRESHOLDS = np.arange(21) / 20.0
PRECISION_PX = (5.0, 10.0, 20.0)


def iou(a, b) -> np.ndarray | float:
    """IoU of (x, y, w, h) boxes; accepts single boxes or (N, 4) arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    single = a.ndim == 1 and b.ndim == 1
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    ix = np.clip(np.minimum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0, None)
    inter = ix * iy
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return float(out[0]) if single else out


def center_error(a, b) -> np.ndarray:
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    ca = a[:, :2] + a[:, 2:] / 2
    cb = b[:, :2] + b[:, 2:] / 2
    return np.linalg.norm(ca - cb, axis=1)


def success_curve(ious) -> np.ndarray:
    """Fraction of frames whose IoU strictly exceeds each threshold."""
    ious = np.asarray(ious, dtype=np.float64).reshape(-1)
    if ious.size == 0:
        raise ValueError("no frames to evaluate")
    return (ious[None, :] > THRESHOLDS[:, None]).mean(axis=1)


def success_auc(ious) -> float:
    return float(success_curve(ious).mean())


def precision(errors, px: float = 20.0) -> float:
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    if errors.size == 0:
        raise ValueError("no frames to evaluate")
    return float((errors <= px).mean())


# -- results tables --------------------------------------------------------------

RESULT_FIELDS = ("sequence", "frame", "pred_x", "pred_y", "pred_w", "pred_h", "gt_x", "gt_y", "gt_w", "gt_h")


@dataclass
class SequenceResult:
    name: str
    pred: np.ndarray  # (L, 4) x, y, w, h pixels
    gt: np.ndarray | None = None

    def metrics(self, gt: np.ndarray | None = None) -> dict[str, float]:
        gt = self.gt if gt is None else gt
        if gt is None or len(gt) != len(self.pred):
            raise DataError(f"{self.name}: ground truth missing or length mismatch")
        ov = iou(self.pred, gt)
        err = center_error(self.pred, gt)
        out = {"frames": len(self.pred), "auc": success_auc(ov), "mean_iou": float(np.mean(ov))}
        for px in PRECISION_PX:
            out[f"precision@{px:g}"] = precision(err, px)
        return out


def _f(v: float) -> str:
    return f"{float(v):.4f}"


def results_csv(results: list[SequenceResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_FIELDS)
    for r in results:
        gt = r.gt if r.gt is not None else np.full_like(r.pred, np.nan)
        for i, (p, g) in enumerate(zip(r.pred, gt)):
            w.writerow([r.name, i, *map(_f, p), *map(_f, g)])
    return buf.getvalue()


def write_results(path: str | Path, results: list[SequenceResult]) -> None:
    Path(path).write_text(results_csv(results))


def read_results(path: str | Path) -> list[SequenceResult]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read results {path}: {exc}") from exc
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{path}: no result rows")
    if set(RESULT_FIELDS) - set(rows[0]):
        raise DataError(f"{path}: header must be {','.join(RESULT_FIELDS)}")
    by_seq: dict[str, list] = {}
    for row in rows:
        by_seq.setdefault(row["sequence"], []).append(row)
    out = []
    for name, seq_rows in by_seq.items():
        seq_rows.sort(key=lambda r: int(r["frame"]))
        pred = np.array([[float(r[k]) for k in RESULT_FIELDS[2:6]] for r in seq_rows])
        gt = np.array([[float(r[k]) for k in RESULT_FIELDS[6:]] for r in seq_rows])
        out.append(SequenceResult(name, pred, None if np.isnan(gt).all() else gt))
    return out


def metrics_table(results: list[SequenceResult], gts: dict[str, np.ndarray] | None = None) -> list[dict]:
    """One row per sequence plus an ``ALL`` row of frame-pooled metrics."""
    rows, all_pred, all_gt = [], [], []
    for r in sorted(results, key=lambda r: r.name):
        gt = gts.get(r.name) if gts else None
        m = r.metrics(gt)
        rows.append({"sequence": r.name, **m})
        all_pred.append(r.pred)
        all_gt.append(r.gt if gt is None else gt)
    pooled = SequenceResult("ALL", np.concatenate(all_pred), np.concatenate(all_gt)).metrics()
    rows.append({"sequence": "ALL", **pooled})
    return rows


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(rows[0])
    w.writerow(keys)
    for row in rows:
        w.writerow([v if isinstance(v, (str, int)) else _f(v) for v in (row[k] for k in keys)])
    return buf.getvalue()
