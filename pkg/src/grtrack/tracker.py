"""Frame-by-frame tracking with a reference memory."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .config import Config
from .head import BBox, assemble_box, peak_score
from .memory import POLICIES, GRMemory, UpdateSchedule, init, update
from .model import TrackerNet
from .numeric import no_grad
from .relevance import stage_keep_counts

PIXEL_MEAN = 0.5
PIXEL_STD = 0.25
MIN_BOX_PX = 2.0


@dataclass(frozen=True)
class CropTransform:
    """Maps between frame pixels and normalised crop coordinates."""

    x0: float
    y0: float
    side: float
    out_size: int

    def to_crop(self, box_xywh) -> BBox:
        x, y, w, h = (float(v) for v in box_xywh)
        return BBox((x + w / 2 - self.x0) / self.side, (y + h / 2 - self.y0) / self.side, w / self.side, h / self.side)

    def to_frame(self, box: BBox) -> np.ndarray:
        w, h = box.w * self.side, box.h * self.side
        cx, cy = self.x0 + box.cx * self.side, self.y0 + box.cy * self.side
        return np.array([cx - w / 2, cy - h / 2, w, h])


def _check_box(box) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64).reshape(4)
    if not np.all(np.isfinite(box)) or box[2] <= 0 or box[3] <= 0:
        raise ValueError(f"degenerate box {box.tolist()}")
    return box


def crop_region(frame: np.ndarray, box, area_factor: float, out_size: int) -> tuple[np.ndarray, CropTransform]:
    """Square crop of side sqrt(area_factor*w*h) centred on ``box`` (x, y, w, h pixels).

    Returns a normalised (3, out_size, out_size) float crop; areas outside the
    frame are filled with the per-channel mean.
    """
    x, y, w, h = _check_box(box)
    if area_factor < 1:
        raise ValueError(f"area factor must be >= 1, got {area_factor}")
    side = math.sqrt(area_factor * w * h)
    x0, y0 = x + w / 2 - side / 2, y + h / 2 - side / 2
    tf = CropTransform(x0, y0, side, out_size)
    # frame index coordinates of the output pixel centres
    pos = (np.arange(out_size) + 0.5) * (side / out_size) - 0.5
    rows, cols = np.meshgrid(y0 + pos, x0 + pos, indexing="ij")
    img = np.asarray(frame, dtype=np.float64)
    out = np.empty((3, out_size, out_size))
    for c in range(3):
        chan = img[..., c]
        out[c] = map_coordinates(chan, [rows, cols], order=1, mode="constant", cval=float(chan.mean()))
    return (out / 255.0 - PIXEL_MEAN) / PIXEL_STD, tf


def clamp_box(box, frame_hw: tuple[int, int]) -> np.ndarray:
    """Clip a pixel box into the frame, keeping it at least MIN_BOX_PX wide and tall."""
    fh, fw = frame_hw
    x, y, w, h = np.asarray(box, dtype=np.float64)
    w = float(np.clip(w if np.isfinite(w) else MIN_BOX_PX, MIN_BOX_PX, fw))
    h = float(np.clip(h if np.isfinite(h) else MIN_BOX_PX, MIN_BOX_PX, fh))
    x = float(np.clip(x if np.isfinite(x) else 0.0, 0.0, fw - w))
    y = float(np.clip(y if np.isfinite(y) else 0.0, 0.0, fh - h))
    return np.array([x, y, w, h])


@dataclass
class TrackerState:
    memory: GRMemory
    last_box: np.ndarray
    frames_since_update: int
    t: int
    policy: str
    frame_hw: tuple[int, int]
    schedule: UpdateSchedule
    update_frames: list[int] = field(default_factory=list)
    last_score: float = 0.0


def init_tracker(frame: np.ndarray, gt_box, model: TrackerNet, cfg: Config, policy: str = "gr") -> TrackerState:
    if policy not in POLICIES:
        raise ValueError(f"unknown memory policy {policy!r}")
    box = _check_box(gt_box)
    enc = model.cfg
    crop, _ = crop_region(frame, box, cfg.crop.template_area_factor, enc.template_size_px)
    with no_grad():
        tokens = model.embed_template(crop[None], 0, anchor=True)
    memory = init(tokens, cfg.memory_capacity, enc.n_template)
    return TrackerState(memory, clamp_box(box, frame.shape[:2]), 0, 0, policy, tuple(frame.shape[:2]),
                        UpdateSchedule.from_config(cfg.memory))


def track_step(state: TrackerState, frame: np.ndarray, model: TrackerNet, cfg: Config,
               relevance: bool = True) -> np.ndarray:
    """Advance one frame; returns the predicted (x, y, w, h) pixel box."""
    enc = model.cfg
    state.t += 1
    t = state.t
    crop, tf = crop_region(frame, state.last_box, cfg.crop.search_area_factor, enc.search_size_px)
    with no_grad():
        search = model.embed_search(crop[None], t)
        ref = state.memory.tokens()
        counts = stage_keep_counts(len(ref), enc.keep_ratios)
        maps, _ = model.forward_infer(ref, search, relevance, counts)
        box = clamp_box(tf.to_frame(assemble_box(maps)), state.frame_hw)
        state.last_score = peak_score(maps)
        state.last_box = box
        state.frames_since_update += 1
        if state.schedule.due(t, state.frames_since_update):
            state.frames_since_update = 0
            state.update_frames.append(t)
            if state.policy != "one_template":
                zcrop, _ = crop_region(frame, box, cfg.crop.template_area_factor, enc.template_size_px)
                new = model.embed_template(zcrop[None], t)
                state.memory = update(state.memory, new, search, state.policy,
                                      scorer=model.filter_scores, center_score=state.last_score)
    return box


def track_sequence(frames: np.ndarray, gt0, model: TrackerNet, cfg: Config, policy: str = "gr",
                   relevance: bool = True) -> np.ndarray:
    """Boxes for every frame; frame 0 reports the given initial box."""
    state = init_tracker(frames[0], gt0, model, cfg, policy)
    boxes = [state.last_box.copy()]
    for frame in frames[1:]:
        boxes.append(track_step(state, frame, model, cfg, relevance))
    return np.stack(boxes)
