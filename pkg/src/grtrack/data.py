"""Synthetic tracking sequences and their on-disk format.

A sequence directory holds ``frames/NNNNNN.ppm`` (binary P6, 8-bit RGB),
``groundtruth.txt`` with one ``x,y,w,h`` line per frame (pixels, top-left
origin) and ``sequence.yaml`` echoing the generator settings.
"""
from __future__ import annotations

import colorsys
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.ndimage import zoom


class DataError(ValueError):
    """Missing, malformed or inconsistent sequence data."""


@dataclass
class SyntheticSequenceConfig:
    length: int = 120
    frame_h: int = 128
    frame_w: int = 128
    target_w: int = 24
    target_h: int = 20
    speed: float = 1.5              # px / frame
    jitter_std: float = 0.5         # px / frame
    hue_drift: float = 0.0          # fraction of the color wheel per frame
    scale_drift: float = 0.0        # log scale change per frame
    distractors: int = 0
    distractor_similarity: float = 0.9
    occlusions: list[tuple[int, int]] = field(default_factory=list)  # (start frame, duration)
    min_scale: float = 0.6
    max_scale: float = 1.6

    def validate(self) -> "SyntheticSequenceConfig":
        if self.length < 1:
            raise DataError("sequence length must be positive")
        vals = [self.speed, self.jitter_std, self.hue_drift, self.scale_drift, self.distractor_similarity]
        if not all(np.isfinite(vals)):
            raise DataError("generator rates must be finite")
        largest_w = self.target_w * self.max_scale
        largest_h = self.target_h * self.max_scale
        if largest_w + 2 > self.frame_w or largest_h + 2 > self.frame_h or self.target_w < 4 or self.target_h < 4:
            raise DataError(f"target {self.target_w}x{self.target_h} (x{self.max_scale}) cannot stay inside "
                            f"a {self.frame_w}x{self.frame_h} frame")
        return self


@dataclass
class Sequence:
    frames: np.ndarray            # (L, H, W, 3) uint8
    gt: np.ndarray                # (L, 4) float x, y, w, h
    name: str = "seq"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)


# -- rendering -----------------------------------------------------------------


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def _pattern(rng: np.random.Generator, size: int = 16) -> np.ndarray:
    """Two-tone blob/stripe pattern in [0, 1]."""
    coarse = rng.random((4, 4))
    blobs = zoom(coarse, size / 4, order=1)
    yy, xx = np.mgrid[0:size, 0:size] / size
    theta = rng.uniform(0, np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(1.0, 2.5) * (xx * np.cos(theta) + yy * np.sin(theta)))
    p = 0.6 * blobs + 0.4 * stripes
    return (p - p.min()) / (np.ptp(p) + 1e-9)


def _texture(pattern: np.ndarray, hue: float, w: int, h: int) -> np.ndarray:
    c1 = _hsv(hue, 0.85, 0.95)
    c2 = _hsv(hue + 0.08, 0.9, 0.35)
    ys = (np.arange(h) * pattern.shape[0] / h).astype(int)
    xs = (np.arange(w) * pattern.shape[1] / w).astype(int)
    p = pattern[np.ix_(ys, xs)][..., None]
    return p * c1 + (1 - p) * c2


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    coarse = rng.uniform(0.25, 0.65, size=(6, 6, 3))
    base = zoom(coarse, (h / 6, w / 6, 1), order=1)[:h, :w]
    gray = base.mean(axis=2, keepdims=True)
    base = 0.6 * gray + 0.4 * base  # low saturation
    return np.clip(base + rng.normal(0, 0.03, size=(h, w, 3)), 0, 1)


class _Mover:
    def __init__(self, rng, cfg: SyntheticSequenceConfig, w: float, h: float, speed: float):
        self.w, self.h = w, h
        self.cx = rng.uniform(w, cfg.frame_w - w)
        self.cy = rng.uniform(h, cfg.frame_h - h)
        ang = rng.uniform(0, 2 * np.pi)
        self.vx, self.vy = speed * np.cos(ang), speed * np.sin(ang)

    def step(self, rng, cfg: SyntheticSequenceConfig, w: float, h: float) -> None:
        self.w, self.h = w, h
        self.cx += self.vx + rng.normal(0, cfg.jitter_std)
        self.cy += self.vy + rng.normal(0, cfg.jitter_std)
        lo_x, hi_x = w / 2 + 1, cfg.frame_w - w / 2 - 1
        lo_y, hi_y = h / 2 + 1, cfg.frame_h - h / 2 - 1
        if self.cx < lo_x or self.cx > hi_x:
            self.vx = -self.vx
            self.cx = min(max(self.cx, lo_x), hi_x)
        if self.cy < lo_y or self.cy > hi_y:
            self.vy = -self.vy
            self.cy = min(max(self.cy, lo_y), hi_y)

    def box(self) -> tuple[int, int, int, int]:
        w, h = int(round(self.w)), int(round(self.h))
        return int(round(self.cx - w / 2)), int(round(self.cy - h / 2)), w, h


def gen_sequence(cfg: SyntheticSequenceConfig, seed: int, name: str = "seq") -> Sequence:
    """Render a deterministic sequence; ground truth is the exact drawn rectangle."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    H, W = cfg.frame_h, cfg.frame_w
    bg = _background(rng, H, W)
    pattern = _pattern(rng)
    hue0 = rng.random()
    target = _Mover(rng, cfg, cfg.target_w, cfg.target_h, cfg.speed)
    distractors = []
    for _ in range(cfg.distractors):
        sim = cfg.distractor_similarity
        d_pattern = sim * pattern + (1 - sim) * _pattern(rng)
        d_hue = hue0 + (1 - sim) * rng.uniform(-0.5, 0.5)
        scale = rng.uniform(0.8, 1.2)
        mover = _Mover(rng, cfg, cfg.target_w * scale, cfg.target_h * scale, cfg.speed * rng.uniform(0.5, 1.5))
        distractors.append((mover, d_pattern, d_hue, scale))
    occluded = np.zeros(cfg.length, dtype=bool)
    for start, dur in cfg.occlusions:
        occluded[max(start, 0):max(start + dur, 0)] = True

    frames = np.empty((cfg.length, H, W, 3), dtype=np.uint8)
    gt = np.empty((cfg.length, 4), dtype=np.float64)
    for t in range(cfg.length):
        s = float(np.clip(np.exp(cfg.scale_drift * t), cfg.min_scale, cfg.max_scale))
        if t > 0:
            target.step(rng, cfg, cfg.target_w * s, cfg.target_h * s)
            for mover, _, _, dscale in distractors:
                mover.step(rng, cfg, cfg.target_w * dscale, cfg.target_h * dscale)
        else:
            target.w, target.h = cfg.target_w * s, cfg.target_h * s
        img = bg.copy()
        for mover, d_pattern, d_hue, _ in distractors:
            x, y, w, h = _clip_box(mover.box(), W, H)
            img[y:y + h, x:x + w] = _texture(d_pattern, d_hue, w, h)
        x, y, w, h = _clip_box(target.box(), W, H)
        img[y:y + h, x:x + w] = _texture(pattern, hue0 + cfg.hue_drift * t, w, h)
        if occluded[t]:
            ox, oy = x + w // 5, y + h // 5
            img[oy:oy + (3 * h) // 5 + 1, ox:ox + (3 * w) // 5 + 1] = bg[oy:oy + (3 * h) // 5 + 1,
                                                                         ox:ox + (3 * w) // 5 + 1] * 0.5 + 0.25
        frames[t] = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
        gt[t] = (x, y, w, h)
    meta = {"seed": int(seed), "config": dataclasses.asdict(cfg)}
    return Sequence(frames, gt, name, meta)


def _clip_box(box, fw: int, fh: int) -> tuple[int, int, int, int]:
    x, y, w, h = box
    x = min(max(x, 0), fw - w)
    y = min(max(y, 0), fh - h)
    return x, y, w, h


def drift_heavy_config(length: int = 120, drift: float = 0.006, distractors: int = 2) -> SyntheticSequenceConfig:
    """Strong hue and scale drift with look-alikes of the initial target."""
    return SyntheticSequenceConfig(length=length, hue_drift=drift, scale_drift=drift * 0.5,
                                   distractors=distractors, distractor_similarity=0.9)


# -- PPM / annotation I/O --------------------------------------------------------


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise DataError("PPM frames must be (H, W, 3) uint8")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    pos += 1
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != b"P6" or maxval != 255:
        raise DataError(f"{path}: only 8-bit binary PPM (P6) is supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).copy()


def write_groundtruth(path: str | Path, boxes: np.ndarray) -> None:
    lines = [",".join(_fmt(v) for v in row) for row in np.asarray(boxes, dtype=np.float64)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_groundtruth(path: str | Path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        parts = line.replace("\t", ",").replace(" ", ",").split(",")
        parts = [p for p in parts if p]
        if len(parts) != 4:
            raise DataError(f"{path}:{i + 1}: expected x,y,w,h")
        rows.append([float(p) for p in parts])
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def save_sequence(seq: Sequence, root: str | Path) -> Path:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_ppm(root / "frames" / f"{i:06d}.ppm", frame)
    write_groundtruth(root / "groundtruth.txt", seq.gt)
    (root / "sequence.yaml").write_text(yaml.safe_dump({"name": seq.name, **_plain(seq.meta)}, sort_keys=False))
    return root


def load_sequence(root: str | Path) -> Sequence:
    root = Path(root)
    frame_paths = sorted((root / "frames").glob("*.ppm"))
    if not frame_paths:
        raise DataError(f"no frames under {root / 'frames'}")
    gt = read_groundtruth(root / "groundtruth.txt")
    if len(gt) != len(frame_paths):
        raise DataError(f"{root}: {len(frame_paths)} frames but {len(gt)} annotations")
    frames = np.stack([read_ppm(p) for p in frame_paths])
    meta = {}
    if (root / "sequence.yaml").exists():
        meta = yaml.safe_load((root / "sequence.yaml").read_text()) or {}
    return Sequence(frames, gt, meta.get("name", root.name), meta)


def list_sequences(root: str | Path) -> list[Path]:
    root = Path(root)
    if (root / "groundtruth.txt").exists():
        return [root]
    seqs = sorted(p for p in root.iterdir() if (p / "groundtruth.txt").exists()) if root.is_dir() else []
    if not seqs:
        raise DataError(f"no sequences found under {root}")
    return seqs


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
