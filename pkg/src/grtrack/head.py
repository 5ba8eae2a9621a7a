"""Center/offset/size prediction head and box decoding."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import EncoderConfig
from .nn import Module, param
from .numeric import Tensor, conv2d, gelu, mac_tag, stack


@dataclass(frozen=True)
class BBox:
    """Center/size box, normalised to the search crop."""

    cx: float
    cy: float
    w: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "BBox":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


@dataclass
class ScoreMaps:
    R: Tensor  # (B, 1, G, G) center score
    E: Tensor  # (B, 2, G, G) sub-cell offset
    O: Tensor  # (B, 2, G, G) normalised size

    @property
    def grid(self) -> int:
        return self.R.shape[-1]


class Conv(Module):
    def __init__(self, rng: np.random.Generator, cin: int, cout: int, k: int = 3):
        fan_in = k * k * cin
        self.w = param(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, cout)))
        self.b = param(np.zeros(cout))


class Branch(Module):
    def __init__(self, rng: np.random.Generator, cin: int, hidden: list[int], cout: int):
        dims = [cin, *hidden, cout]
        self.convs = [Conv(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, c in enumerate(self.convs):
            x = conv2d(x, c.w, c.b, padding=1)
            if i < len(self.convs) - 1:
                x = gelu(x)
        return x.sigmoid()


class Head(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.score = Branch(rng, cfg.dim, cfg.head_channels, 1)
        self.offset = Branch(rng, cfg.dim, cfg.head_channels, 2)
        self.size = Branch(rng, cfg.dim, cfg.head_channels, 2)
        # sigmoid(-2.19) ~ 0.1: low initial center confidence everywhere
        self.score.convs[-1].b.data[:] = -2.19


def head_forward(search_tokens: Tensor, head: Head) -> ScoreMaps:
    """Reshape (B, G*G, C) search tokens into a map and run the three branches."""
    b, n, c = search_tokens.shape
    g = int(round(math.sqrt(n)))
    if g * g != n:
        raise ValueError(f"{n} search tokens do not form a square grid")
    fmap = search_tokens.reshape(b, g, g, c).transpose(0, 3, 1, 2)
    with mac_tag("head"):
        return ScoreMaps(head.score(fmap), head.offset(fmap), head.size(fmap))


def argmax_cell(R: np.ndarray) -> tuple[int, int]:
    """(x, y) of the highest score; ties go to the lowest row-major index."""
    flat = int(np.argmax(R.reshape(-1)))
    g = R.shape[-1]
    return flat % g, flat // g


def assemble_box(maps: ScoreMaps, index: int = 0) -> BBox:
    """Decode batch item ``index`` into a normalised box at the score peak."""
    R = maps.R.data[index, 0]
    g = R.shape[-1]
    xr, yr = argmax_cell(R)
    e = maps.E.data[index, :, yr, xr]
    o = maps.O.data[index, :, yr, xr]
    return BBox((xr + e[0]) / g, (yr + e[1]) / g, float(o[0]), float(o[1]))


def peak_score(maps: ScoreMaps, index: int = 0) -> float:
    return float(maps.R.data[index, 0].max())


def boxes_at_cells(maps: ScoreMaps, cells: np.ndarray) -> Tensor:
    """Differentiable (B, 4) boxes decoded at given (x, y) cells (teacher forcing)."""
    b = maps.R.shape[0]
    g = maps.grid
    bi = np.arange(b)
    xs, ys = cells[:, 0], cells[:, 1]
    ex = maps.E[bi, 0, ys, xs]
    ey = maps.E[bi, 1, ys, xs]
    ow = maps.O[bi, 0, ys, xs]
    oh = maps.O[bi, 1, ys, xs]
    cx = (ex + Tensor(xs.astype(np.float64))) * (1.0 / g)
    cy = (ey + Tensor(ys.astype(np.float64))) * (1.0 / g)
    return stack([cx, cy, ow, oh], axis=1)
