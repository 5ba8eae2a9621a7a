"""Reference memory: an immutable anchor block plus a bounded dynamic block.

Four update policies share the container:

``one_template``
    never changes after init.
``fifo``
    whole templates in a ring buffer; the oldest non-anchor template goes first.
``score``
    whole templates; the stored template with the lowest center score is
    replaced when a better-scoring template arrives.
``gr``
    token level: append while there is room, otherwise keep the top-ranked
    tokens of (dynamic ∪ new template) as scored by the token filter.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .config import MemoryConfig
from .encoder import ANCHOR, Provenance, TokenSeq
from .numeric import Tensor
from .relevance import topk_select

POLICIES = ("one_template", "fifo", "score", "gr")

Scorer = Callable[[TokenSeq, TokenSeq, TokenSeq], np.ndarray]


@dataclass(frozen=True)
class UpdateSchedule:
    base_interval: int = 5
    doubling_every: int = 100
    doubling_until: int = 500
    terminal_interval: int = 160

    def __post_init__(self):
        if self.base_interval <= 0 or self.terminal_interval <= 0 or self.doubling_every <= 0:
            raise ValueError("update intervals must be positive")

    @classmethod
    def from_config(cls, cfg: MemoryConfig) -> "UpdateSchedule":
        return cls(cfg.update_interval_frames, cfg.interval_doubling_every_frames,
                   cfg.interval_doubling_until_frame, cfg.terminal_interval_frames)

    def interval(self, t: int) -> int:
        if t < 1:
            raise ValueError(f"frame index must be >= 1, got {t}")
        if t > self.doubling_until:
            return self.terminal_interval
        return self.base_interval * 2 ** ((t - 1) // self.doubling_every)

    def due(self, t: int, frames_since_update: int) -> bool:
        return frames_since_update >= self.interval(t)

    def update_frames(self, length: int) -> list[int]:
        """Frames 1..length-1 on which an update fires, starting from an update at frame 0."""
        out, since = [], 0
        for t in range(1, length):
            since += 1
            if self.due(t, since):
                out.append(t)
                since = 0
        return out


@dataclass(frozen=True)
class GRMemory:
    anchor: TokenSeq
    dynamic: TokenSeq
    capacity: int
    # per stored whole template (fifo/score policies): (frame_id, center score)
    templates: tuple[tuple[int, float], ...] = field(default=())

    @property
    def n_anchor(self) -> int:
        return len(self.anchor)

    def __len__(self) -> int:
        return len(self.anchor) + len(self.dynamic)

    def tokens(self) -> TokenSeq:
        return self.anchor.cat(self.dynamic) if len(self.dynamic) else self.anchor

    def to_arrays(self, prefix: str = "memory") -> dict[str, np.ndarray]:
        """Named arrays for the checkpoint container."""
        seq = self.tokens()
        prov = seq.provenance
        return {
            f"{prefix}.embeddings": seq.embeddings.data[0],
            f"{prefix}.provenance": np.stack([prov.frame_id, prov.spatial_index, prov.kind], axis=1).astype(np.float64),
            f"{prefix}.meta": np.array([self.capacity, len(self.anchor)], dtype=np.float64),
            f"{prefix}.templates": np.array(self.templates, dtype=np.float64).reshape(-1, 2),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], prefix: str = "memory") -> "GRMemory":
        emb = np.asarray(arrays[f"{prefix}.embeddings"], dtype=np.float64)
        prov = np.asarray(arrays[f"{prefix}.provenance"]).astype(np.int64)
        capacity, n_anchor = (int(v) for v in arrays[f"{prefix}.meta"])
        seq = TokenSeq(Tensor(emb[None]), Provenance(prov[:, 0], prov[:, 1], prov[:, 2]))
        templates = tuple((int(f), float(s)) for f, s in np.asarray(arrays[f"{prefix}.templates"]).reshape(-1, 2))
        return cls(seq.take(np.arange(n_anchor)), seq.take(np.arange(n_anchor, len(seq))), capacity, templates)


def init(template_tokens: TokenSeq, capacity: int, n_template: int | None = None) -> GRMemory:
    """Start a memory holding only the anchor template."""
    n = len(template_tokens) if n_template is None else n_template
    if len(template_tokens) != n:
        raise ValueError(f"anchor template has {len(template_tokens)} tokens, expected {n}")
    if capacity < n:
        raise ValueError(f"capacity {capacity} cannot hold the {n}-token anchor")
    prov = template_tokens.provenance
    anchor = TokenSeq(template_tokens.embeddings.detach(),
                      Provenance(prov.frame_id, prov.spatial_index, np.full(n, ANCHOR)))
    return GRMemory(anchor, anchor.take(np.arange(0)), capacity)


def _append(memory: GRMemory, new: TokenSeq) -> TokenSeq:
    return memory.dynamic.cat(new) if len(memory.dynamic) else new


def update(memory: GRMemory, new_template: TokenSeq, search: TokenSeq | None, policy: str,
           scorer: Scorer | None = None, center_score: float = 0.0) -> GRMemory:
    """Return the memory after folding in ``new_template`` under ``policy``."""
    if policy not in POLICIES:
        raise ValueError(f"unknown memory policy {policy!r}")
    if policy == "one_template":
        return memory
    if new_template.dim != memory.anchor.dim:
        raise ValueError(f"token width {new_template.dim} != memory width {memory.anchor.dim}")
    new_template = new_template.detach()
    n_new = len(new_template)
    fid = int(new_template.provenance.frame_id[0]) if n_new else -1

    if policy == "gr":
        if memory.capacity == memory.n_anchor:
            return memory
        if len(memory) + n_new <= memory.capacity:
            return replace(memory, dynamic=_append(memory, new_template))
        if scorer is None:
            raise ValueError("gr policy needs a token scorer at capacity")
        scores = np.asarray(scorer(memory.tokens(), new_template, search), dtype=np.float64)
        if scores.shape != (len(memory) + n_new,):
            raise ValueError(f"scorer returned {scores.shape}, expected ({len(memory) + n_new},)")
        candidates = _append(memory, new_template)
        keep = topk_select(scores[memory.n_anchor:], memory.capacity - memory.n_anchor)
        return replace(memory, dynamic=candidates.take(keep))

    slots = (memory.capacity - memory.n_anchor) // max(n_new, 1)
    if slots <= 0:
        return memory
    stored = list(memory.templates)
    if len(stored) < slots:
        return replace(memory, dynamic=_append(memory, new_template), templates=tuple(stored + [(fid, center_score)]))

    if policy == "fifo":
        kept = memory.dynamic.take(np.arange(n_new, len(memory.dynamic)))
        return replace(memory, dynamic=kept.cat(new_template), templates=tuple(stored[1:] + [(fid, center_score)]))

    # score: the lowest-scored stored template is replaced in its slot
    drop = int(np.argmin([s for _, s in stored]))
    if center_score <= stored[drop][1]:
        return memory
    parts = [memory.dynamic.take(np.arange(i * n_new, (i + 1) * n_new)) if i != drop else new_template
             for i in range(len(stored))]
    stored[drop] = (fid, center_score)
    return replace(memory, dynamic=parts[0].cat(*parts[1:]), templates=tuple(stored))
