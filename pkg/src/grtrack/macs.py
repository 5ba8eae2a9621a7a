"""Analytic multiply-accumulate accounting and an instrumented cross-check.

Every matmul-shaped op is counted as m*k*n MACs. Element-wise work
(softmax, norms, activations, masking) is not counted. Keys follow the
instrumented tags: ``embed``, ``layerNN/{qkv,attn,proj,ffn,rank,ranker}``
and ``head``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import EncoderConfig
from .numeric import count_macs as instrument
from .relevance import stage_keep_counts

ENCODER_OPS = ("qkv", "attn", "proj", "ffn")
RANKING_OPS = ("rank", "ranker")


@dataclass
class MacReport:
    total: int
    breakdown: dict[str, int] = field(default_factory=dict)

    def component(self, name: str) -> int:
        """Sum over ``embed``, ``encoder``, ``ranking`` or ``head``."""
        ops = {"encoder": ENCODER_OPS, "ranking": RANKING_OPS}.get(name)
        if ops is None:
            return self.breakdown.get(name, 0)
        return sum(v for k, v in self.breakdown.items() if k.split("/")[-1] in ops and k.startswith("layer"))

    def per_layer(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for k, v in self.breakdown.items():
            top = k.split("/")[0]
            out[top] = out.get(top, 0) + v
        return out


def count_macs(cfg: EncoderConfig, keep_counts: list[int] | None = None, n_ref: int | None = None,
               stages: int | None = None, n_templates: int | None = None) -> MacReport:
    """MACs of one inference pass over ``n_ref`` memory tokens and one search crop.

    ``stages`` activates the first few relevance layers (default: all);
    ``keep_counts`` overrides the per-stage absolute k (default floor(n_ref*q)).
    """
    c, heads, n_x = cfg.dim, cfg.heads, cfg.n_search
    n_z = cfg.n_template
    if n_ref is None:
        n_ref = n_z * (n_templates or 3)
    if n_templates is None:
        n_templates = max(1, n_ref // n_z)
    layers = list(cfg.relevance_layers)
    stages = len(layers) if stages is None else stages
    if not 0 <= stages <= len(layers):
        raise ValueError(f"stages must be in [0, {len(layers)}]")
    if keep_counts is None:
        keep_counts = stage_keep_counts(n_ref, cfg.keep_ratios)
    active = {li: keep_counts[s] for s, li in enumerate(layers[:stages])}
    hidden = cfg.mlp_ratio * c
    bd: dict[str, int] = {}
    patch_in = 3 * cfg.patch_size_px ** 2
    bd["embed"] = (n_templates * n_z + n_x) * patch_in * c
    ranker_dims = [heads, *cfg.ranking_hidden, 2]
    ranker_per_token = sum(a * b for a, b in zip(ranker_dims[:-1], ranker_dims[1:]))

    live = n_ref
    for li in range(1, cfg.depth + 1):
        tag = f"layer{li:02d}"
        n_all = live + n_x
        bd[f"{tag}/qkv"] = 3 * n_all * c * c
        if li in active:
            k = active[li]
            n_kept = k + n_x
            bd[f"{tag}/rank"] = n_x * n_all * c
            bd[f"{tag}/ranker"] = live * ranker_per_token
            bd[f"{tag}/attn"] = 2 * n_kept * n_kept * c
            bd[f"{tag}/proj"] = n_kept * c * c
            bd[f"{tag}/ffn"] = 2 * n_kept * c * hidden
            live = k
        else:
            bd[f"{tag}/attn"] = 2 * n_all * n_all * c
            bd[f"{tag}/proj"] = n_all * c * c
            bd[f"{tag}/ffn"] = 2 * n_all * c * hidden

    g = cfg.grid
    head = 0
    for out in (1, 2, 2):
        dims = [c, *cfg.head_channels, out]
        head += sum(g * g * 9 * a * b for a, b in zip(dims[:-1], dims[1:]))
    bd["head"] = head
    return MacReport(sum(bd.values()), bd)


def measure_macs(model, n_templates: int = 3, stages: int | None = None, keep_counts: list[int] | None = None,
                 seed: int = 0) -> MacReport:
    """Run one instrumented inference pass on random crops and tally every matmul."""
    cfg = model.cfg
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_templates, 3, cfg.template_size_px, cfg.template_size_px))
    x = rng.standard_normal((3, cfg.search_size_px, cfg.search_size_px))
    n_ref = n_templates * cfg.n_template
    counts = keep_counts or stage_keep_counts(n_ref, cfg.keep_ratios)
    with instrument() as counter:
        model.forward_images(z, x, keep_counts=counts, stages=stages)
    bd = counter.by_tag(depth=2)
    return MacReport(counter.total, bd)


def ratio_table(cfg: EncoderConfig, n_ref: int | None = None) -> list[dict]:
    """Rows of (stages, total MACs, ratio to the no-stage count)."""
    base = count_macs(cfg, n_ref=n_ref, stages=0)
    rows = []
    for s in range(len(cfg.relevance_layers) + 1):
        rep = count_macs(cfg, n_ref=n_ref, stages=s)
        rows.append({"stages": s, "macs": rep.total, "gmacs": rep.total / 1e9,
                     "encoder": rep.component("encoder"), "ranking": rep.component("ranking"),
                     "ratio": rep.total / base.total})
    return rows
