"""The tracking network: patch embedding, encoder with relevance stages, token filter, head."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import EncoderConfig
from .encoder import (ANCHOR, SEARCH, TEMPLATE, Block, PatchEmbed, Provenance, TokenSeq, attention_weights,
                      block_forward, embed, split_heads)
from .head import Head, ScoreMaps, head_forward
from .nn import LayerNorm, Linear, Module
from .numeric import Rng, Tensor, concat, layer_norm, linear, mac_tag
from .relevance import (KeepDecision, Ranker, gumbel_keep, pool_weights, predict_scores, ranking_weights,
                        relevance_block, stage_keep_counts)


class TokenFilter(Module):
    """Dedicated blocks, then a query/key scoring stage whose attention map feeds a ranker."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.heads = cfg.heads
        self.blocks = [Block(cfg.dim, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.filter_blocks)]
        # only queries and keys: the scoring stage produces weights, never token outputs
        self.score_norm = LayerNorm(cfg.dim)
        self.score_qk = Linear(rng, cfg.dim, 2 * cfg.dim)
        self.ranker = Ranker(cfg.heads, cfg.ranking_hidden, rng)

    def scores(self, ref: Tensor, search: Tensor) -> Tensor:
        """Keep/drop probabilities (B, N_ref, 2) for every reference token."""
        n_ref, c = ref.shape[1], ref.shape[-1]
        x = concat([ref, search], axis=1)
        with mac_tag("filter"):
            for blk in self.blocks:
                x, _ = block_forward(x, blk)
            qk = linear(layer_norm(x, self.score_norm.g, self.score_norm.b), self.score_qk.w, self.score_qk.b)
            w = attention_weights(split_heads(qk[..., :c], self.heads), split_heads(qk[..., c:], self.heads))
            return predict_scores(pool_weights(ranking_weights(w, n_ref)), self.ranker)


@dataclass
class EncodeResult:
    search: TokenSeq
    ref: TokenSeq
    decisions: list[KeepDecision] = field(default_factory=list)
    masks: list[Tensor] = field(default_factory=list)
    ref_counts: list[int] = field(default_factory=list)


class TrackerNet(Module):
    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        cfg.validate()
        self._cfg = cfg
        self._seed = int(seed)
        rng = np.random.default_rng(seed)
        self.patch_embed = PatchEmbed(cfg, rng)
        self.blocks = [Block(cfg.dim, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth)]
        self.rankers = [Ranker(cfg.heads, cfg.ranking_hidden, rng) for _ in cfg.relevance_layers]
        self.norm = LayerNorm(cfg.dim)
        self.head = Head(cfg, rng)
        self.token_filter = TokenFilter(cfg, rng)

    @property
    def cfg(self) -> EncoderConfig:
        return self._cfg

    @property
    def seed(self) -> int:
        return self._seed

    def fast_parameters(self) -> list[Tensor]:
        """Ranking MLPs and decoder: the high learning-rate group."""
        fast = [p for r in self.rankers for p in r.parameters()]
        fast += self.token_filter.ranker.parameters()
        fast += self.head.parameters()
        return fast

    # -- embedding -----------------------------------------------------------

    def embed_template(self, crops: np.ndarray, frame_id: int = 0, anchor: bool = False) -> TokenSeq:
        seq = embed(crops, self.patch_embed, TEMPLATE, frame_id)
        if anchor:
            n = len(seq)
            seq = TokenSeq(seq.embeddings, Provenance(np.full(n, frame_id), np.arange(n), np.full(n, ANCHOR)))
        return seq

    def embed_search(self, crops: np.ndarray, frame_id: int = 0) -> TokenSeq:
        return embed(crops, self.patch_embed, SEARCH, frame_id)

    # -- encoder -------------------------------------------------------------

    def encode_infer(self, ref: TokenSeq, search: TokenSeq, relevance: bool = True,
                     keep_counts: list[int] | None = None, stages: int | None = None) -> EncodeResult:
        """Inference pass; relevance stages gather top-k reference tokens.

        ``stages`` limits pruning to the first few relevance layers.
        """
        cfg = self.cfg
        active = cfg.relevance_layers[:stages] if relevance else []
        if keep_counts is None:
            keep_counts = stage_keep_counts(len(ref), cfg.keep_ratios)
        res = EncodeResult(search, ref)
        stage = 0
        for li, blk in enumerate(self.blocks, start=1):
            with mac_tag(f"layer{li:02d}"):
                if li in active:
                    out = relevance_block(ref, search, keep_counts[stage], "infer", blk, self.rankers[stage])
                    ref, search = out.ref, out.search
                    res.decisions.append(out.decision)
                    stage += 1
                else:
                    n = len(ref)
                    y, _ = block_forward(ref.cat(search).embeddings, blk)
                    ref, search = ref.with_embeddings(y[:, :n]), search.with_embeddings(y[:, n:])
            res.ref_counts.append(len(ref))
        res.search, res.ref = search, ref
        return res

    def encode_train(self, ref: TokenSeq, search: TokenSeq, *, rng: Rng | None = None, step: int = 0,
                     tau: float = 1.0, hard: bool = True, gate: Tensor | None = None,
                     noise: list[np.ndarray] | None = None) -> EncodeResult:
        """Training pass: all tokens kept, attention columns masked by Gumbel samples."""
        cfg = self.cfg
        res = EncodeResult(search, ref)
        bsz, n_ref = ref.embeddings.shape[:2]
        n_x = len(search)
        cum: Tensor | None = None
        stage = 0
        for li, blk in enumerate(self.blocks, start=1):
            if li in cfg.relevance_layers:
                out = relevance_block(ref, search, None, "train", blk, self.rankers[stage], rng=rng,
                                      coords=(step, stage + 1), tau=tau, hard=hard, prev_mask=cum, gate=gate,
                                      noise=None if noise is None else noise[stage + 1],
                                      renormalize=cfg.renormalize_masked)
                ref, search, cum = out.ref, out.search, out.mask
                res.decisions.append(out.decision)
                res.masks.append(cum)
                stage += 1
            else:
                col = cum if gate is None else (gate if cum is None else cum * gate)
                key_mask = None
                if col is not None:
                    key_mask = concat([col, Tensor(np.ones((bsz, n_x)))], axis=1)
                y, _ = block_forward(ref.cat(search).embeddings, blk, key_mask, cfg.renormalize_masked)
                ref, search = ref.with_embeddings(y[:, :n_ref]), search.with_embeddings(y[:, n_ref:])
        res.search, res.ref = search, ref
        return res

    def decode(self, search: TokenSeq) -> ScoreMaps:
        x = layer_norm(search.embeddings, self.norm.g, self.norm.b)
        return head_forward(x, self.head)

    # -- token filter ----------------------------------------------------------

    def filter_scores(self, memory: TokenSeq, new_template: TokenSeq, search: TokenSeq) -> np.ndarray:
        """Keep score for every token of memory followed by the new template."""
        ref = memory.cat(new_template)
        pi = self.token_filter.scores(ref.embeddings, search.embeddings)
        return pi.data[0, :, 0].copy()

    def filter_decision(self, ref: TokenSeq, search: TokenSeq, n_anchor: int, *, rng: Rng | None,
                        step: int, tau: float, hard: bool = True,
                        noise: np.ndarray | None = None) -> tuple[Tensor, KeepDecision]:
        """Training-time token filter: Gumbel decision on non-anchor tokens, anchors forced on."""
        pi = self.token_filter.scores(ref.embeddings, search.embeddings)
        cand = pi[:, n_anchor:]
        dec = gumbel_keep(cand, tau, rng=rng, coords=(step, 0), noise=noise, hard=hard)
        bsz = ref.embeddings.shape[0]
        gate = concat([Tensor(np.ones((bsz, n_anchor))), dec.D], axis=1)
        return gate, dec

    # -- full passes -----------------------------------------------------------

    def forward_infer(self, ref: TokenSeq, search: TokenSeq, relevance: bool = True,
                      keep_counts: list[int] | None = None, stages: int | None = None) -> tuple[ScoreMaps, EncodeResult]:
        res = self.encode_infer(ref, search, relevance, keep_counts, stages)
        return self.decode(res.search), res

    def forward_images(self, template_crops: np.ndarray, search_crop: np.ndarray, relevance: bool = True,
                       keep_counts: list[int] | None = None, stages: int | None = None) -> ScoreMaps:
        """Embed (T, 3, Hz, Wz) templates and a (3, Hx, Wx) search crop, then track once."""
        ref = self.embed_template(template_crops[0:1], 0, anchor=True)
        if len(template_crops) > 1:
            rest = [self.embed_template(template_crops[i:i + 1], i) for i in range(1, len(template_crops))]
            ref = ref.cat(*rest)
        search = self.embed_search(search_crop[None] if search_crop.ndim == 3 else search_crop)
        maps, _ = self.forward_infer(ref, search, relevance, keep_counts, stages)
        return maps

    def forward_train(self, templates: np.ndarray, search: np.ndarray, *, rng: Rng | None = None,
                      step: int = 0, tau: float = 1.0, hard: bool = True, use_filter: bool = True,
                      noise: list[np.ndarray] | None = None):
        """Batched training pass over (B, T, 3, Hz, Wz) templates and (B, 3, Hx, Wx) search crops.

        Returns the score maps, the cumulative keep mask of every relevance
        stage, and the token-filter decision over non-anchor template tokens.
        """
        bsz, n_t = templates.shape[:2]
        parts = [self.embed_template(templates[:, i], i, anchor=(i == 0)) for i in range(n_t)]
        ref = parts[0].cat(*parts[1:])
        x = self.embed_search(search)
        gate, tf_dec = None, None
        n_anchor = len(parts[0])
        if use_filter and n_t > 1:
            gate, tf_dec = self.filter_decision(ref, x, n_anchor, rng=rng, step=step, tau=tau, hard=hard,
                                                noise=None if noise is None else noise[0])
        res = self.encode_train(ref, x, rng=rng, step=step, tau=tau, hard=hard, gate=gate, noise=noise)
        return self.decode(res.search), res.masks, tf_dec
