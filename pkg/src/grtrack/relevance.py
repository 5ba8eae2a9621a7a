"""Relevance scoring and transient pruning of reference tokens.

A relevance block ranks reference (memory) tokens by how much attention the
search tokens pay them. During training a straight-through Gumbel sample
masks the attention columns of dropped tokens; at inference the top-k tokens
are physically gathered and the block runs on the reduced sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import Block, TokenSeq, attend, attention_weights
from .nn import Linear, Module
from .numeric import Rng, Tensor, concat, mac_tag, mlp, softmax, straight_through


class Ranker(Module):
    """MLP mapping pooled per-head attention (h) to keep/drop logits (2)."""

    def __init__(self, heads: int, hidden: list[int], rng: np.random.Generator, keep_prior: float = 0.9):
        dims = [heads, *hidden, 2]
        self.layers = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        # start out keeping most tokens
        half = 0.5 * math.log(keep_prior / (1.0 - keep_prior))
        self.layers[-1].b.data[:] = [half, -half]

    def pairs(self):
        return [l.as_pair() for l in self.layers]


@dataclass
class KeepDecision:
    """Training: per-token 0/1 mask ``D`` (B, N). Inference: sorted kept indices."""

    mode: str
    D: Tensor | None = None
    kept_indices: np.ndarray | None = None
    scores: Tensor | None = None
    extras: dict = field(default_factory=dict)


def pool_weights(w: Tensor) -> Tensor:
    """Average attention over the search-query axis: (…, h, N_ref, N_x) -> (…, h, N_ref)."""
    if w.shape[-1] < 1:
        raise ValueError("pool_weights needs at least one search token")
    return w.mean(axis=-1)


def predict_scores(w_prime: Tensor, ranker: Ranker) -> Tensor:
    """Keep/drop probabilities (…, N_ref, 2); column 0 is the keep score."""
    heads = ranker.layers[0].w.shape[0]
    if w_prime.shape[-2] != heads:
        raise ValueError(f"ranker expects {heads} heads, got pooled weights {w_prime.shape}")
    with mac_tag("ranker"):
        logits = mlp(w_prime.swapaxes(-1, -2), ranker.pairs())
    return softmax(logits, axis=-1)


def gumbel_keep(pi: Tensor, tau: float, rng: Rng | None = None, coords: tuple = (),
                noise: np.ndarray | None = None, hard: bool = True) -> KeepDecision:
    """Two-way Gumbel-Softmax per token; ``D`` is the sampled keep indicator.

    With ``hard`` the forward value is exactly 0/1 and the gradient is that of
    the soft sample (straight-through). ``noise`` overrides ``rng`` so a
    sample can be frozen.
    """
    if tau <= 0:
        raise ValueError(f"Gumbel temperature must be positive, got {tau}")
    if noise is None:
        noise = rng.gumbel(pi.shape, *coords) if rng is not None else np.zeros(pi.shape)
    soft = softmax(((pi + 1e-30).log() + Tensor(noise)) * (1.0 / tau), axis=-1)
    if hard:
        idx = soft.data.argmax(axis=-1)
        one_hot = np.zeros(soft.shape)
        np.put_along_axis(one_hot, idx[..., None], 1.0, axis=-1)
        sample = straight_through(one_hot, soft)
    else:
        sample = soft
    return KeepDecision("train", D=sample[..., 0], scores=pi, extras={"soft": soft, "noise": noise})


def mask_weights(w: Tensor, D: Tensor) -> Tensor:
    """Multiply every reference column y of w (…, h, N_ref, N_x) by D_y, without renormalising."""
    if D.shape[-1] != w.shape[-2]:
        raise ValueError(f"mask of length {D.shape[-1]} for {w.shape[-2]} reference tokens")
    d = D.reshape(*D.shape[:-1], *([1] * (w.ndim - D.ndim - 1)), D.shape[-1], 1)
    return w * d


def topk_select(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties to the lower index, returned ascending."""
    s = np.asarray(scores.data if isinstance(scores, Tensor) else scores, dtype=np.float64).reshape(-1)
    if not 1 <= k <= len(s):
        raise ValueError(f"k={k} outside [1, {len(s)}]")
    order = np.argsort(-s, kind="stable")
    return np.sort(order[:k])


def stage_keep_counts(n_ref: int, ratios) -> list[int]:
    """Absolute per-stage keep counts floor(n_ref * q), clipped to be non-increasing."""
    counts, prev = [], n_ref
    for q in ratios:
        k = math.floor(round(n_ref * q, 9))
        k = max(1, min(k, prev))
        counts.append(k)
        prev = k
    return counts


def ranking_weights(w_full: Tensor, n_ref: int) -> Tensor:
    """Reference-key columns for search queries, laid out as (B, h, N_ref, N_x).

    Weights are multiplied by the number of keys so that uniform attention
    reads as 1 regardless of sequence length.
    """
    return w_full[:, :, n_ref:, :n_ref].swapaxes(-1, -2) * float(w_full.shape[-1])


@dataclass
class RelevanceOutput:
    ref: TokenSeq
    search: TokenSeq
    decision: KeepDecision
    mask: Tensor | None = None  # train mode: cumulative keep mask after this stage


def relevance_block(ref: TokenSeq, search: TokenSeq, k: int | None, mode: str, block: Block,
                    ranker: Ranker, *, rng: Rng | None = None, coords: tuple = (), tau: float = 1.0,
                    noise: np.ndarray | None = None, hard: bool = True, prev_mask: Tensor | None = None,
                    gate: Tensor | None = None, renormalize: bool = False) -> RelevanceOutput:
    """Encoder block that keeps only the reference tokens most relevant to ``search``.

    ``mode='infer'`` gathers the top-``k`` reference tokens (stable order) and
    runs the block on them plus every search token. ``mode='train'`` keeps all
    tokens and masks attention columns with a Gumbel sample combined with
    ``prev_mask`` (earlier stages) and ``gate`` (fixed extra mask, e.g. the
    token filter's decision).
    """
    if ref.dim != search.dim:
        raise ValueError("reference and search tokens differ in width")
    n_ref, n_x = len(ref), len(search)
    x = ref.cat(search)
    q, kk, v = block.qkv(x.embeddings)

    if mode == "infer":
        if k is None or not 1 <= k <= n_ref:
            raise ValueError(f"k={k} invalid for {n_ref} reference tokens")
        if x.embeddings.shape[0] != 1:
            raise ValueError("inference-mode pruning runs one sequence at a time")
        with mac_tag("rank"):
            w_search = attention_weights(q[:, :, n_ref:], kk)
        # same scaling as ranking_weights so the ranker sees training-time features
        feats = w_search[:, :, :, :n_ref].swapaxes(-1, -2) * float(w_search.shape[-1])
        pi = predict_scores(pool_weights(feats), ranker)
        kept = topk_select(pi.data[0, :, 0], k)
        sel = np.concatenate([kept, n_ref + np.arange(n_x)])
        with mac_tag("attn"):
            w = attention_weights(q[:, :, sel], kk[:, :, sel])
            out = attend(w, v[:, :, sel])
        y = block.finish(x.embeddings[:, sel], out)
        decision = KeepDecision("infer", kept_indices=kept, scores=pi)
        return RelevanceOutput(TokenSeq(y[:, :k], ref.provenance.take(kept)),
                               TokenSeq(y[:, k:], search.provenance), decision)

    if mode != "train":
        raise ValueError(f"unknown relevance mode {mode!r}")
    with mac_tag("attn"):
        w_full = attention_weights(q, kk)
    pi = predict_scores(pool_weights(ranking_weights(w_full, n_ref)), ranker)
    decision = gumbel_keep(pi, tau, rng=rng, coords=coords, noise=noise, hard=hard)
    cum = decision.D if prev_mask is None else prev_mask * decision.D
    col = cum if gate is None else cum * gate
    bsz = x.embeddings.shape[0]
    key_mask = concat([col, Tensor(np.ones((bsz, n_x)))], axis=1)
    with mac_tag("attn"):
        out = attend(w_full, v, key_mask, renormalize)
    y = block.finish(x.embeddings, out)
    return RelevanceOutput(TokenSeq(y[:, :n_ref], ref.provenance), TokenSeq(y[:, n_ref:], search.provenance),
                           decision, mask=cum)
