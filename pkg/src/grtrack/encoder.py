"""Patch embedding, multi-head attention and pre-norm transformer blocks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, EncoderConfig
from .nn import LayerNorm, Linear, Module, param
from .numeric import Tensor, concat, gelu, layer_norm, linear, mac_tag, softmax

ANCHOR, TEMPLATE, SEARCH = 0, 1, 2
KIND_NAMES = {ANCHOR: "anchor", TEMPLATE: "template", SEARCH: "search"}


@dataclass(frozen=True)
class Provenance:
    """Where each token came from: source frame, patch index, token kind."""

    frame_id: np.ndarray
    spatial_index: np.ndarray
    kind: np.ndarray

    def __post_init__(self):
        for name in ("frame_id", "spatial_index", "kind"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if not (len(self.frame_id) == len(self.spatial_index) == len(self.kind)):
            raise ValueError("provenance columns differ in length")

    def __len__(self) -> int:
        return len(self.frame_id)

    @classmethod
    def grid(cls, frame_id: int, n: int, kind: int) -> "Provenance":
        return cls(np.full(n, frame_id), np.arange(n), np.full(n, kind))

    @classmethod
    def empty(cls) -> "Provenance":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0))

    def take(self, idx) -> "Provenance":
        idx = np.asarray(idx, dtype=np.int64)
        return Provenance(self.frame_id[idx], self.spatial_index[idx], self.kind[idx])

    def cat(self, *others: "Provenance") -> "Provenance":
        parts = (self,) + others
        return Provenance(np.concatenate([p.frame_id for p in parts]),
                          np.concatenate([p.spatial_index for p in parts]),
                          np.concatenate([p.kind for p in parts]))

    def equals(self, other: "Provenance") -> bool:
        return (np.array_equal(self.frame_id, other.frame_id)
                and np.array_equal(self.spatial_index, other.spatial_index)
                and np.array_equal(self.kind, other.kind))


@dataclass
class TokenSeq:
    """Embeddings of shape (B, N, C) plus per-token provenance shared by the batch."""

    embeddings: Tensor
    provenance: Provenance

    def __post_init__(self):
        if self.embeddings.ndim != 3:
            raise ValueError(f"TokenSeq embeddings must be (B, N, C), got {self.embeddings.shape}")
        if self.embeddings.shape[1] != len(self.provenance):
            raise ValueError(f"{self.embeddings.shape[1]} tokens but {len(self.provenance)} provenance rows")

    def __len__(self) -> int:
        return self.embeddings.shape[1]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[2]

    def take(self, idx) -> "TokenSeq":
        idx = np.asarray(idx, dtype=np.int64)
        return TokenSeq(self.embeddings[:, idx], self.provenance.take(idx))

    def cat(self, *others: "TokenSeq") -> "TokenSeq":
        if not others:
            return self
        return TokenSeq(concat([self.embeddings] + [o.embeddings for o in others], axis=1),
                        self.provenance.cat(*[o.provenance for o in others]))

    def detach(self) -> "TokenSeq":
        return TokenSeq(self.embeddings.detach(), self.provenance)

    def with_embeddings(self, emb: Tensor) -> "TokenSeq":
        return TokenSeq(emb, self.provenance)


# -- patches -----------------------------------------------------------------


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """Split (..., 3, H, W) images into row-major (..., N, 3*S*S) patch vectors."""
    *lead, c, h, w = image.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = image.reshape(*lead, c, gh, patch, gw, patch)
    nl = len(lead)
    order = list(range(nl)) + [nl + 1, nl + 3, nl, nl + 2, nl + 4]
    return x.transpose(order).reshape(*lead, gh * gw, c * patch * patch)


def unpatchify(patches: np.ndarray, patch: int, h: int, w: int, channels: int = 3) -> np.ndarray:
    *lead, n, _ = patches.shape
    gh, gw = h // patch, w // patch
    if gh * gw != n:
        raise ConfigError("patch count does not match the target size")
    x = patches.reshape(*lead, gh, gw, channels, patch, patch)
    nl = len(lead)
    order = list(range(nl)) + [nl + 2, nl, nl + 3, nl + 1, nl + 4]
    return x.transpose(order).reshape(*lead, channels, h, w)


class PatchEmbed(Module):
    """Linear patch projection plus a learned position table per crop kind."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        s = cfg.patch_size_px
        self.patch = s
        self.proj = Linear(rng, 3 * s * s, cfg.dim)
        self.pos_template = param(rng.normal(0.0, 0.02, size=(cfg.n_template, cfg.dim)))
        self.pos_search = param(rng.normal(0.0, 0.02, size=(cfg.n_search, cfg.dim)))


def embed(images: np.ndarray, pe: PatchEmbed, kind: int, frame_ids=None) -> TokenSeq:
    """Project (B, 3, H, W) crops to tokens; all batch items share provenance."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    patches = patchify(images, pe.patch)
    n = patches.shape[1]
    with mac_tag("embed"):
        tokens = linear(Tensor(patches), pe.proj.w, pe.proj.b)
    pos = pe.pos_search if kind == SEARCH else pe.pos_template
    if pos.shape[0] != n:
        raise ConfigError(f"{n} patches but position table has {pos.shape[0]} rows")
    tokens = tokens + pos
    fid = 0 if frame_ids is None else frame_ids
    return TokenSeq(tokens, Provenance.grid(int(fid), n, kind))


# -- attention -----------------------------------------------------------------


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, c = x.shape
    return x.reshape(b, n, heads, c // heads).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * d)


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """Post-softmax weights (B, h, Nq, Nk) from head-split queries and keys."""
    d = q.shape[-1]
    return softmax((q * (d ** -0.5)) @ k.T, axis=-1)


def attend(w: Tensor, v: Tensor, key_mask: Tensor | None = None, renormalize: bool = False) -> Tensor:
    """Weighted sum of values, optionally zeroing whole key columns first."""
    if key_mask is not None:
        w = w * key_mask.reshape(key_mask.shape[0], 1, 1, key_mask.shape[1])
        if renormalize:
            w = w / (w.sum(axis=-1, keepdims=True) + 1e-12)
    return w @ v


class Attention(Module):
    def __init__(self, dim: int, rng: np.random.Generator, zero_out: bool = False):
        self.qkv = Linear(rng, dim, 3 * dim)
        self.proj = Linear(rng, dim, dim, zero=zero_out)


class Block(Module):
    """Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator, zero_out: bool = False):
        self.heads = heads
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, rng, zero_out)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(rng, dim, mlp_ratio * dim)
        self.fc2 = Linear(rng, mlp_ratio * dim, dim, zero=zero_out)

    def qkv(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        h = layer_norm(x, self.norm1.g, self.norm1.b)
        with mac_tag("qkv"):
            qkv = linear(h, self.attn.qkv.w, self.attn.qkv.b)
        c = x.shape[-1]
        q, k, v = qkv[..., :c], qkv[..., c:2 * c], qkv[..., 2 * c:]
        return split_heads(q, self.heads), split_heads(k, self.heads), split_heads(v, self.heads)

    def finish(self, x: Tensor, heads_out: Tensor) -> Tensor:
        """Output projection, residual, then the FFN residual."""
        with mac_tag("proj"):
            x = x + linear(merge_heads(heads_out), self.attn.proj.w, self.attn.proj.b)
        h = layer_norm(x, self.norm2.g, self.norm2.b)
        with mac_tag("ffn"):
            h = linear(gelu(linear(h, self.fc1.w, self.fc1.b)), self.fc2.w, self.fc2.b)
        return x + h


def mha(q_tokens: TokenSeq, k_tokens: TokenSeq, v_tokens: TokenSeq, attn: Attention, heads: int):
    """Multi-head attention of ``q_tokens`` over ``k_tokens``/``v_tokens``.

    Returns the projected output (provenance of the queries) and the
    post-softmax weights of shape (B, h, Nq, Nk).
    """
    if len(k_tokens) != len(v_tokens):
        raise ValueError(f"key/value length mismatch: {len(k_tokens)} vs {len(v_tokens)}")
    c = q_tokens.dim
    if c % heads:
        raise ValueError(f"{heads} heads do not divide dim {c}")
    w_all, b_all = attn.qkv.w, attn.qkv.b
    q = linear(q_tokens.embeddings, w_all[:, :c], b_all[:c])
    k = linear(k_tokens.embeddings, w_all[:, c:2 * c], b_all[c:2 * c])
    v = linear(v_tokens.embeddings, w_all[:, 2 * c:], b_all[2 * c:])
    w = attention_weights(split_heads(q, heads), split_heads(k, heads))
    out = linear(merge_heads(w @ split_heads(v, heads)), attn.proj.w, attn.proj.b)
    return q_tokens.with_embeddings(out), w


def block_forward(x: Tensor, block: Block, key_mask: Tensor | None = None,
                  renormalize: bool = False) -> tuple[Tensor, Tensor]:
    q, k, v = block.qkv(x)
    with mac_tag("attn"):
        w = attention_weights(q, k)
        out = attend(w, v, key_mask, renormalize)
    return block.finish(x, out), w


def vit_block(tokens: TokenSeq, block: Block, key_mask: Tensor | None = None,
              renormalize: bool = False) -> TokenSeq:
    """One vanilla encoder block; token count, order and provenance are untouched."""
    out, _ = block_forward(tokens.embeddings, block, key_mask, renormalize)
    return tokens.with_embeddings(out)
