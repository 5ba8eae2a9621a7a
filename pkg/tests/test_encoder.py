import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grtrack.config import ConfigError, EncoderConfig
from grtrack.encoder import (ANCHOR, SEARCH, TEMPLATE, Block, PatchEmbed, Provenance, TokenSeq, block_forward, embed,
                             mha, patchify, unpatchify, vit_block)
from grtrack.numeric import Tensor, finite_diff_check

from conftest import tiny_encoder


def tokens(rng, n, c=16, b=1, kind=TEMPLATE, frame=0):
    return TokenSeq(Tensor(rng.normal(size=(b, n, c))), Provenance.grid(frame, n, kind))


class TestPatchify:
    def test_full_template_count(self):
        assert patchify(np.zeros((3, 128, 128)), 16).shape == (64, 768)

    def test_desk_count(self):
        assert patchify(np.zeros((3, 32, 32)), 8).shape == (16, 192)

    def test_indivisible(self):
        with pytest.raises(ConfigError):
            patchify(np.zeros((3, 30, 32)), 8)

    @given(st.integers(1, 4), st.integers(1, 4), st.sampled_from([2, 4]))
    def test_round_trip(self, gh, gw, s):
        img = np.random.default_rng(gh * 10 + gw).normal(size=(2, 3, gh * s, gw * s))
        np.testing.assert_array_equal(unpatchify(patchify(img, s), s, gh * s, gw * s), img)

    def test_row_major_order(self):
        img = np.zeros((3, 8, 8))
        img[:, 0:4, 4:8] = 1.0  # top-right patch
        p = patchify(img, 4)
        assert p[1].min() == 1.0 and p[0].max() == 0.0 and p[2].max() == 0.0


class TestEmbed:
    def test_zero_image_gives_bias_plus_position(self, rng):
        cfg = EncoderConfig.desk()
        pe = PatchEmbed(cfg, rng)
        seq = embed(np.zeros((1, 3, 32, 32)), pe, TEMPLATE)
        expected = pe.proj.b.data + pe.pos_template.data
        np.testing.assert_allclose(seq.embeddings.data[0], expected, atol=1e-15)

    def test_zero_image_without_positions_is_constant(self, rng):
        cfg = EncoderConfig.desk()
        pe = PatchEmbed(cfg, rng)
        pe.pos_template.data[:] = 0.0
        emb = embed(np.zeros((1, 3, 32, 32)), pe, TEMPLATE).embeddings.data[0]
        assert np.all(emb == emb[0])

    def test_shape_and_provenance(self, rng):
        cfg = EncoderConfig.desk()
        seq = embed(rng.normal(size=(2, 3, 64, 64)), PatchEmbed(cfg, rng), SEARCH, frame_ids=7)
        assert seq.embeddings.shape == (2, 64, 64)
        assert np.all(seq.provenance.frame_id == 7)
        np.testing.assert_array_equal(seq.provenance.spatial_index, np.arange(64))
        assert np.all(seq.provenance.kind == SEARCH)

    def test_projection_gradcheck(self, rng):
        cfg = tiny_encoder()
        pe = PatchEmbed(cfg, rng)
        img = rng.normal(size=(1, 3, 8, 8))
        w = rng.normal(size=(1, 4, cfg.dim))
        f = lambda: (embed(img, pe, TEMPLATE).embeddings * w).sum()
        assert finite_diff_check(f, [pe.proj.w, pe.proj.b]) < 1e-6


class TestAttention:
    def test_single_token_weight_one(self, rng):
        blk = Block(16, 4, 2, rng)
        t = tokens(rng, 1)
        _, w = mha(t, t, t, blk.attn, 4)
        np.testing.assert_allclose(w.data, 1.0)

    def test_rows_sum_to_one(self, rng):
        blk = Block(16, 4, 2, rng)
        q, kv = tokens(rng, 5), tokens(rng, 7)
        _, w = mha(q, kv, kv, blk.attn, 4)
        assert w.shape == (1, 4, 5, 7)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_kv_length_mismatch(self, rng):
        blk = Block(16, 4, 2, rng)
        with pytest.raises(ValueError):
            mha(tokens(rng, 3), tokens(rng, 4), tokens(rng, 5), blk.attn, 4)

    def test_head_count_must_divide(self, rng):
        blk = Block(16, 4, 2, rng)
        t = tokens(rng, 3)
        with pytest.raises(ValueError):
            mha(t, t, t, blk.attn, 3)

    def test_key_permutation_permutes_columns(self, rng):
        blk = Block(16, 4, 2, rng)
        q, kv = tokens(rng, 4), tokens(rng, 6)
        perm = rng.permutation(6)
        out_a, w_a = mha(q, kv, kv, blk.attn, 4)
        out_b, w_b = mha(q, kv.take(perm), kv.take(perm), blk.attn, 4)
        np.testing.assert_allclose(w_b.data, w_a.data[..., perm], atol=1e-14)
        np.testing.assert_allclose(out_b.embeddings.data, out_a.embeddings.data, atol=1e-12)


class TestBlock:
    def test_count_and_provenance_preserved(self, rng):
        blk = Block(16, 4, 2, rng)
        t = tokens(rng, 9, frame=3)
        out = vit_block(t, blk)
        assert len(out) == 9
        assert out.provenance is t.provenance

    def test_zero_output_projections_give_identity(self, rng):
        blk = Block(16, 4, 2, rng, zero_out=True)
        t = tokens(rng, 9)
        np.testing.assert_array_equal(vit_block(t, blk).embeddings.data, t.embeddings.data)

    def test_weights_shape(self, rng):
        blk = Block(16, 4, 2, rng)
        _, w = block_forward(tokens(rng, 9, b=2).embeddings, blk)
        assert w.shape == (2, 4, 9, 9)
        np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-9)

    def test_two_block_gradcheck(self, rng):
        b1, b2 = Block(8, 2, 2, rng), Block(8, 2, 2, rng)
        x = Tensor(rng.normal(size=(1, 5, 8)), requires_grad=True)
        target = rng.normal(size=(1, 5, 8))
        f = lambda: ((block_forward(block_forward(x, b1)[0], b2)[0] - target) ** 2).sum()
        params = [x] + b1.parameters() + b2.parameters()
        assert finite_diff_check(f, params, max_entries=6) < 1e-4


class TestTokenSeq:
    def test_provenance_length_checked(self, rng):
        with pytest.raises(ValueError):
            TokenSeq(Tensor(np.zeros((1, 3, 4))), Provenance.grid(0, 2, ANCHOR))

    def test_take_and_cat(self, rng):
        a, b = tokens(rng, 3, frame=1), tokens(rng, 2, frame=2, kind=SEARCH)
        both = a.cat(b)
        assert len(both) == 5
        sub = both.take([4, 0])
        np.testing.assert_array_equal(sub.provenance.frame_id, [2, 1])
        np.testing.assert_array_equal(sub.embeddings.data[0, 0], b.embeddings.data[0, 1])


class TestConfig:
    def test_full_config_constructible(self):
        from grtrack.model import TrackerNet
        cfg = EncoderConfig.full()
        assert (cfg.depth, cfg.dim, cfg.heads, cfg.n_template, cfg.n_search) == (12, 768, 12, 64, 256)
        net = TrackerNet(cfg)
        assert net.blocks[0].attn.qkv.w.shape == (768, 2304)

    @pytest.mark.parametrize("kw", [
        dict(heads=5), dict(template_size_px=30), dict(relevance_layers=[2, 9, 13]),
        dict(keep_ratios=[0.9, 0.8]), dict(relevance_layers=[4, 4, 10]),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            EncoderConfig(**kw).validate()
