from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grtrack.encoder import ANCHOR, SEARCH, TEMPLATE, Provenance, TokenSeq
from grtrack.memory import POLICIES, GRMemory, UpdateSchedule, init, update
from grtrack.numeric import Tensor


def template(frame, n=4, c=3, value=None, seed=None):
    rng = np.random.default_rng(frame if seed is None else seed)
    emb = rng.normal(size=(1, n, c)) if value is None else np.full((1, n, c), float(value))
    return TokenSeq(Tensor(emb), Provenance.grid(frame, n, TEMPLATE))


def search(n=4, c=3):
    return TokenSeq(Tensor(np.zeros((1, n, c))), Provenance.grid(0, n, SEARCH))


def const_scorer(mem, new, x):
    return np.zeros(len(mem) + len(new))


def random_scorer(seed):
    rng = np.random.default_rng(seed)
    return lambda mem, new, x: rng.random(len(mem) + len(new))


class TestInit:
    def test_anchor_only(self):
        mem = init(template(0, n=16), capacity=48, n_template=16)
        assert len(mem) == 16 and len(mem.dynamic) == 0
        assert np.all(mem.anchor.provenance.kind == ANCHOR)

    def test_idempotent(self):
        z = template(0)
        a, b = init(z, 12), init(z, 12)
        np.testing.assert_array_equal(a.tokens().embeddings.data, b.tokens().embeddings.data)
        assert a.tokens().provenance.equals(b.tokens().provenance)

    def test_wrong_count(self):
        with pytest.raises(ValueError):
            init(template(0, n=5), capacity=12, n_template=4)

    def test_full_capacity(self):
        from grtrack.config import Config
        assert Config.full().memory_capacity == 192


class TestUpdate:
    def test_append_below_capacity(self):
        mem = init(template(0, n=64), 192)
        mem = update(mem, template(5, n=64), search(), "gr", const_scorer)
        assert len(mem.dynamic) == 64
        mem = update(mem, template(10, n=64), search(), "gr", const_scorer)
        assert len(mem.dynamic) == 128

    def test_at_capacity_keeps_anchor(self):
        mem = init(template(0, n=64), 192)
        anchor = mem.anchor.embeddings.data.copy()
        for t in (5, 10, 15, 20):
            mem = update(mem, template(t, n=64), search(), "gr", random_scorer(t))
        assert len(mem.anchor) == 64 and len(mem.dynamic) == 128
        assert np.array_equal(mem.anchor.embeddings.data, anchor)

    def test_one_template_noop(self):
        mem = init(template(0), 12)
        assert update(mem, template(5), search(), "one_template") is mem

    def test_dim_mismatch(self):
        mem = init(template(0, c=3), 12)
        with pytest.raises(ValueError):
            update(mem, template(5, c=4), search(), "gr", const_scorer)

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            update(init(template(0), 12), template(5), search(), "lru")

    def test_constant_scores_keep_first_candidates(self):
        mem = init(template(0), 12)
        mem = update(mem, template(5), search(), "gr", const_scorer)
        mem = update(mem, template(10), search(), "gr", const_scorer)
        mem = update(mem, template(15), search(), "gr", const_scorer)
        np.testing.assert_array_equal(mem.dynamic.provenance.frame_id, [5] * 4 + [10] * 4)

    def test_gr_keeps_top_scored(self):
        mem = init(template(0), 12)
        mem = update(mem, template(5), search(), "gr", const_scorer)
        mem = update(mem, template(10), search(), "gr", const_scorer)
        # candidates: 4 anchors (ignored), 8 dynamic, 4 new; favour the new ones and odd dynamic slots
        scores = np.concatenate([np.zeros(4), np.tile([0.0, 1.0], 4), np.full(4, 2.0)])
        mem = update(mem, template(15), search(), "gr", lambda m, n, x: scores)
        np.testing.assert_array_equal(mem.dynamic.provenance.frame_id, [5, 5, 10, 10, 15, 15, 15, 15])
        np.testing.assert_array_equal(mem.dynamic.provenance.spatial_index, [1, 3, 1, 3, 0, 1, 2, 3])

    def test_scorer_shape_checked(self):
        mem = init(template(0), 8)
        mem = update(mem, template(5), search(), "gr", const_scorer)
        with pytest.raises(ValueError):
            update(mem, template(10), search(), "gr", lambda m, n, x: np.zeros(3))

    def test_score_policy(self):
        mem = init(template(0), 12)
        mem = update(mem, template(5), search(), "score", center_score=0.5)
        mem = update(mem, template(10), search(), "score", center_score=0.9)
        mem = update(mem, template(15), search(), "score", center_score=0.3)  # worse than both: ignored
        assert [f for f, _ in mem.templates] == [5, 10]
        mem = update(mem, template(20), search(), "score", center_score=0.7)  # replaces frame 5 in place
        assert [f for f, _ in mem.templates] == [20, 10]
        np.testing.assert_array_equal(mem.dynamic.provenance.frame_id, [20] * 4 + [10] * 4)
        np.testing.assert_array_equal(mem.dynamic.embeddings.data, np.concatenate(
            [template(20).embeddings.data, template(10).embeddings.data], axis=1))

    def test_round_trip_arrays(self):
        mem = init(template(0), 12)
        mem = update(mem, template(5), search(), "fifo", center_score=0.25)
        back = GRMemory.from_arrays(mem.to_arrays())
        np.testing.assert_array_equal(back.tokens().embeddings.data, mem.tokens().embeddings.data)
        assert back.tokens().provenance.equals(mem.tokens().provenance)
        assert back.capacity == 12 and back.templates == mem.templates


class TestSchedule:
    @pytest.mark.parametrize("t,expected", [(1, 5), (50, 5), (100, 5), (101, 10), (150, 10), (250, 20),
                                            (350, 40), (450, 80), (500, 80), (501, 160), (700, 160)])
    def test_interval(self, t, expected):
        assert UpdateSchedule().interval(t) == expected

    def test_bad_t(self):
        with pytest.raises(ValueError):
            UpdateSchedule().interval(0)

    def test_non_decreasing(self):
        s = UpdateSchedule()
        vals = [s.interval(t) for t in range(1, 1000)]
        assert all(v > 0 for v in vals) and vals == sorted(vals)

    def test_update_frames(self):
        frames = UpdateSchedule().update_frames(131)
        assert frames[:20] == list(range(5, 101, 5))
        assert frames[20:] == [110, 120, 130]


def _check_memory_invariants(policy, n_updates, n_z, cap_templates, scorer_seed, scores_seed):
    cap = cap_templates * n_z
    z0 = template(0, n=n_z)
    mem = init(z0, cap)
    anchor = mem.anchor.embeddings.data.copy()
    anchor_prov = mem.anchor.provenance
    queue = deque()
    slots = cap_templates - 1
    cs = np.random.default_rng(scores_seed)
    scorer = random_scorer(scorer_seed)
    for i in range(1, n_updates + 1):
        new = template(5 * i, n=n_z)
        mem = update(mem, new, search(), policy, scorer, center_score=float(cs.random()))
        assert len(mem) <= cap
        assert np.array_equal(mem.anchor.embeddings.data, anchor)
        assert mem.anchor.provenance.equals(anchor_prov)
        frames = set(mem.dynamic.provenance.frame_id.tolist())
        assert len(frames) <= i + 1 and frames <= {5 * j for j in range(1, i + 1)}
        if policy == "fifo":
            queue.append(5 * i)
            if len(queue) > slots:
                queue.popleft()
            expected = [f for f in queue for _ in range(n_z)]
            assert mem.dynamic.provenance.frame_id.tolist() == expected
        if policy == "one_template":
            assert len(mem.dynamic) == 0


@given(st.sampled_from(POLICIES), st.integers(0, 8), st.integers(1, 5), st.integers(1, 4), st.integers(0, 99),
       st.integers(0, 99))
def test_memory_invariants(policy, n_updates, n_z, cap_templates, s1, s2):
    _check_memory_invariants(policy, n_updates, n_z, cap_templates, s1, s2)
