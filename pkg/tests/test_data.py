import colorsys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grtrack.data import (DataError, SyntheticSequenceConfig, drift_heavy_config, gen_sequence, list_sequences,
                          load_sequence, read_groundtruth, read_ppm, save_sequence, write_ppm)


def patch_hue(frame, box):
    x, y, w, h = (int(v) for v in box)
    rgb = frame[y:y + h, x:x + w].reshape(-1, 3).mean(0) / 255.0
    return colorsys.rgb_to_hsv(*rgb)[0]


class TestGenerator:
    def test_static_scene(self):
        seq = gen_sequence(SyntheticSequenceConfig(length=6, speed=0.0, jitter_std=0.0), seed=4)
        assert all(np.array_equal(seq.frames[0], f) for f in seq.frames[1:])
        assert np.all(seq.gt == seq.gt[0])

    def test_same_seed_bit_identical(self):
        cfg = drift_heavy_config(length=10)
        a, b = gen_sequence(cfg, 9), gen_sequence(cfg, 9)
        assert np.array_equal(a.frames, b.frames) and np.array_equal(a.gt, b.gt)
        assert not np.array_equal(a.frames, gen_sequence(cfg, 10).frames)

    def test_drift_changes_target_color(self):
        seq = gen_sequence(drift_heavy_config(length=101, distractors=0), seed=2)
        still = gen_sequence(SyntheticSequenceConfig(length=101), seed=2)
        drifted = abs(patch_hue(seq.frames[0], seq.gt[0]) - patch_hue(seq.frames[100], seq.gt[100]))
        drifted = min(drifted, 1 - drifted)
        steady = abs(patch_hue(still.frames[0], still.gt[0]) - patch_hue(still.frames[100], still.gt[100]))
        steady = min(steady, 1 - steady)
        assert drifted > 0.2 and steady < 0.05

    def test_scale_drift_grows_box(self):
        seq = gen_sequence(drift_heavy_config(length=100), seed=1)
        assert seq.gt[99, 2] > seq.gt[0, 2] * 1.2

    def test_target_too_big(self):
        with pytest.raises(DataError):
            gen_sequence(SyntheticSequenceConfig(frame_h=32, frame_w=32, target_w=30, target_h=10), seed=0)

    def test_non_finite_rate(self):
        with pytest.raises(DataError):
            gen_sequence(SyntheticSequenceConfig(speed=float("nan")), seed=0)

    @given(st.integers(0, 10_000), st.floats(0, 4), st.integers(0, 3))
    def test_gt_inside_frame(self, seed, speed, distractors):
        cfg = SyntheticSequenceConfig(length=40, frame_h=64, frame_w=80, target_w=12, target_h=10, speed=speed,
                                      scale_drift=0.01, distractors=distractors)
        seq = gen_sequence(cfg, seed)
        x, y, w, h = seq.gt.T
        assert np.all(x >= 0) and np.all(y >= 0) and np.all(w > 0) and np.all(h > 0)
        assert np.all(x + w <= 80) and np.all(y + h <= 64)

    def test_occlusion_darkens_target(self):
        cfg = SyntheticSequenceConfig(length=5, speed=0.0, jitter_std=0.0, occlusions=[(2, 2)])
        seq = gen_sequence(cfg, seed=3)
        assert np.array_equal(seq.frames[0], seq.frames[1]) and not np.array_equal(seq.frames[1], seq.frames[2])
        assert np.array_equal(seq.frames[1], seq.frames[4])


class TestFormats:
    def test_ppm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(7, 5, 3)).astype(np.uint8)
        write_ppm(tmp_path / "a.ppm", img)
        assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n5 7\n255\n")
        np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)

    def test_ppm_comment_header(self, tmp_path):
        (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([1, 2, 3]))
        assert read_ppm(tmp_path / "c.ppm").tolist() == [[[1, 2, 3]]]

    def test_ppm_rejects_ascii(self, tmp_path):
        (tmp_path / "p3.ppm").write_bytes(b"P3\n1 1\n255\n1 2 3\n")
        with pytest.raises(DataError):
            read_ppm(tmp_path / "p3.ppm")

    def test_sequence_round_trip(self, tmp_path):
        seq = gen_sequence(drift_heavy_config(length=8), seed=5, name="abc")
        save_sequence(seq, tmp_path / "abc")
        back = load_sequence(tmp_path / "abc")
        assert back.name == "abc" and back.meta["seed"] == 5
        np.testing.assert_array_equal(back.frames, seq.frames)
        np.testing.assert_array_equal(back.gt, seq.gt)
        assert (tmp_path / "abc" / "frames" / "000007.ppm").exists()

    def test_groundtruth_separators(self, tmp_path):
        (tmp_path / "gt.txt").write_text("1,2,3,4\n5\t6\t7\t8\n\n9 10 11 12.5\n")
        np.testing.assert_array_equal(read_groundtruth(tmp_path / "gt.txt"),
                                      [[1, 2, 3, 4], [5, 6, 7, 8], [9, 10, 11, 12.5]])

    def test_groundtruth_bad_line(self, tmp_path):
        (tmp_path / "gt.txt").write_text("1,2,3\n")
        with pytest.raises(DataError):
            read_groundtruth(tmp_path / "gt.txt")

    def test_frame_count_mismatch(self, tmp_path):
        seq = gen_sequence(SyntheticSequenceConfig(length=3), seed=0)
        save_sequence(seq, tmp_path / "s")
        (tmp_path / "s" / "groundtruth.txt").write_text("1,1,4,4\n")
        with pytest.raises(DataError):
            load_sequence(tmp_path / "s")

    def test_list_sequences(self, tmp_path):
        for name in ("b", "a"):
            save_sequence(gen_sequence(SyntheticSequenceConfig(length=2), seed=0, name=name), tmp_path / name)
        assert [p.name for p in list_sequences(tmp_path)] == ["a", "b"]
        assert list_sequences(tmp_path / "a") == [tmp_path / "a"]
        with pytest.raises(DataError):
            list_sequences(tmp_path / "missing")
