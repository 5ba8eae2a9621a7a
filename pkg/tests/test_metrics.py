import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grtrack.data import DataError
from grtrack.metrics import (SequenceResult, THRESHOLDS, center_error, iou, metrics_table, precision, read_results,
                             results_csv, success_auc, success_curve, table_csv, write_results)

boxes = st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(0.5, 50), st.floats(0.5, 50))


class TestIoU:
    def test_identity(self):
        assert iou([3, 4, 5, 6], [3, 4, 5, 6]) == 1.0

    def test_disjoint(self):
        assert iou([0, 0, 2, 2], [5, 5, 2, 2]) == 0.0

    def test_corner_example(self):
        assert iou([0, 0, 2, 2], [1, 1, 2, 2]) == pytest.approx(1 / 7, abs=1e-15)

    def test_vectorised(self):
        out = iou(np.array([[0, 0, 2, 2], [0, 0, 2, 2]]), np.array([[1, 1, 2, 2], [0, 0, 2, 2]]))
        np.testing.assert_allclose(out, [1 / 7, 1.0])

    @given(boxes, boxes)
    def test_range_and_symmetry(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0 + 1e-12
        assert v == pytest.approx(iou(b, a), abs=1e-12)


class TestCurves:
    def test_thresholds(self):
        assert len(THRESHOLDS) == 21 and THRESHOLDS[0] == 0.0 and THRESHOLDS[-1] == 1.0

    def test_hand_example(self):
        # IoU 1.0 exceeds 20 thresholds, 0.4 exceeds 8 (0 .. 0.35), 0.0 exceeds none
        assert success_auc([1.0, 0.4, 0.0]) == pytest.approx(28 / 63, abs=1e-15)

    def test_perfect_within_one_step(self):
        assert 1.0 - success_auc(np.ones(10)) <= 0.05 + 1e-12

    def test_all_disjoint(self):
        assert success_auc(np.zeros(10)) == 0.0

    def test_curve_non_increasing(self, rng):
        curve = success_curve(rng.random(50))
        assert np.all(np.diff(curve) <= 0)

    def test_empty(self):
        with pytest.raises(ValueError):
            success_auc([])
        with pytest.raises(ValueError):
            precision([])

    def test_precision(self):
        errs = center_error(np.array([[0, 0, 2, 2], [3, 4, 2, 2], [30, 0, 2, 2]]), np.zeros((3, 4)) + [0, 0, 2, 2])
        np.testing.assert_allclose(errs, [0, 5, 30])
        assert precision(errs, 5) == pytest.approx(2 / 3)
        assert precision(errs, 20) == pytest.approx(2 / 3)
        assert precision(errs, 30) == 1.0


def result(name, seed, n=6):
    rng = np.random.default_rng(seed)
    gt = np.column_stack([rng.uniform(0, 50, (n, 2)), rng.uniform(5, 20, (n, 2))])
    return SequenceResult(name, gt + rng.normal(0, 2, (n, 4)), gt)


class TestTables:
    def test_csv_round_trip(self, tmp_path):
        res = [result("a", 0), result("b", 1)]
        write_results(tmp_path / "r.csv", res)
        text = (tmp_path / "r.csv").read_text()
        assert text.splitlines()[0] == "sequence,frame,pred_x,pred_y,pred_w,pred_h,gt_x,gt_y,gt_w,gt_h"
        back = read_results(tmp_path / "r.csv")
        assert [r.name for r in back] == ["a", "b"]
        for r, b in zip(res, back):
            np.testing.assert_allclose(b.pred, r.pred, atol=5e-5)
            np.testing.assert_allclose(b.gt, r.gt, atol=5e-5)
        assert results_csv(back) == text

    def test_bad_header(self, tmp_path):
        (tmp_path / "r.csv").write_text("a,b\n1,2\n")
        with pytest.raises(DataError):
            read_results(tmp_path / "r.csv")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_results(tmp_path / "nope.csv")

    def test_table_has_all_row(self):
        rows = metrics_table([result("b", 1), result("a", 0)])
        assert [r["sequence"] for r in rows] == ["a", "b", "ALL"]
        assert rows[-1]["frames"] == 12
        assert table_csv(rows).splitlines()[0].startswith("sequence,frames,auc,mean_iou,precision@5")

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            SequenceResult("x", np.ones((3, 4)), np.ones((2, 4))).metrics()

    @given(st.permutations(range(5)))
    def test_permutation_invariant(self, perm):
        res = [result(f"s{i}", i) for i in range(5)]
        a = table_csv(metrics_table(res))
        b = table_csv(metrics_table([res[i] for i in perm]))
        assert a == b
