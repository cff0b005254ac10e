import numpy as np
import pytest

import oracles
from postergenre.metrics import (CSV_HEADER, confusion_per_genre, evaluate, format_table, hamming_loss,
                                 heatmap_lines, macro_report, partition_by_label_count, write_reports_csv)

TRUTH = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0], [0, 0, 1]])
PRED = np.array([[1, 1, 0], [0, 1, 0], [0, 1, 1], [0, 0, 1]])


class TestConfusion:
    def test_hand_tally(self):
        c = confusion_per_genre(PRED, TRUTH)
        np.testing.assert_array_equal(c.tp, [1, 2, 1])
        np.testing.assert_array_equal(c.fp, [0, 1, 1])
        np.testing.assert_array_equal(c.tn, [2, 1, 1])
        np.testing.assert_array_equal(c.fn, [1, 0, 1])
        np.testing.assert_array_equal(c.tp + c.fp + c.tn + c.fn, [4, 4, 4])

    def test_identity(self):
        c = confusion_per_genre(TRUTH, TRUTH)
        assert not c.fp.any() and not c.fn.any()

    def test_all_zero_predictions(self):
        c = confusion_per_genre(np.zeros_like(TRUTH), TRUTH)
        assert not c.tp.any() and not c.fp.any()

    def test_mismatch(self):
        with pytest.raises(ValueError):
            confusion_per_genre(PRED[:3], TRUTH)


class TestMacro:
    def test_hand_fixture(self):
        rep = evaluate(PRED, TRUTH)
        m = rep.macro
        # per genre P=(1, 2/3, 1/2), R=(1/2, 1, 1/2), Sp=(1, 1/2, 1/2), F1=(2/3, 4/5, 1/2)
        np.testing.assert_allclose(m["P"], 72.2222, atol=5e-5)
        np.testing.assert_allclose(m["R"], 66.6667, atol=5e-5)
        np.testing.assert_allclose(m["Sp"], 66.6667, atol=5e-5)
        np.testing.assert_allclose(m["BA"], 66.6667, atol=5e-5)
        np.testing.assert_allclose(m["FM"], 65.5556, atol=5e-5)
        np.testing.assert_allclose(rep.f_measure, [66.6667, 80.0, 50.0], atol=5e-5)
        assert rep.hamming == pytest.approx(4 / 12, abs=1e-15)

    def test_fm_is_mean_of_f1_not_f1_of_means(self):
        m = evaluate(PRED, TRUTH).macro
        harmonic = 2 * m["P"] * m["R"] / (m["P"] + m["R"])
        assert abs(m["FM"] - harmonic) > 1.0

    def test_perfect(self):
        m = evaluate(TRUTH, TRUTH).macro
        for key in ("P", "R", "Sp", "BA", "FM"):
            assert m[key] == 100.0

    def test_undefined_cells_count_as_zero(self):
        rep = evaluate(np.zeros_like(TRUTH), TRUTH)
        np.testing.assert_array_equal(rep.precision, [0, 0, 0])
        np.testing.assert_array_equal(rep.f_measure, [0, 0, 0])
        np.testing.assert_array_equal(rep.specificity, [100, 100, 100])

    def test_ba_identity_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            t = rng.integers(0, 2, size=(20, 6))
            p = rng.integers(0, 2, size=(20, 6))
            rep = evaluate(p, t)
            np.testing.assert_allclose(rep.balanced_accuracy, (rep.recall + rep.specificity) / 2, atol=1e-9)
            m = rep.macro
            assert abs(m["BA"] - (m["R"] + m["Sp"]) / 2) <= 1e-9

    def test_matches_naive_and_order_invariant(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            t = rng.integers(0, 2, size=(15, 5))
            p = rng.integers(0, 2, size=(15, 5))
            rep = evaluate(p, t)
            macro, hl = oracles.macro_metrics(p.tolist(), t.tolist())
            for k, v in macro.items():
                np.testing.assert_allclose(rep.macro[k], v, rtol=1e-12, atol=1e-12)
            assert rep.hamming == hl
            perm = rng.permutation(15)
            assert evaluate(p[perm], t[perm]).macro == pytest.approx(rep.macro, abs=1e-12)

    def test_reported_table_row_consistency(self):
        # a published macro row: R and Sp average to the quoted BA (2-decimal rounding)
        recall, specificity, ba = 57.88, 87.35, 72.61
        assert abs((recall + specificity) / 2 - ba) <= 0.01
        # and its FM is not the harmonic mean of its macro P and R
        precision, fm = 55.95, 56.40
        assert abs(2 * precision * recall / (precision + recall) - fm) > 0.4


class TestHamming:
    def test_identity_and_complement(self):
        assert hamming_loss(TRUTH, TRUTH) == 0.0
        assert hamming_loss(1 - TRUTH, TRUTH) == 1.0

    def test_three_of_twenty_six(self):
        t = np.zeros((2, 13), dtype=np.int64)
        t[0, [0, 1]] = 1
        t[1, 5] = 1
        p = t.copy()
        p[0, 1] = 0
        p[1, [7, 8]] = 1
        assert hamming_loss(p, t) == 3 / 26
        np.testing.assert_allclose(hamming_loss(p, t), 0.11538, atol=5e-6)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            hamming_loss(TRUTH[:2], TRUTH)


class TestPartitionAndReports:
    def test_partition(self):
        t = np.array([[1, 0, 0], [1, 1, 0], [1, 1, 1], [0, 1, 0]])
        parts = partition_by_label_count(t)
        assert {k: v.tolist() for k, v in parts.items()} == {1: [0, 3], 2: [1], 3: [2]}

    def test_csv(self, tmp_path):
        rep = evaluate(PRED, TRUTH, tag="all")
        write_reports_csv(tmp_path / "r.csv", [rep], ["A", "B", "C"])
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == ",".join(CSV_HEADER)
        assert lines[1] == "all,A,100.00,50.00,100.00,75.00,66.67,"
        assert lines[-1] == "all,macro,72.22,66.67,66.67,66.67,65.56,0.33333"

    def test_text_table(self):
        text = format_table(macro_report(confusion_per_genre(PRED, TRUTH), 0.25, "TD<1>"), ["A", "B", "C"])
        assert text.startswith("[TD<1>]\n")
        assert "macro" in text and "0.25000" in text

    def test_heatmap(self):
        lines = heatmap_lines(["a.ppm"], [[1, 0]], [[0.91234, 0.1]], ["X", "Y"])
        assert lines == ["path\ttrue:X\ttrue:Y\tscore:X\tscore:Y", "a.ppm\t1\t0\t0.9123\t0.1000"]
