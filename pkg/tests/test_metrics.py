"""Confusion counting, the six ratio metrics, and report formatting."""

import numpy as np
import pytest

from cardioseg.metrics import (
    ConfusionCounts,
    aggregate_stats,
    binarize,
    compute_metrics,
    confusion_counts,
    format_report,
    write_aggregate_csv,
    write_slice_csv,
)
from cardioseg.tensor import Rng


def brute_counts(pred, truth):
    """Per-pixel python loop, written independently of the library."""
    tp = fp = fn = tn = 0
    for p, t in zip(pred.ravel().tolist(), truth.ravel().tolist()):
        if p == 1 and t == 1:
            tp += 1
        elif p == 1 and t == 0:
            fp += 1
        elif p == 0 and t == 1:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


class TestBinarize:
    def test_pinned_channel_comparisons(self):
        scores = np.array([[[[0.2, 0.8]], [[0.9, 0.1]], [[0.5, 0.5]]]])
        out = binarize(scores.reshape(1, 3, 1, 2))
        np.testing.assert_array_equal(out.reshape(3), [1, 0, 1])

    def test_output_is_uint8_without_batch_requirement(self):
        scores = Rng(1).uniform((8, 8, 2))
        out = binarize(scores)
        assert out.dtype == np.uint8
        assert set(np.unique(out).tolist()) <= {0, 1}

    def test_tie_goes_to_foreground(self):
        scores = np.full((2, 2, 2), 0.5)
        assert binarize(scores).all()

    def test_matches_channel_argmax(self):
        scores = Rng(2).uniform((16, 16, 2))
        expected = (scores[..., 1] >= scores[..., 0]).astype(np.uint8)
        np.testing.assert_array_equal(binarize(scores), expected)

    def test_rejects_wrong_channel_count(self):
        with pytest.raises(ValueError):
            binarize(Rng(3).uniform((4, 4, 3)))


class TestConfusionCounts:
    def test_hand_enumerated_quadrants(self):
        pred = np.array([1, 1, 0, 0], dtype=np.uint8)
        truth = np.array([1, 0, 1, 0], dtype=np.uint8)
        c = confusion_counts(pred, truth)
        assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 1, 1)
        assert c.total == 4

    def test_perfect_and_empty_predictions(self):
        truth = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        c = confusion_counts(truth, truth)
        assert (c.tp, c.fp, c.fn, c.tn) == (2, 0, 0, 2)
        z = np.zeros((2, 2), dtype=np.uint8)
        c = confusion_counts(z, z)
        assert (c.tp, c.fp, c.fn, c.tn) == (0, 0, 0, 4)

    def test_matches_per_pixel_loop_on_seeded_pairs(self):
        rng = Rng(4)
        for trial in range(100):
            r = rng.derive(trial)
            pred = (r.uniform((32, 32)) > 0.5).astype(np.uint8)
            truth = (r.uniform((32, 32)) > 0.7).astype(np.uint8)
            c = confusion_counts(pred, truth)
            assert (c.tp, c.fp, c.fn, c.tn) == brute_counts(pred, truth)

    def test_rejects_non_binary_and_mismatched_inputs(self):
        with pytest.raises(ValueError):
            confusion_counts(np.array([2, 0]), np.array([1, 0]))
        with pytest.raises(ValueError):
            confusion_counts(np.zeros((2, 2)), np.zeros((2, 3)))


class TestComputeMetrics:
    def test_hand_worked_uniform_confusion(self):
        m = compute_metrics(ConfusionCounts(1, 1, 1, 1))
        assert m.tpr == 0.5
        assert m.fpr == 0.5
        assert m.ppv == 0.5
        assert m.dice == 0.5
        assert abs(m.jaccard - 1.0 / 3.0) < 1e-15
        assert m.youden == 0.0

    def test_empty_prediction_of_empty_truth_is_perfect(self):
        m = compute_metrics(ConfusionCounts(0, 0, 0, 16))
        assert (m.tpr, m.fpr, m.ppv, m.dice, m.jaccard, m.youden) == (1, 0, 1, 1, 1, 1)

    def test_single_zero_denominators_yield_zero(self):
        m = compute_metrics(ConfusionCounts(0, 3, 0, 13))  # no actual positives
        assert m.tpr == 0.0 and m.dice == 0.0
        m = compute_metrics(ConfusionCounts(0, 0, 3, 13))  # no predicted positives
        assert m.ppv == 0.0
        m = compute_metrics(ConfusionCounts(3, 0, 0, 0))  # no actual negatives
        assert m.fpr == 0.0 and m.tpr == 1.0

    def test_ratios_match_definitions_on_seeded_pairs(self):
        rng = Rng(5)
        for trial in range(100):
            r = rng.derive("ratios", trial)
            pred = (r.uniform((32, 32)) > 0.4).astype(np.uint8)
            truth = (r.uniform((32, 32)) > 0.6).astype(np.uint8)
            tp, fp, fn, tn = brute_counts(pred, truth)
            m = compute_metrics(confusion_counts(pred, truth))
            assert abs(m.tpr - tp / (tp + fn)) < 1e-12
            assert abs(m.fpr - fp / (fp + tn)) < 1e-12
            assert abs(m.ppv - tp / (tp + fp)) < 1e-12
            assert abs(m.dice - 2 * tp / (2 * tp + fp + fn)) < 1e-12
            assert abs(m.jaccard - tp / (tp + fp + fn)) < 1e-12

    def test_dice_jaccard_identity(self):
        rng = Rng(6)
        for trial in range(100):
            r = rng.derive("identity", trial)
            pred = (r.uniform((32, 32)) > 0.5).astype(np.uint8)
            truth = (r.uniform((32, 32)) > 0.5).astype(np.uint8)
            m = compute_metrics(confusion_counts(pred, truth))
            assert abs(m.dice - 2 * m.jaccard / (1 + m.jaccard)) < 1e-9
            assert m.youden == m.tpr - m.fpr

    def test_all_metrics_in_range(self):
        rng = Rng(7)
        for trial in range(50):
            r = rng.derive("range", trial)
            pred = (r.uniform((16, 16)) > 0.5).astype(np.uint8)
            truth = (r.uniform((16, 16)) > 0.8).astype(np.uint8)
            m = compute_metrics(confusion_counts(pred, truth))
            for v in (m.tpr, m.fpr, m.ppv, m.dice, m.jaccard):
                assert 0.0 <= v <= 1.0
            assert -1.0 <= m.youden <= 1.0

    def test_dice_and_jaccard_symmetric_under_role_swap(self):
        rng = Rng(8)
        for trial in range(20):
            r = rng.derive("swap", trial)
            a = (r.uniform((16, 16)) > 0.5).astype(np.uint8)
            b = (r.uniform((16, 16)) > 0.5).astype(np.uint8)
            mab = compute_metrics(confusion_counts(a, b))
            mba = compute_metrics(confusion_counts(b, a))
            assert mab.dice == mba.dice
            assert mab.jaccard == mba.jaccard


class TestAggregation:
    def test_mean_and_sample_std(self):
        v1 = compute_metrics(ConfusionCounts(1, 0, 1, 2))  # tpr 0.5
        v2 = compute_metrics(ConfusionCounts(2, 0, 0, 2))  # tpr 1.0
        stats = aggregate_stats([v1, v2])
        mean, std = stats["tpr"]
        assert mean == 0.75
        assert abs(std - np.std([0.5, 1.0], ddof=1)) < 1e-15

    def test_single_vector_has_zero_spread(self):
        stats = aggregate_stats([compute_metrics(ConfusionCounts(1, 1, 1, 1))])
        for mean, std in stats.values():
            assert std == 0.0

    def test_rejects_empty_input(self):
        with pytest.raises(ValueError):
            aggregate_stats([])


class TestReportFormat:
    def test_six_labeled_rows_in_order(self):
        stats = aggregate_stats(
            [compute_metrics(ConfusionCounts(3, 1, 1, 11)), compute_metrics(ConfusionCounts(2, 2, 0, 12))]
        )
        lines = format_report(stats).splitlines()
        assert [ln.split("  ")[0] for ln in lines] == [
            "Recall",
            "Fallout",
            "Precision",
            "Dice score",
            "Jaccard index",
            "Youden's index",
        ]

    def test_row_layout_is_label_mean_plus_minus_std(self):
        stats = {name: (0.8216, 0.2067) for name in ("tpr", "fpr", "ppv", "dice", "jaccard", "youden")}
        report = format_report(stats)
        assert "Dice score  0.8216 ± 0.2067\n" in report
        assert report.endswith("\n")

    def test_four_decimal_rounding(self):
        stats = {name: (1 / 3, 2 / 3) for name in ("tpr", "fpr", "ppv", "dice", "jaccard", "youden")}
        assert "Recall  0.3333 ± 0.6667" in format_report(stats)


class TestCsvWriters:
    def test_aggregate_csv_layout(self, tmp_path):
        stats = aggregate_stats([compute_metrics(ConfusionCounts(1, 1, 1, 1))])
        path = tmp_path / "metrics.csv"
        write_aggregate_csv(path, stats, 1)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "metric,mean,std,n"
        assert len(lines) == 7
        assert lines[1].startswith("tpr,0.5,0")

    def test_slice_csv_layout(self, tmp_path):
        m = compute_metrics(ConfusionCounts(1, 1, 1, 1))
        path = tmp_path / "slices.csv"
        write_slice_csv(path, [("vol0", 0, m), ("vol0", 1, m)])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "volume_id,slice_index,tpr,fpr,ppv,dice,jaccard,youden"
        assert len(lines) == 3
        assert lines[1].startswith("vol0,0,0.5,0.5,0.5,0.5,")
