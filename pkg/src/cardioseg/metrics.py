"""Confusion counts and segmentation quality metrics.

All metrics are computed per slice from the binary prediction/label pair
and then aggregated as mean and sample standard deviation across slices.
"""

import csv
from dataclasses import dataclass

import numpy as np

# Display order and labels for the aggregate report.
REPORT_ROWS = (
    ("tpr", "Recall"),
    ("fpr", "Fallout"),
    ("ppv", "Precision"),
    ("dice", "Dice score"),
    ("jaccard", "Jaccard index"),
    ("youden", "Youden's index"),
)

METRIC_NAMES = tuple(key for key, _ in REPORT_ROWS)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricVector:
    tpr: float
    fpr: float
    ppv: float
    dice: float
    jaccard: float
    youden: float

    def as_tuple(self):
        return (self.tpr, self.fpr, self.ppv, self.dice, self.jaccard, self.youden)


def binarize(scores):
    """Per-pixel class scores [..., H, W, 2] to a binary mask [..., H, W].

    A pixel is foreground when its foreground score is at least its
    background score, so exact ties resolve to foreground.
    """
    scores = np.asarray(scores)
    if scores.ndim < 3 or scores.shape[-1] != 2:
        raise ValueError(f"expected [..., H, W, 2] scores, got shape {scores.shape}")
    return (scores[..., 1] >= scores[..., 0]).astype(np.uint8)


def confusion_counts(pred, truth):
    """Pixel counts of the four prediction/truth agreement cases."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    for name, arr in (("pred", pred), ("truth", truth)):
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError(f"{name} must be binary (0/1)")
    p = pred.astype(bool)
    t = truth.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
    )


def _ratio(num, den, empty_value):
    return num / den if den > 0 else empty_value


def compute_metrics(counts: ConfusionCounts) -> MetricVector:
    """Six overlap metrics from confusion counts.

    When prediction and truth are both empty (tp+fp+fn == 0) the overlap
    scores are perfect by convention: tpr, ppv, dice, and jaccard are 1.
    Otherwise any individually undefined ratio falls back to 0. fpr is 0
    whenever there are no true negatives or false positives to count.
    """
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    if min(tp, fp, fn, tn) < 0:
        raise ValueError("confusion counts must be non-negative")
    both_empty = (tp + fp + fn) == 0
    tpr = _ratio(tp, tp + fn, 1.0 if both_empty else 0.0)
    fpr = _ratio(fp, fp + tn, 0.0)
    ppv = _ratio(tp, tp + fp, 1.0 if both_empty else 0.0)
    dice = _ratio(2 * tp, 2 * tp + fp + fn, 1.0 if both_empty else 0.0)
    jaccard = _ratio(tp, tp + fp + fn, 1.0 if both_empty else 0.0)
    youden = tpr - fpr
    return MetricVector(tpr, fpr, ppv, dice, jaccard, youden)


def aggregate_stats(vectors):
    """Mean and sample std (ddof=1) of each metric across slices.

    Returns {metric: (mean, std)}; std is 0.0 for a single slice.
    """
    vectors = list(vectors)
    if not vectors:
        raise ValueError("no metric vectors to aggregate")
    data = np.array([v.as_tuple() for v in vectors], dtype=np.float64)
    out = {}
    for j, name in enumerate(METRIC_NAMES):
        col = data[:, j]
        std = float(col.std(ddof=1)) if len(col) > 1 else 0.0
        out[name] = (float(col.mean()), std)
    return out


def format_report(stats):
    """Aggregate stats as six 'name  mean ± std' lines."""
    lines = []
    for key, label in REPORT_ROWS:
        mean, std = stats[key]
        lines.append(f"{label}  {mean:.4f} ± {std:.4f}")
    return "\n".join(lines) + "\n"


def write_aggregate_csv(path, stats, n):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "mean", "std", "n"])
        for key in METRIC_NAMES:
            mean, std = stats[key]
            w.writerow([key, f"{mean:.8g}", f"{std:.8g}", n])


def write_slice_csv(path, rows):
    """Per-slice metric rows: (volume_id, slice_index, MetricVector)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["volume_id", "slice_index"] + list(METRIC_NAMES))
        for volume_id, slice_index, vec in rows:
            w.writerow([volume_id, slice_index] + [f"{v:.8g}" for v in vec.as_tuple()])
