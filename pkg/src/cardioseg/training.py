"""Loss, optimizer, and the epoch loop with loss/Dice monitoring."""

import csv
from dataclasses import dataclass

import numpy as np

from .metrics import binarize, compute_metrics, confusion_counts
from .tensor import Rng

CLAMP = 1e-7


def one_hot(labels, num_classes=2, dtype=np.float32):
    """Binary [..., H, W] labels to one-hot [..., H, W, num_classes]."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (num_classes,), dtype=dtype)
    idx = labels.astype(np.int64)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def cross_entropy_loss(y, y_hat, clamp=CLAMP):
    """Mean per-pixel categorical cross entropy and its gradient.

    y is one-hot over the last axis. y_hat holds per-channel scores in
    (0, 1); they are clamped into [clamp, 1-clamp] and renormalized
    across channels to a distribution before the log. The renormalization
    is what couples the channels when the scores come from independent
    per-channel sigmoids: without it the losing channel would get no
    gradient at all. The class/pixel sum is divided by the pixel count,
    and the gradient carries the same mean factor, with zeros where the
    clamp is active.
    """
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: y {y.shape} vs y_hat {y_hat.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ValueError("y must be one-hot along the last axis")
    pixels = y.size // y.shape[-1]
    yc = np.clip(y_hat, clamp, 1.0 - clamp)
    total = yc.sum(axis=-1, keepdims=True)
    loss = -float((y * (np.log(yc) - np.log(total))).sum()) / pixels
    grad = (-(y / yc) + 1.0 / total) / pixels
    grad = np.where((y_hat >= clamp) & (y_hat <= 1.0 - clamp), grad, 0.0)
    return loss, grad.astype(y_hat.dtype, copy=False)


class Adam:
    """Adam with bias correction at the standard defaults."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params):
        """Update each (name, value, grad) triple in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, value, grad in params:
            if grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
            if grad.shape != value.shape:
                raise ValueError(f"gradient shape {grad.shape} != parameter shape {value.shape} for {name!r}")
            if name not in self.m:
                self.m[name] = np.zeros_like(value, dtype=np.float64)
                self.v[name] = np.zeros_like(value, dtype=np.float64)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (grad.astype(np.float64) ** 2)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            value -= update.astype(value.dtype)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_dice: float
    val_loss: float
    val_dice: float


class TrainLog:
    """Per-epoch loss/Dice records, serializable as CSV."""

    FIELDS = ("epoch", "train_loss", "train_dice", "val_loss", "val_dice")

    def __init__(self):
        self.records = []

    def append(self, record: EpochRecord):
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise ValueError("epoch indices must increase by 1")
        self.records.append(record)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.FIELDS)
            for r in self.records:
                w.writerow([r.epoch] + [f"{v:.8g}" for v in
                                        (r.train_loss, r.train_dice, r.val_loss, r.val_dice)])


def _batches(order, batch_size):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def _stack_batch(dataset, indices, num_classes):
    xs, labels = [], []
    for i in indices:
        s = dataset[i]
        xs.append(s.pixels)
        labels.append(s.label)
    x = np.stack(xs)
    lab = np.stack(labels)
    return x, lab, one_hot(lab, num_classes, dtype=x.dtype)


def _batch_dice(scores, labels):
    return [
        compute_metrics(confusion_counts(binarize(scores[i]), labels[i])).dice
        for i in range(scores.shape[0])
    ]


def train_epoch(model, dataset, batch_size, adam, rng: Rng):
    """One shuffled pass over the dataset; returns (mean loss, mean Dice)
    where both are averaged over the batches of the epoch."""
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(n)
    losses, dices = [], []
    for chunk in _batches(order, batch_size):
        x, labels, y = _stack_batch(dataset, chunk, model.config.num_classes)
        scores = model.forward(x, train=True)
        loss, dgrad = cross_entropy_loss(y, scores)
        model.backward(dgrad)
        adam.step(model.parameters())
        losses.append(loss)
        dices.append(float(np.mean(_batch_dice(scores, labels))))
    return float(np.mean(losses)), float(np.mean(dices))


def evaluate_split(model, dataset, batch_size=8):
    """Infer-mode mean loss and mean Dice over every pair in the dataset.

    Loss and Dice are computed per slice and averaged over all slices;
    nothing in the model is mutated.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    losses, dices = [], []
    for chunk in _batches(list(range(n)), batch_size):
        x, labels, y = _stack_batch(dataset, chunk, model.config.num_classes)
        scores = model.forward(x, train=False)
        for i in range(len(chunk)):
            loss, _ = cross_entropy_loss(y[i], scores[i])
            losses.append(loss)
        dices.extend(_batch_dice(scores, labels))
    return float(np.mean(losses)), float(np.mean(dices))


def fit(model, train_ds, val_ds, epochs, batch_size, adam, rng: Rng, progress=None):
    """Train for a fixed epoch budget, logging train/val loss and Dice.

    Shuffling is reseeded per epoch from the master rng so the whole run
    is a pure function of (config, seed, dataset).
    """
    log = TrainLog()
    for epoch in range(1, epochs + 1):
        shuffle_rng = rng.derive("shuffle", epoch)
        train_loss, train_dice = train_epoch(model, train_ds, batch_size, adam, shuffle_rng)
        val_loss, val_dice = evaluate_split(model, val_ds, batch_size=batch_size)
        record = EpochRecord(epoch, train_loss, train_dice, val_loss, val_dice)
        log.append(record)
        if progress is not None:
            progress(record)
    return log
