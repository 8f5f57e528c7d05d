"""Command-line interface: train, predict, evaluate, synth."""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data, metrics, volume_io
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .tensor import Rng
from .training import Adam, evaluate_split, fit
from .volume_io import VolumeFormatError

THREADS_ENV = "CARDIOSEG_THREADS"

# Flag defaults, also used to fill values a config file does not set.
DEFAULTS = {
    "nf": 16,
    "ch": 3,
    "depth": 4,
    "epochs": 10,
    "batch_size": 8,
    "lr": 0.001,
    "seed": 0,
    "split": "14,2,4",
    "count": 20,
    "dims": "64,64,8",
    "plots": False,
}

_CONVERTERS = {
    "nf": int,
    "ch": int,
    "depth": int,
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "seed": int,
    "count": int,
    "split": str,
    "dims": str,
    "data_dir": str,
    "out_dir": str,
    "checkpoint": str,
    "plots": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}


class CliError(Exception):
    """A user-facing failure reported as a one-line diagnostic."""


def read_config_file(path):
    """Parse a flat key=value config file; '#' starts a comment line."""
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _CONVERTERS:
                raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _CONVERTERS[key](value.strip())
            except ValueError as exc:
                raise CliError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def resolve_options(args):
    """Merge precedence: command-line flag, then config file, then default."""
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    merged = {}
    for key, value in vars(args).items():
        if key in ("command", "config", "func"):
            continue
        if value is None or (key == "plots" and value is False):
            value = file_values.get(key, DEFAULTS.get(key))
        merged[key] = value
    return argparse.Namespace(**merged)


def parse_triple(text, name):
    parts = text.split(",")
    if len(parts) != 3:
        raise CliError(f"{name} must be three comma-separated integers, got {text!r}")
    try:
        values = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise CliError(f"{name} must be three comma-separated integers, got {text!r}") from exc
    return values


def split_counts(ratio, n_volumes):
    """Turn the split triple into absolute counts for n_volumes.

    The triple is used as-is when it sums to the volume count, and
    otherwise scaled by an integer factor (so 14,2,4 covers both a
    20-volume and a 60-volume cohort).
    """
    total = sum(ratio)
    if total <= 0:
        raise CliError(f"split {ratio} must have a positive sum")
    if total == n_volumes:
        return ratio
    if n_volumes % total == 0:
        k = n_volumes // total
        return tuple(c * k for c in ratio)
    raise CliError(f"split {ratio} does not divide {n_volumes} volumes evenly")


def thread_count():
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(value)
    except ValueError as exc:
        raise CliError(f"{THREADS_ENV} must be an integer, got {value!r}") from exc
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _require(condition, message):
    if not condition:
        raise CliError(message)


def _load_pair(image_path, mask_path):
    image = data.normalize_volume(data.load_volume(image_path, "image"))
    mask = data.load_volume(mask_path, "mask")
    return image, mask


def cmd_synth(opts):
    dims = parse_triple(opts.dims, "--dims")
    _require(opts.out_dir, "--out-dir is required")
    image_dir = os.path.join(opts.out_dir, "images")
    mask_dir = os.path.join(opts.out_dir, "masks")
    os.makedirs(image_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    rng = Rng(opts.seed).derive("synth")
    pairs = data.gen_synthetic(opts.count, dims, rng)
    for image, mask in pairs:
        volume_io.write_hvol(os.path.join(image_dir, f"{image.source_id}.hvol"), image.voxels, "image")
        volume_io.write_hvol(os.path.join(mask_dir, f"{mask.source_id}.hvol"), mask.voxels, "mask")
    print(f"wrote {len(pairs)} volume pairs to {opts.out_dir}")
    return 0


def cmd_train(opts):
    _require(opts.data_dir, "--data-dir is required")
    _require(opts.out_dir, "--out-dir is required")
    triples = data.discover_pairs(opts.data_dir)
    _require(triples, f"no volume pairs found under {opts.data_dir}")
    counts = split_counts(parse_triple(opts.split, "--split"), len(triples))

    config = ModelConfig(nf=opts.nf, ch=opts.ch, depth=opts.depth, seed=opts.seed)
    config.validate()
    rng = Rng(opts.seed)
    split = data.make_dataset_split([t[2] for t in triples], counts, rng.derive("split"))

    by_stem = {stem: (ip, mp) for ip, mp, stem in triples}
    loaded = {stem: _load_pair(*by_stem[stem]) for stem in by_stem}
    train_ds = data.SliceDataset([loaded[s] for s in split.train], opts.ch)
    val_ds = data.SliceDataset([loaded[s] for s in split.val], opts.ch)

    model = build_model(config, rng.derive("init"))
    adam = Adam(lr=opts.lr)
    print(
        f"training nf={opts.nf} ch={opts.ch} depth={opts.depth} "
        f"({model.parameter_count()} parameters) on {len(train_ds)} slices, "
        f"validating on {len(val_ds)}"
    )

    def progress(r):
        print(
            f"epoch {r.epoch}/{opts.epochs} "
            f"train_loss={r.train_loss:.6f} train_dice={r.train_dice:.4f} "
            f"val_loss={r.val_loss:.6f} val_dice={r.val_dice:.4f}"
        )

    log = fit(model, train_ds, val_ds, opts.epochs, opts.batch_size, adam, rng, progress)

    os.makedirs(opts.out_dir, exist_ok=True)
    save_checkpoint(model, os.path.join(opts.out_dir, "model.ckpt"))
    log.write_csv(os.path.join(opts.out_dir, "trainlog.csv"))
    with open(os.path.join(opts.out_dir, "split.json"), "w") as f:
        json.dump(
            {"seed": opts.seed, "train": split.train, "val": split.val, "test": split.test},
            f,
            indent=2,
        )
    if opts.plots:
        write_curve_plots(log, os.path.join(opts.out_dir, "curves.png"))
    print(f"wrote checkpoint and log to {opts.out_dir}")
    return 0


def write_curve_plots(log, path):
    try:
        import matplotlib
    except ImportError as exc:
        raise CliError("--plots requires matplotlib (pip install matplotlib)") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r.epoch for r in log.records]
    panels = [
        ("train loss", [r.train_loss for r in log.records]),
        ("validation loss", [r.val_loss for r in log.records]),
        ("train dice", [r.train_dice for r in log.records]),
        ("validation dice", [r.val_dice for r in log.records]),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for ax, (title, values) in zip(axes.ravel(), panels):
        ax.plot(epochs, values, marker="o")
        ax.set_title(title)
        ax.set_xlabel("epoch")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def predict_volume(model, image, batch_size=8, threads=1):
    """Infer-mode mask volume [H, W, D] of {0,1} for one image volume."""
    stacks = data.volume_slices(image, None, model.config.ch)
    h, w, d = image.shape
    out = np.zeros((h, w, d), dtype=np.float32)
    chunks = [list(range(i, min(i + batch_size, d))) for i in range(0, d, batch_size)]

    def run(chunk):
        x = np.stack([stacks[z].pixels for z in chunk])
        return metrics.binarize(model.forward(x, train=False))

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    for chunk, masks in zip(chunks, results):
        for j, z in enumerate(chunk):
            out[:, :, z] = masks[j]
    return out


def cmd_predict(opts):
    _require(opts.checkpoint, "--checkpoint is required")
    _require(opts.out_dir, "--out-dir is required")
    _require(opts.data_dir, "--data-dir is required")
    _require(os.path.exists(opts.checkpoint), f"checkpoint not found: {opts.checkpoint}")
    model = load_checkpoint(opts.checkpoint)

    if os.path.isfile(opts.data_dir):
        inputs = [(opts.data_dir, data.strip_suffix(os.path.basename(opts.data_dir)))]
        _require(inputs[0][1], f"unrecognized volume suffix: {opts.data_dir}")
    else:
        _require(os.path.isdir(opts.data_dir), f"no such file or directory: {opts.data_dir}")
        root = opts.data_dir
        if os.path.isdir(os.path.join(root, "images")):
            root = os.path.join(root, "images")
        elif os.path.isdir(os.path.join(root, "imagesTr")):
            root = os.path.join(root, "imagesTr")
        inputs = data.discover_images(root)
        _require(inputs, f"no volume files found under {root}")

    os.makedirs(opts.out_dir, exist_ok=True)
    threads = thread_count()
    for path, stem in inputs:
        image = data.normalize_volume(data.load_volume(path, "image"))
        mask = predict_volume(model, image, batch_size=opts.batch_size, threads=threads)
        for z in range(image.depth):
            volume_io.write_mask_png(
                os.path.join(opts.out_dir, f"{stem}_{z}.png"), mask[:, :, z].astype(np.uint8)
            )
        volume_io.write_hvol(os.path.join(opts.out_dir, f"{stem}_mask.hvol"), mask, "mask")
        print(f"{stem}: wrote {image.depth} slice masks")
    return 0


def _mask_stem(stem):
    return stem[: -len("_mask")] if stem.endswith("_mask") else stem


def _collect_masks(path, role):
    """Map stem -> file path for one file or every volume in a directory."""
    if os.path.isfile(path):
        stem = data.strip_suffix(os.path.basename(path))
        _require(stem, f"unrecognized volume suffix: {path}")
        return {_mask_stem(stem): path}
    _require(os.path.isdir(path), f"no such file or directory: {path}")
    found = data.discover_images(path)
    _require(found, f"no {role} volumes found under {path}")
    return {_mask_stem(stem): p for p, stem in found}


def cmd_evaluate(opts):
    _require(opts.out_dir, "--out-dir is required")
    preds = _collect_masks(opts.pred, "prediction")
    truths = _collect_masks(opts.truth, "ground-truth")
    missing = sorted(set(preds) - set(truths))
    _require(not missing, f"no ground truth for volume(s): {', '.join(missing)}")

    rows = []
    for stem in sorted(preds):
        pred = data.load_volume(preds[stem], "mask")
        truth = data.load_volume(truths[stem], "mask")
        if pred.shape != truth.shape:
            raise CliError(
                f"{stem}: prediction shape {pred.shape} does not match ground truth {truth.shape}"
            )
        for z in range(pred.depth):
            counts = metrics.confusion_counts(
                pred.voxels[:, :, z].astype(np.uint8), truth.voxels[:, :, z].astype(np.uint8)
            )
            rows.append((stem, z, metrics.compute_metrics(counts)))

    stats = metrics.aggregate_stats([vec for _, _, vec in rows])
    os.makedirs(opts.out_dir, exist_ok=True)
    metrics.write_slice_csv(os.path.join(opts.out_dir, "slices.csv"), rows)
    metrics.write_aggregate_csv(os.path.join(opts.out_dir, "metrics.csv"), stats, len(rows))
    report = metrics.format_report(stats)
    with open(os.path.join(opts.out_dir, "report.txt"), "w") as f:
        f.write(report)
    print(report, end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cardioseg",
        description="Heart MRI segmentation: train, predict, and evaluate encoder-decoder models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *names):
        if "config" in names:
            p.add_argument("--config", help="flat key=value config file; flags override")
        if "model" in names:
            p.add_argument("--nf", type=int, help="base filter count")
            p.add_argument("--ch", type=int, help="input channels (odd; adjacent slices)")
            p.add_argument("--depth", type=int, help="encoder/decoder levels")
        if "train" in names:
            p.add_argument("--epochs", type=int)
            p.add_argument("--batch-size", type=int, dest="batch_size")
            p.add_argument("--lr", type=float)
            p.add_argument("--split", help="train,val,test volume counts or ratio")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", dest="out_dir")

    p_train = sub.add_parser("train", help="train a model on paired image/mask volumes")
    p_train.add_argument("--data-dir", dest="data_dir", help="directory with images/ and masks/")
    add_common(p_train, "config", "model", "train")
    p_train.add_argument("--plots", action="store_true", help="also write loss/dice curve plots")
    p_train.set_defaults(func=cmd_train)

    p_predict = sub.add_parser("predict", help="segment volumes with a trained checkpoint")
    p_predict.add_argument("--checkpoint")
    p_predict.add_argument("--data-dir", dest="data_dir", help="volume file or directory")
    p_predict.add_argument("--batch-size", type=int, dest="batch_size")
    add_common(p_predict, "config")
    p_predict.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("evaluate", help="score predicted masks against ground truth")
    p_eval.add_argument("pred", help="predicted mask volume file or directory")
    p_eval.add_argument("truth", help="ground-truth mask volume file or directory")
    add_common(p_eval, "config")
    p_eval.set_defaults(func=cmd_evaluate)

    p_synth = sub.add_parser("synth", help="generate a synthetic phantom dataset")
    p_synth.add_argument("--count", type=int, help="number of volumes")
    p_synth.add_argument("--dims", help="H,W,D of each volume")
    add_common(p_synth, "config")
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        return args.func(opts)
    except (CliError, VolumeFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
