"""Volumes, slice-stack extraction, dataset splits, and synthetic data."""

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import volume_io
from .tensor import Rng

VOLUME_SUFFIXES = (".nii.gz", ".nii", ".hvol")


@dataclass
class Volume:
    """A 3-D scalar field indexed [H, W, D] with D the slice axis."""

    voxels: np.ndarray
    kind: str
    source_id: str

    def __post_init__(self):
        if self.kind not in ("image", "mask"):
            raise ValueError(f"unknown volume kind {self.kind!r}")
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ValueError(f"expected a 3-D volume, got shape {self.voxels.shape}")
        if self.kind == "mask" and not np.all((self.voxels == 0) | (self.voxels == 1)):
            raise ValueError(f"mask volume {self.source_id!r} has values outside {{0, 1}}")

    @property
    def shape(self):
        return self.voxels.shape

    @property
    def depth(self):
        return self.voxels.shape[2]


@dataclass
class SliceStack:
    """One training sample: a stack of CH adjacent slices around a center.

    pixels is [H, W, CH]; label is the binary [H, W] mask of the center
    slice, or None for inference-only samples.
    """

    pixels: np.ndarray
    label: Optional[np.ndarray]
    volume_id: str
    center: int


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)


def normalize_volume(volume: Volume) -> Volume:
    """Min-max normalize an image volume to [0, 1].

    A constant volume maps to all zeros. Masks are already categorical
    and must not be rescaled.
    """
    if volume.kind != "image":
        raise ValueError("only image volumes are normalized")
    v = volume.voxels
    lo = float(v.min())
    hi = float(v.max())
    if hi > lo:
        out = (v - lo) / (hi - lo)
    else:
        out = np.zeros_like(v)
    return Volume(out.astype(np.float32), "image", volume.source_id)


def stack_indices(center, depth, ch):
    """Slice indices for a CH-stack around center, clamped to [0, depth)."""
    if ch < 1 or ch % 2 == 0:
        raise ValueError(f"ch must be a positive odd number, got {ch}")
    if not 0 <= center < depth:
        raise ValueError(f"center {center} out of range for depth {depth}")
    half = ch // 2
    return [min(max(center + offset, 0), depth - 1) for offset in range(-half, half + 1)]


def extract_slice_stack(image: Volume, mask: Optional[Volume], center, ch) -> SliceStack:
    """Build the CH-channel sample centered on one slice.

    Neighbor indices past either end of the volume are clamped, so edge
    slices repeat their nearest existing neighbor.
    """
    if image.kind != "image":
        raise ValueError("first volume must be an image")
    idx = stack_indices(center, image.depth, ch)
    pixels = np.ascontiguousarray(image.voxels[:, :, idx])
    label = None
    if mask is not None:
        if mask.kind != "mask":
            raise ValueError("second volume must be a mask")
        if mask.shape != image.shape:
            raise ValueError(f"mask shape {mask.shape} does not match image shape {image.shape}")
        label = mask.voxels[:, :, center].astype(np.uint8)
    return SliceStack(pixels, label, image.source_id, center)


def volume_slices(image: Volume, mask: Optional[Volume], ch):
    """All slice stacks of a volume, in slice order."""
    return [extract_slice_stack(image, mask, z, ch) for z in range(image.depth)]


class SliceDataset:
    """Slice-level view over (image, mask) volume pairs.

    Samples are extracted lazily so large cohorts with wide stacks do
    not hold every stacked copy in memory at once.
    """

    def __init__(self, pairs, ch):
        if ch < 1 or ch % 2 == 0:
            raise ValueError(f"ch must be a positive odd number, got {ch}")
        self.pairs = list(pairs)
        self.ch = ch
        self.index = []
        for v, (image, mask) in enumerate(self.pairs):
            if mask is not None and mask.shape != image.shape:
                raise ValueError(
                    f"mask shape {mask.shape} does not match image shape "
                    f"{image.shape} for {image.source_id!r}"
                )
            self.index.extend((v, z) for z in range(image.depth))

    def __len__(self):
        return len(self.index)

    def __getitem__(self, i) -> SliceStack:
        v, z = self.index[i]
        image, mask = self.pairs[v]
        return extract_slice_stack(image, mask, z, self.ch)


def make_dataset_split(ids, counts, rng: Rng) -> DatasetSplit:
    """Shuffle volume ids and cut them into train/val/test groups.

    counts is (n_train, n_val, n_test) and must cover every id exactly
    once. The shuffle is over the sorted ids, so the split depends only
    on the id set and the rng state.
    """
    ids = sorted(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("volume ids must be unique")
    n_train, n_val, n_test = counts
    if min(counts) < 0 or n_train + n_val + n_test != len(ids):
        raise ValueError(f"split counts {counts} do not partition {len(ids)} volumes")
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
    )


def gen_synthetic(count, dims, rng: Rng):
    """Generate ellipsoid phantom volumes with paired masks.

    Each volume holds one bright ellipsoid (intensity 0.7) on a dark
    background (0.15) with additive Gaussian noise, clipped to [0, 1].
    Returns a list of (image, mask) Volume pairs with ids synth000,
    synth001, ...
    """
    h, w, d = dims
    if h % 16 != 0 or w % 16 != 0:
        raise ValueError(f"H and W must be divisible by 16, got {(h, w)}")
    if d < 1 or count < 1:
        raise ValueError("count and depth must be positive")
    x = np.arange(h, dtype=np.float64)[:, None, None]
    y = np.arange(w, dtype=np.float64)[None, :, None]
    z = np.arange(d, dtype=np.float64)[None, None, :]
    pairs = []
    for i in range(count):
        cx = rng.uniform_scalar(0.3, 0.7) * h
        cy = rng.uniform_scalar(0.3, 0.7) * w
        cz = rng.uniform_scalar(0.3, 0.7) * d
        rx = rng.uniform_scalar(h / 8.0, h / 5.0)
        ry = rng.uniform_scalar(w / 8.0, w / 5.0)
        rz = max(0.8, rng.uniform_scalar(0.3, 0.45) * d)
        mask = (
            ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 + ((z - cz) / rz) ** 2
        ) <= 1.0
        mask = mask.astype(np.float32)
        noise = rng.normal((h, w, d), std=0.03, dtype=np.float32)
        image = np.clip(0.15 + 0.55 * mask + noise, 0.0, 1.0).astype(np.float32)
        vid = f"synth{i:03d}"
        pairs.append((Volume(image, "image", vid), Volume(mask, "mask", vid)))
    return pairs


def strip_suffix(name):
    """File stem with any volume suffix removed; None if not a volume file."""
    for suffix in VOLUME_SUFFIXES:
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return None


def load_volume(path, kind) -> Volume:
    """Load a volume file (.hvol, .nii, .nii.gz) as the given kind."""
    name = os.path.basename(path)
    stem = strip_suffix(name)
    if stem is None:
        raise volume_io.VolumeFormatError(f"{path}: unrecognized volume suffix")
    if name.endswith(".hvol"):
        voxels, stored_kind = volume_io.read_hvol(path)
        if stored_kind != kind:
            raise volume_io.VolumeFormatError(
                f"{path}: file is a {stored_kind} volume, expected {kind}"
            )
    else:
        voxels = volume_io.read_nifti(path)
        if kind == "mask":
            voxels = (voxels > 0.5).astype(np.float32)
    return Volume(voxels, kind, stem)


def _list_volume_files(directory):
    out = {}
    for name in sorted(os.listdir(directory)):
        if name.startswith(".") or name.startswith("_"):
            continue
        stem = strip_suffix(name)
        if stem is None:
            continue
        if stem in out:
            raise ValueError(f"duplicate volume stem {stem!r} in {directory}")
        out[stem] = os.path.join(directory, name)
    return out


def _pair_dirs(data_dir):
    for images, masks in (("images", "masks"), ("imagesTr", "labelsTr")):
        image_dir = os.path.join(data_dir, images)
        mask_dir = os.path.join(data_dir, masks)
        if os.path.isdir(image_dir) and os.path.isdir(mask_dir):
            return image_dir, mask_dir
    raise FileNotFoundError(
        f"{data_dir}: expected images/ and masks/ (or imagesTr/ and labelsTr/) subdirectories"
    )


def discover_pairs(data_dir):
    """Matched (image_path, mask_path, stem) triples under a dataset dir."""
    image_dir, mask_dir = _pair_dirs(data_dir)
    images = _list_volume_files(image_dir)
    masks = _list_volume_files(mask_dir)
    missing = sorted(set(images) - set(masks))
    if missing:
        raise FileNotFoundError(f"no mask for volume(s): {', '.join(missing)}")
    return [(images[stem], masks[stem], stem) for stem in sorted(images)]


def discover_images(directory):
    """(image_path, stem) pairs for every volume file in a directory."""
    files = _list_volume_files(directory)
    return [(files[stem], stem) for stem in sorted(files)]
