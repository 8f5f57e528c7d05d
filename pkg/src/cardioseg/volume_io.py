"""Volume file formats: HVOL raw volumes, a NIfTI-1 subset, PNG masks.

All functions work on plain numpy arrays indexed [H, W, D]; the dataset
layer wraps them in typed containers.
"""

import gzip
import struct

import numpy as np
from PIL import Image

HVOL_MAGIC = b"HVOL1"

# NIfTI-1 datatype codes this reader accepts.
NIFTI_DTYPES = {4: "i2", 16: "f4"}


class VolumeFormatError(Exception):
    """A volume file is malformed or uses an unsupported encoding."""


def write_hvol(path, voxels, kind):
    """Write an [H, W, D] float32 array as an HVOL file.

    Layout: magic, one kind byte (0 image, 1 mask), three uint32 LE dims
    H, W, D, then float32 LE voxels in C order (H outer, D inner).
    """
    voxels = np.asarray(voxels)
    if voxels.ndim != 3:
        raise ValueError(f"expected a 3-D volume, got shape {voxels.shape}")
    if kind not in ("image", "mask"):
        raise ValueError(f"unknown volume kind {kind!r}")
    kind_byte = 0 if kind == "image" else 1
    if kind == "mask" and not np.all((voxels == 0) | (voxels == 1)):
        raise ValueError("mask volumes must contain only 0 and 1")
    h, w, d = voxels.shape
    with open(path, "wb") as f:
        f.write(HVOL_MAGIC)
        f.write(struct.pack("<BIII", kind_byte, h, w, d))
        f.write(np.ascontiguousarray(voxels, dtype="<f4").tobytes())


def read_hvol(path):
    """Read an HVOL file; returns (voxels [H, W, D] float32, kind)."""
    with open(path, "rb") as f:
        raw = f.read()
    header_len = len(HVOL_MAGIC) + 13
    if len(raw) < header_len:
        raise VolumeFormatError(f"{path}: truncated header")
    if raw[: len(HVOL_MAGIC)] != HVOL_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {raw[:5]!r}")
    kind_byte, h, w, d = struct.unpack_from("<BIII", raw, len(HVOL_MAGIC))
    if kind_byte not in (0, 1):
        raise VolumeFormatError(f"{path}: bad kind byte {kind_byte}")
    need = h * w * d * 4
    body = raw[header_len:]
    if len(body) < need:
        raise VolumeFormatError(f"{path}: expected {need} data bytes, found {len(body)}")
    if len(body) > need:
        raise VolumeFormatError(f"{path}: {len(body) - need} trailing bytes")
    voxels = np.frombuffer(body, dtype="<f4").reshape(h, w, d)
    return voxels.astype(np.float32, copy=True), ("image" if kind_byte == 0 else "mask")


def _read_maybe_gzip(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_nifti(path):
    """Read a single-file NIfTI-1 volume (.nii or .nii.gz).

    Supports 3-D volumes with datatype int16 or float32, either byte
    order. Returns voxels as [H, W, D] float32 with H the fastest-moving
    on-disk axis.
    """
    raw = _read_maybe_gzip(path)
    if len(raw) < 348:
        raise VolumeFormatError(f"{path}: header truncated ({len(raw)} bytes)")
    if struct.unpack_from("<i", raw, 0)[0] == 348:
        endian = "<"
    elif struct.unpack_from(">i", raw, 0)[0] == 348:
        endian = ">"
    else:
        raise VolumeFormatError(f"{path}: not a NIfTI-1 file (bad header size)")
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise VolumeFormatError(f"{path}: unsupported magic {magic!r}")
    dim = struct.unpack_from(endian + "8h", raw, 40)
    if dim[0] != 3:
        raise VolumeFormatError(f"{path}: expected a 3-D volume, dim[0] is {dim[0]}")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if min(nx, ny, nz) < 1:
        raise VolumeFormatError(f"{path}: bad dimensions {(nx, ny, nz)}")
    datatype = struct.unpack_from(endian + "h", raw, 70)[0]
    if datatype not in NIFTI_DTYPES:
        raise VolumeFormatError(f"{path}: unsupported datatype code {datatype}")
    np_dtype = np.dtype(endian + NIFTI_DTYPES[datatype])
    vox_offset = int(struct.unpack_from(endian + "f", raw, 108)[0])
    if vox_offset < 348:
        raise VolumeFormatError(f"{path}: bad vox_offset {vox_offset}")
    count = nx * ny * nz
    need = vox_offset + count * np_dtype.itemsize
    if len(raw) < need:
        raise VolumeFormatError(f"{path}: data truncated ({len(raw)} of {need} bytes)")
    flat = np.frombuffer(raw, dtype=np_dtype, count=count, offset=vox_offset)
    # On disk x moves fastest; reorder to [x, y, z] = [H, W, D].
    voxels = flat.reshape(nz, ny, nx).transpose(2, 1, 0)
    return np.ascontiguousarray(voxels, dtype=np.float32)


def write_mask_png(path, mask):
    """Write a binary [H, W] mask as an 8-bit grayscale PNG (0 or 255)."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must contain only 0 and 1")
    Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def read_mask_png(path):
    """Read an 8-bit grayscale mask PNG back to a binary [H, W] array."""
    with Image.open(path) as img:
        if img.mode != "L":
            raise VolumeFormatError(f"{path}: expected 8-bit grayscale, got mode {img.mode}")
        arr = np.asarray(img)
    if not np.all((arr == 0) | (arr == 255)):
        raise VolumeFormatError(f"{path}: mask PNG has values other than 0 and 255")
    return (arr // 255).astype(np.uint8)
