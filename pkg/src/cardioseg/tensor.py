"""Array primitives and the seeded random source.

All tensors are plain numpy arrays in row-major (C) order, so element
(i0, ..., ik) lives at the usual flat offset and round-trips exactly.
Training runs in float32; gradient checking promotes everything to
float64 because finite-difference tolerances are unreachable in 32 bits.
"""

import hashlib

import numpy as np

DTYPE = np.float32
CHECK_DTYPE = np.float64


def _tag_to_int(tag):
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Deterministic random source backed by numpy's PCG64 generator.

    PCG64 is a documented, platform-independent bit generator: the same
    seed produces the same stream everywhere. ``derive`` builds an
    independent child stream from the parent key plus arbitrary tags
    (ints or strings), so subsystems such as weight init, shuffling and
    dropout each own a stream that the others cannot perturb.
    """

    def __init__(self, seed, _key=None):
        self.seed = int(seed)
        self._key = tuple(_key) if _key is not None else (self.seed,)
        entropy = [k & 0xFFFFFFFFFFFFFFFF for k in self._key]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def derive(self, *tags):
        """Child Rng keyed by this Rng's key plus the given tags."""
        key = self._key + tuple(_tag_to_int(t) for t in tags)
        return Rng(self.seed, _key=key)

    def normal(self, shape, std=1.0, dtype=DTYPE):
        out = self._gen.standard_normal(size=shape, dtype=dtype)
        if std != 1.0:
            out *= np.asarray(std, dtype=dtype)
        return out

    def uniform(self, shape, low=0.0, high=1.0, dtype=DTYPE):
        out = self._gen.random(size=shape, dtype=dtype)
        if low != 0.0 or high != 1.0:
            out = (out * (high - low) + low).astype(dtype)
        return out

    def uniform_scalar(self, low, high):
        return float(low + (high - low) * self._gen.random())

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high=high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)


def _check_shape(shape):
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d < 1 for d in shape):
        raise ValueError(f"invalid shape {shape}: all dimensions must be >= 1")
    return shape


def alloc_tensor(shape, fill=0.0, dtype=DTYPE):
    """New tensor of the given shape with every element equal to fill."""
    return np.full(_check_shape(shape), fill, dtype=dtype)


def he_init(shape, fan_in, rng, dtype=DTYPE):
    """Zero-mean normal draw with std sqrt(2/fan_in), for ReLU stacks."""
    shape = _check_shape(shape)
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(shape, std=np.sqrt(2.0 / fan_in), dtype=dtype)


def pad2d(x, pad, value=0.0):
    """Pad a [H, W, C] tensor by `pad` on each spatial border."""
    if x.ndim != 3:
        raise ValueError(f"pad2d expects rank 3, got rank {x.ndim}")
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    if pad == 0:
        return x
    return np.pad(x, ((pad, pad), (pad, pad), (0, 0)), constant_values=value)


def concat_channels(a, b):
    """Join two tensors along the channel (last) axis, a's channels first."""
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"spatial shapes differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=-1)
