"""The parameterized encoder-decoder segmentation network.

The two knobs are the base filter count (nf) and the number of input
channels (ch). Encoder level L runs a double conv-bn-relu block at
nf * 2^L filters and 2x2 max pools between levels; the bottleneck block
doubles filters once more and is the only place dropout applies. Each
decoder level upsamples x2 (nearest neighbor), concatenates the encoder
feature map saved at the same resolution, and runs another double
conv-bn-relu block. A 1x1 convolution to two channels plus an
elementwise sigmoid produces per-pixel, per-class scores in (0, 1).
"""

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from .tensor import DTYPE, Rng
from .layers import BatchNorm, Conv2D, Dropout, MaxPool2x2, ReLU, Sigmoid, Upsample2x2

CHECKPOINT_MAGIC = b"CSEG1"


@dataclass
class ModelConfig:
    nf: int
    ch: int
    depth: int = 4
    dropout_rate: float = 0.5
    num_classes: int = 2
    seed: int = 0

    def validate(self):
        if self.nf < 1:
            raise ValueError(f"nf must be >= 1, got {self.nf}")
        if self.ch < 1 or self.ch % 2 == 0:
            raise ValueError(f"ch must be a positive odd integer, got {self.ch}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.num_classes != 2:
            raise ValueError(f"num_classes must be 2, got {self.num_classes}")
        return self


class Mod1Block:
    """Double stage: (conv 3x3 -> batchnorm -> relu) twice, K filters out."""

    def __init__(self, in_channels, filters, rng, dtype=DTYPE):
        self.conv1 = Conv2D(in_channels, filters, 3, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm(filters, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2D(filters, filters, 3, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm(filters, dtype=dtype)
        self.relu2 = ReLU()

    def forward(self, x, train=True):
        h = self.relu1.forward(self.bn1.forward(self.conv1.forward(x), train))
        return self.relu2.forward(self.bn2.forward(self.conv2.forward(h), train))

    def backward(self, dout):
        d = self.conv2.backward(self.bn2.backward(self.relu2.backward(dout)))
        return self.conv1.backward(self.bn1.backward(self.relu1.backward(d)))

    def layers(self):
        return [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]


class Mod2Block:
    """Decoder stage: upsample x2, concatenate the skip tensor, then the
    same double conv-bn-relu stage as Mod1."""

    def __init__(self, in_channels, skip_channels, filters, rng, dtype=DTYPE):
        self.skip_channels = skip_channels
        self.up = Upsample2x2()
        self.conv1 = Conv2D(in_channels + skip_channels, filters, 3, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm(filters, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2D(filters, filters, 3, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm(filters, dtype=dtype)
        self.relu2 = ReLU()

    def forward(self, x, skip, train=True):
        u = self.up.forward(x)
        if u.shape[-3:-1] != skip.shape[-3:-1]:
            raise ValueError(
                f"skip spatial dims {skip.shape[-3:-1]} do not match upsampled {u.shape[-3:-1]}"
            )
        self._up_channels = u.shape[-1]
        h = np.concatenate([u, skip], axis=-1)
        h = self.relu1.forward(self.bn1.forward(self.conv1.forward(h), train))
        return self.relu2.forward(self.bn2.forward(self.conv2.forward(h), train))

    def backward(self, dout):
        d = self.conv2.backward(self.bn2.backward(self.relu2.backward(dout)))
        d = self.conv1.backward(self.bn1.backward(self.relu1.backward(d)))
        c = self._up_channels
        dx = self.up.backward(d[..., :c])
        dskip = d[..., c:]
        return dx, dskip

    def layers(self):
        return [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]


class Model:
    def __init__(self, config: ModelConfig, rng: Rng, dtype=DTYPE):
        config.validate()
        self.config = config
        self.dtype = dtype
        init = rng.derive("init")
        nf, depth = config.nf, config.depth

        self.encoders = []
        self.pools = []
        c_in = config.ch
        for level in range(depth):
            k = nf * (2 ** level)
            self.encoders.append(Mod1Block(c_in, k, init, dtype=dtype))
            self.pools.append(MaxPool2x2())
            c_in = k
        self.bottleneck = Mod1Block(c_in, nf * (2 ** depth), init, dtype=dtype)
        self.dropout = Dropout(config.dropout_rate, rng=rng.derive("dropout"))

        self.decoders = []
        c_in = nf * (2 ** depth)
        for level in reversed(range(depth)):
            k = nf * (2 ** level)
            self.decoders.append(Mod2Block(c_in, k, k, init, dtype=dtype))
            c_in = k
        self.decoders.reverse()  # decoders[level] pairs with encoders[level]

        self.head = Conv2D(nf, config.num_classes, 1, rng=init, dtype=dtype)
        self.out_act = Sigmoid()
        self._forward_mode = None

    def _check_input(self, x):
        if x.ndim not in (3, 4):
            raise ValueError(f"expected rank 3 or 4 input, got rank {x.ndim}")
        h, w, c = x.shape[-3:]
        if c != self.config.ch:
            raise ValueError(f"expected {self.config.ch} input channels, got {c}")
        div = 2 ** self.config.depth
        if h % div or w % div:
            raise ValueError(f"spatial dims {h}x{w} not divisible by {div}")

    def forward(self, x, train=False):
        """Per-pixel, per-class scores in (0, 1), same spatial dims as x."""
        self._check_input(x)
        h = x
        skips = []
        for enc, pool in zip(self.encoders, self.pools):
            h = enc.forward(h, train)
            skips.append(h)
            h = pool.forward(h)
        h = self.bottleneck.forward(h, train)
        h = self.dropout.forward(h, train)
        for level in reversed(range(self.config.depth)):
            h = self.decoders[level].forward(h, skips[level], train)
        scores = self.out_act.forward(self.head.forward(h))
        self._forward_mode = "train" if train else "infer"
        return scores

    def backward(self, dout):
        """Gradient of a scalar loss w.r.t. input, given dloss/dscores.

        Parameter gradients are left on the layers and exposed through
        ``parameters``. Requires a preceding train-mode forward pass.
        """
        if self._forward_mode != "train":
            raise RuntimeError("backward requires a preceding train-mode forward pass")
        d = self.head.backward(self.out_act.backward(dout))
        skip_grads = [None] * self.config.depth
        for level in range(self.config.depth):
            d, skip_grads[level] = self.decoders[level].backward(d)
        d = self.dropout.backward(d)
        d = self.bottleneck.backward(d)
        for level in reversed(range(self.config.depth)):
            d = self.pools[level].backward(d)
            d = d + skip_grads[level]
            d = self.encoders[level].backward(d)
        return d

    def _named_blocks(self):
        out = []
        for i, enc in enumerate(self.encoders):
            out.append((f"enc{i}", enc))
        out.append(("bottleneck", self.bottleneck))
        for i, dec in enumerate(self.decoders):
            out.append((f"dec{i}", dec))
        return out

    def parameters(self):
        """Ordered (name, value, grad) triples for every trainable tensor."""
        out = []
        for bname, block in self._named_blocks():
            for lname, layer in block.layers():
                out.extend(layer.params(f"{bname}.{lname}"))
        out.extend(self.head.params("head"))
        return out

    def parameter_count(self):
        return sum(int(v.size) for _, v, _ in self.parameters())

    def state_tensors(self):
        """Ordered (name, array) pairs: parameters plus batchnorm running stats."""
        out = []
        for bname, block in self._named_blocks():
            for lname, layer in block.layers():
                out.extend(layer.state(f"{bname}.{lname}"))
        out.extend(self.head.state("head"))
        return out


def build_model(config: ModelConfig, rng=None, dtype=DTYPE) -> Model:
    """Deterministically initialized model for the given config and seed."""
    if rng is None:
        rng = Rng(config.seed)
    return Model(config, rng, dtype=dtype)


def save_checkpoint(model: Model, path):
    """Write a checkpoint file.

    Layout: 5 magic bytes ``CSEG1``, a little-endian uint32 header
    length, a UTF-8 JSON header (config plus an ordered tensor index of
    name/shape/dtype), then each tensor's raw little-endian bytes in
    index order. Raw bytes make the round trip bit-exact.
    """
    tensors = model.state_tensors()
    header = {
        "format": "cardioseg-checkpoint",
        "version": 1,
        "config": asdict(model.config),
        "dtype": np.dtype(model.dtype).name,
        "tensors": [
            {"name": n, "shape": list(a.shape), "dtype": np.dtype(a.dtype).name}
            for n, a in tensors
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, a in tensors:
            f.write(np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<"), copy=False).tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    (hlen,) = struct.unpack_from("<I", data, 5)
    header = json.loads(data[9 : 9 + hlen].decode("utf-8"))
    if header.get("format") != "cardioseg-checkpoint":
        raise ValueError(f"unrecognized checkpoint header in {path}")
    config = ModelConfig(**header["config"])
    dtype = np.dtype(header["dtype"])
    model = build_model(config, dtype=dtype)
    offset = 9 + hlen
    by_name = dict(model.state_tensors())
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        edtype = np.dtype(entry["dtype"]).newbyteorder("<")
        nbytes = int(np.prod(shape)) * edtype.itemsize
        if offset + nbytes > len(data):
            raise ValueError(f"truncated checkpoint: {path}")
        arr = np.frombuffer(data, dtype=edtype, count=int(np.prod(shape)), offset=offset)
        arr = arr.astype(edtype.newbyteorder("="), copy=True).reshape(shape)
        offset += nbytes
        if name not in by_name:
            raise ValueError(f"unknown tensor {name!r} in checkpoint {path}")
        target = by_name[name]
        if target.shape != arr.shape:
            raise ValueError(f"shape mismatch for {name!r} in checkpoint {path}")
        target[...] = arr
    return model
