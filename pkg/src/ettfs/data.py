"""Dataset readers, input encoders, and checkpoint persistence."""

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, FormatError
from .init_norm import InitScheme
from .layers import Network, parse_arch
from .neuron import AmosConfig

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

CKPT_MAGIC = b"ETTFSCKP"
CKPT_VERSION = 1


@dataclass
class IdxDataset:
    images: np.ndarray  # uint8 [N, H, W] (or [N, C, H, W] for CIFAR10)
    labels: np.ndarray  # uint8 [N]
    split: str = "train"

    def __len__(self):
        return len(self.labels)

    def subset(self, n):
        if n is None or n >= len(self):
            return self
        return IdxDataset(self.images[:n], self.labels[:n], self.split)


def _read_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, ndim, what):
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise FormatError(f"{what}: file truncated inside the magic number", len(raw))
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}", 0)
    if len(raw) < header:
        raise FormatError(f"{what}: file truncated inside the header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise FormatError(f"{what}: truncated, {need} bytes expected, {len(raw)} present", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=need - header, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split="train"):
    """Parse a big-endian IDX image file and its label file (``.gz`` accepted)."""
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, 3, "images")
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, 1, "labels")
    if len(images) != len(labels):
        raise FormatError(f"count mismatch: {len(images)} images but {len(labels)} labels", 4)
    return IdxDataset(images.copy(), labels.copy(), split)


def _find(data_dir, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        p = Path(data_dir) / name
        if p.exists():
            return p
    raise FileNotFoundError(f"{stem}[.gz] not found in {data_dir}")


def load_mnist_like(data_dir, split="train"):
    """MNIST or Fashion-MNIST from the standard file names in ``data_dir``."""
    prefix = "train" if split == "train" else "t10k"
    return load_idx(_find(data_dir, f"{prefix}-images-idx3-ubyte"),
                    _find(data_dir, f"{prefix}-labels-idx1-ubyte"), split)


def load_cifar10(data_dir, split="train"):
    """CIFAR10 binary batches (``data_batch_{1..5}.bin`` / ``test_batch.bin``)."""
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    images, labels = [], []
    for name in names:
        p = Path(data_dir) / name
        if not p.exists():
            p = Path(data_dir) / "cifar-10-batches-bin" / name
        raw = p.read_bytes()
        if len(raw) % 3073:
            raise FormatError(f"{name}: size is not a multiple of 3073", len(raw) - len(raw) % 3073)
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3073)
        labels.append(rec[:, 0])
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    return IdxDataset(np.concatenate(images), np.concatenate(labels), split)


def load_dataset(name, data_dir, split="train"):
    if name in ("mnist", "fashion"):
        return load_mnist_like(data_dir, split)
    if name == "cifar10":
        return load_cifar10(data_dir, split)
    raise ConfigError(f"unknown dataset {name!r}")


# -- encoders --------------------------------------------------------------

def _latency_batch(img, T, dtype):
    if T < 2:
        raise ConfigError("latency encoding needs T >= 2")
    times = np.floor((1.0 - img.astype(np.float64) / 255.0) * (T - 1)).astype(np.int64)
    out = np.zeros((T,) + img.shape, dtype=dtype)
    np.put_along_axis(out, times[None], 1, axis=0)
    return out


def _direct_batch(img, T, dtype):
    x = (img.astype(np.float64) / 255.0).astype(dtype)
    return np.broadcast_to(x, (T,) + x.shape).copy()


def encode_latency(images, T, dtype=np.float32):
    """One spike per pixel at ``t = floor((1 - p/255) * (T-1))``.

    Accepts ``[H, W]`` (returns ``[T, 1, H, W]``) or a batch ``[B, ...]``
    (returns ``[T, B, ...]``). Bright pixels fire first.
    """
    img = np.asarray(images)
    return _latency_batch(img[None] if img.ndim == 2 else img, T, dtype)


def encode_direct(images, T, dtype=np.float32):
    """Normalized intensity ``p/255`` repeated as input current at every step."""
    img = np.asarray(images)
    return _direct_batch(img[None] if img.ndim == 2 else img, T, dtype)


ENCODERS = {"latency": _latency_batch, "direct": _direct_batch}


def encode(images, T, kind="latency", input_shape=None, dtype=np.float32):
    """Encode a uint8 batch ``[B, ...]`` into ``[T, B, *input_shape]``."""
    if kind not in ENCODERS:
        raise ConfigError(f"unknown encoder {kind!r}")
    x = ENCODERS[kind](np.asarray(images), T, dtype)
    if input_shape is not None:
        x = x.reshape((T, x.shape[1]) + tuple(input_shape))
    return x


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(net, path, extra=None):
    """Write ``net`` in the ETTFSCKP container.

    Layout: 8-byte magic, u32 version, u32 metadata length, UTF-8 JSON
    metadata, then per synaptic layer the float32 little-endian blobs
    (``W, gamma, beta`` or, when fused, ``W_fused, B_fused``), each preceded
    by its u32 byte length. Header integers are little-endian.
    """
    fused = net.fused
    layers_meta, blobs = [], []
    for layer in net.synaptic_layers:
        arrays = ([layer.fused_weight, layer.fused_bias] if fused
                  else [layer.weight.data, layer.gamma.data, layer.beta.data])
        names = ["W_fused", "B_fused"] if fused else ["W", "gamma", "beta"]
        layers_meta.append({
            "kind": layer.spec.kind,
            "sigma_target": layer.sigma_target,
            "eps": layer.eps,
            "init_kind": layer.init_kind,
            "blobs": names,
            "shapes": [list(a.shape) for a in arrays],
        })
        blobs.extend(np.ascontiguousarray(a, dtype="<f4") for a in arrays)
    meta = {
        "arch": net.spec.arch,
        "input_shape": list(net.spec.input_shape),
        "T": net.T,
        "pool_kind": net.spec.pool_kind,
        "neuron": net.neuron.to_dict(),
        "norm": net.norm,
        "fused": fused,
        "init": (None if net.init_scheme is None else
                 {"kind": net.init_scheme.kind, "T": net.init_scheme.T,
                  "first_layer_kaiming": net.init_scheme.first_layer_kaiming}),
        "layers": layers_meta,
        "extra": extra or {},
    }
    text = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(text)))
        f.write(text)
        for b in blobs:
            raw = b.tobytes()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)


def load_checkpoint(path):
    """Rebuild a :class:`Network` from a checkpoint; ``net.meta`` holds the metadata."""
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError("not an ETTFS checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError("checkpoint truncated in header")
    version, mlen = struct.unpack("<II", raw[8:16])
    if version != CKPT_VERSION:
        raise CheckpointError(f"incompatible checkpoint version {version} (expected {CKPT_VERSION})")
    meta = json.loads(raw[16:16 + mlen].decode("utf-8"))
    spec = parse_arch(meta["arch"], tuple(meta["input_shape"]), meta["T"], meta["pool_kind"])
    net = Network(spec, AmosConfig(**meta["neuron"]), norm=meta["norm"])
    syn = net.synaptic_layers
    if len(syn) != len(meta["layers"]):
        raise CheckpointError("layer count in metadata does not match architecture")
    pos = 16 + mlen
    for layer, lm in zip(syn, meta["layers"]):
        arrays = []
        for shape in lm["shapes"]:
            if pos + 4 > len(raw):
                raise CheckpointError("checkpoint truncated before blob header")
            (nbytes,) = struct.unpack("<I", raw[pos:pos + 4])
            pos += 4
            expected = 4 * int(np.prod(shape))
            if nbytes != expected or pos + nbytes > len(raw):
                raise CheckpointError(
                    f"blob length mismatch: header says {nbytes}, shape {shape} needs {expected}")
            arrays.append(np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=pos)
                          .reshape(shape).astype(np.float32))
            pos += nbytes
        layer.sigma_target = lm["sigma_target"]
        layer.eps = lm["eps"]
        layer.init_kind = lm.get("init_kind")
        if meta["fused"]:
            layer.fused_weight, layer.fused_bias = arrays
        else:
            layer.weight.data, layer.gamma.data, layer.beta.data = arrays
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} trailing bytes after last blob")
    if meta.get("init"):
        net.init_scheme = InitScheme(**meta["init"])
    net.meta = meta
    return net
