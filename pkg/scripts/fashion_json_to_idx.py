"""Rebuild Fashion-MNIST IDX files from the per-class JSON dumps of the
``fashion-mnist`` npm package (``src/clothes/<label>.json``).

The dumps merge both splits. Each class holds 7000 images; class 0 carries
two empty separator rows, one of them at index 1000, which marks the
split boundary: the first 1000 images of every class are taken as the test
split, the remaining 6000 as the training split.

    python scripts/fashion_json_to_idx.py <clothes-dir> <out-dir>
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np


def _write_idx(path, images, labels_path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    train_x, train_y, test_x, test_y = [], [], [], []
    for label in range(10):
        rows = json.loads((src / f"{label}.json").read_text())["data"]
        rows = [r for r in rows if len(r) == 784]
        arr = np.asarray(rows, dtype=np.uint8)
        test_x.append(arr[:1000])
        train_x.append(arr[1000:])
        test_y.append(np.full(1000, label, np.uint8))
        train_y.append(np.full(len(arr) - 1000, label, np.uint8))
    rng = np.random.default_rng(0)
    for name, xs, ys in (("train", train_x, train_y), ("t10k", test_x, test_y)):
        x, y = np.concatenate(xs), np.concatenate(ys)
        order = rng.permutation(len(x))
        _write_idx(dst / f"{name}-images-idx3-ubyte", x[order],
                   dst / f"{name}-labels-idx1-ubyte", y[order])
        print(f"{name}: {len(x)} images")


if __name__ == "__main__":
    main(*sys.argv[1:3])
