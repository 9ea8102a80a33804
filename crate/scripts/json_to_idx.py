#!/usr/bin/env python3
"""Convert the npm `fashion-mnist` and `mnist` JSON packages to IDX files.

Usage: json_to_idx.py FASHION_CLOTHES_DIR MNIST_DIGITS_DIR OUT_DIR

Fashion-MNIST JSON holds raw 0-255 pixels as `{"data": [[784 ints], ...]}`.
The mnist package holds `{"data": [flat floats in 0..1]}` rounded to three
decimals, so bytes are recovered as round(v * 255).

Writes, with a fixed shuffle:
  fashion-train-images.idx / fashion-train-labels.idx  (first 6000 per class)
  fashion-test-images.idx  / fashion-test-labels.idx   (remaining per class)
  mnist-test-images.idx    / mnist-test-labels.idx     (everything)
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np

TRAIN_PER_CLASS = 6000


def write_images(path, images):
    n = images.shape[0]
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_fashion(d):
    per_class = []
    for c in range(10):
        rows = json.loads((d / f"{c}.json").read_text())["data"]
        # class 0 carries a couple of empty placeholder rows
        rows = [r for r in rows if len(r) == 784]
        per_class.append(np.asarray(rows, dtype=np.int64).reshape(-1, 784))
    return per_class


def load_mnist(d):
    per_class = []
    for c in range(10):
        flat = np.asarray(json.loads((d / f"{c}.json").read_text())["data"], dtype=np.float64)
        per_class.append(np.rint(flat * 255.0).astype(np.int64).reshape(-1, 784))
    return per_class


def stack(parts, rng):
    x = np.concatenate([p for p, _ in parts])
    y = np.concatenate([np.full(len(p), c) for p, c in parts])
    order = rng.permutation(len(x))
    return np.clip(x[order], 0, 255), y[order]


def main():
    if len(sys.argv) != 4:
        sys.exit(__doc__)
    fashion_dir, mnist_dir, out = map(Path, sys.argv[1:])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)

    fashion = load_fashion(fashion_dir)
    train = [(p[:TRAIN_PER_CLASS], c) for c, p in enumerate(fashion)]
    test = [(p[TRAIN_PER_CLASS:], c) for c, p in enumerate(fashion)]
    for name, parts in (("fashion-train", train), ("fashion-test", test)):
        x, y = stack(parts, rng)
        write_images(out / f"{name}-images.idx", x)
        write_labels(out / f"{name}-labels.idx", y)
        print(f"{name}: {len(x)} images")

    x, y = stack([(p, c) for c, p in enumerate(load_mnist(mnist_dir))], rng)
    write_images(out / "mnist-test-images.idx", x)
    write_labels(out / "mnist-test-labels.idx", y)
    print(f"mnist-test: {len(x)} images")


if __name__ == "__main__":
    main()
