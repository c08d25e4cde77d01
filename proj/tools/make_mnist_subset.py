#!/usr/bin/env python3
"""Convert the 5000-image MNIST sample bundled with mlxtend into IDX files.

The sample ships as a class-sorted CSV (784 pixel columns, then the label).
It is shuffled with a fixed seed and split into a 4000-image training file
and a 1000-image test file, written in the big-endian IDX ubyte layout.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist5k
"""
import argparse
import gzip
import io
import struct
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wheel")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=20201)
    ap.add_argument("--test-count", type=int, default=1000)
    args = ap.parse_args()

    with zipfile.ZipFile(args.wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    pixels, labels = pixels[order], labels[order]
    n_test = args.test_count

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", pixels[n_test:])
    write_labels(out / "train-labels-idx1-ubyte", labels[n_test:])
    write_images(out / "t10k-images-idx3-ubyte", pixels[:n_test])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[:n_test])
    print(f"wrote {len(labels) - n_test} train / {n_test} test images to {out}")


if __name__ == "__main__":
    main()
