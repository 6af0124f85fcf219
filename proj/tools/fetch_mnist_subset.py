#!/usr/bin/env python3
"""Write a 5,000-digit MNIST subset in the standard IDX layout.

The digits come from the `mnist_5k.csv.gz` file shipped inside the mlxtend
wheel (500 images per class, originally drawn from the MNIST training set).
The first 400 images of each class go to the train split, the remaining 100
to the test split. Both splits are interleaved by class so the on-disk order
is balanced before shuffling.

Usage: fetch_mnist_subset.py OUT_DIR [--wheel PATH]
"""

import argparse
import glob
import gzip
import os
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TRAIN_PER_CLASS = 400


def find_wheel(explicit):
    if explicit:
        return explicit
    tmp = tempfile.mkdtemp(prefix="mnist-subset-")
    subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps",
                           "mlxtend==0.24.0", "-d", tmp])
    return glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--wheel")
    args = ap.parse_args()

    with zipfile.ZipFile(find_wheel(args.wheel)) as z:
        rows = gzip.decompress(z.read(MEMBER)).decode().splitlines()

    by_class = {k: [] for k in range(10)}
    for line in rows:
        values = [int(v) for v in line.split(",")]
        by_class[values[-1]].append(bytes(values[:-1]))

    splits = {"train": [], "test": []}
    for k in range(10):
        splits["train"].append(by_class[k][:TRAIN_PER_CLASS])
        splits["test"].append(by_class[k][TRAIN_PER_CLASS:])

    os.makedirs(args.out_dir, exist_ok=True)
    prefixes = {"train": "train", "test": "t10k"}
    for split, per_class in splits.items():
        images, labels = [], []
        for i in range(len(per_class[0])):
            for k in range(10):
                images.append(per_class[k][i])
                labels.append(k)
        p = prefixes[split]
        write_idx(os.path.join(args.out_dir, f"{p}-images-idx3-ubyte.gz"), 0x803,
                  [len(images), 28, 28], b"".join(images))
        write_idx(os.path.join(args.out_dir, f"{p}-labels-idx1-ubyte.gz"), 0x801,
                  [len(labels)], bytes(labels))
        print(f"{split}: {len(images)} images")


if __name__ == "__main__":
    main()
