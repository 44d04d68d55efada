#!/usr/bin/env python3
"""Convert the per-class JSON dump of the npm `fashion-mnist` package to IDX.

    npm pack fashion-mnist@1.1.0 && tar xzf fashion-mnist-1.1.0.tgz
    python3 scripts/fashion_json_to_idx.py package/src/clothes OUT_DIR

The first 6000 images of each class go to the training files, the rest to
the test files. This is not the official 60k/10k partition.
"""

import argparse
import gzip
import json
import struct
from pathlib import Path

TRAIN_PER_CLASS = 6000


def write_images(path, images):
    with gzip.open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("src", type=Path, help="directory holding 0.json .. 9.json")
    ap.add_argument("out", type=Path)
    args = ap.parse_args()

    split = {"train": ([], []), "t10k": ([], [])}
    for label in range(10):
        rows = json.loads((args.src / f"{label}.json").read_text())["data"]
        empty = sum(1 for r in rows if not r)
        if empty:
            print(f"class {label}: skipping {empty} empty entries")
        rows = [r for r in rows if r]
        for i, row in enumerate(rows):
            if len(row) != 784 or not all(0 <= v <= 255 for v in row):
                raise SystemExit(f"class {label} row {i}: not a 28x28 byte image")
            imgs, labs = split["train" if i < TRAIN_PER_CLASS else "t10k"]
            imgs.append(row)
            labs.append(label)

    args.out.mkdir(parents=True, exist_ok=True)
    for name, (imgs, labs) in split.items():
        write_images(args.out / f"{name}-images-idx3-ubyte.gz", imgs)
        write_labels(args.out / f"{name}-labels-idx1-ubyte.gz", labs)
        print(f"{name}: {len(labs)} images")


if __name__ == "__main__":
    main()
