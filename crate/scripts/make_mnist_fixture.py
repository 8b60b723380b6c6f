"""Rebuild data/mnist-5k from the 5000-digit MNIST sample bundled with mlxtend.

Usage: pip download mlxtend --no-deps -d /tmp/dl
       python3 scripts/make_mnist_fixture.py /tmp/dl/mlxtend-*.whl data/mnist-5k

Writes gzip-compressed IDX files using the official MNIST file names: the
first 4000 shuffled digits become the training file, the last 1000 the test
file.
"""
import gzip
import io
import random
import struct
import sys
import zipfile
from pathlib import Path


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main(wheel, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    z = zipfile.ZipFile(wheel)
    text = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = [line.split(",") for line in text.strip().split("\n")]
    random.Random(1998).shuffle(rows)
    images = [bytes(int(float(v)) for v in r[:784]) for r in rows]
    labels = [int(r[784]) for r in rows]
    splits = {"train": (0, 4000), "t10k": (4000, 5000)}
    for name, (a, b) in splits.items():
        n = b - a
        write_idx(out / f"{name}-images-idx3-ubyte.gz", 0x803, [n, 28, 28], b"".join(images[a:b]))
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", 0x801, [n], bytes(labels[a:b]))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
