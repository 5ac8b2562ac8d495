#!/usr/bin/env python3
"""Assemble MNIST IDX files from package-bundled MNIST samples.

The canonical MNIST mirrors are not always reachable, but two widely used
packages ship real MNIST digits:

  * mlxtend (PyPI)  -- 5,000 digits sampled from the MNIST training set
  * mnist   (npm)   -- 10,000 MNIST digits stored as normalised JSON arrays

The mlxtend sample becomes the training split and the npm digits become the
test split. Test digits that are byte-identical to a training digit are
dropped so the two pools stay disjoint. Output is written in the standard IDX
layout (magics 0x00000803 / 0x00000801), so a directory holding the original
MNIST files can be used interchangeably.

Usage: tools/fetch_mnist.py [--out data/mnist]
"""

import argparse
import gzip
import io
import json
import pathlib
import struct
import subprocess
import sys
import tarfile
import tempfile
import zipfile


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def fetch_mlxtend(workdir):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet",
         "-d", str(workdir), "mlxtend"],
        check=True)
    wheel = next(pathlib.Path(workdir).glob("mlxtend-*.whl"))
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    images, labels = [], []
    for line in raw.decode().strip().splitlines():
        fields = [int(float(v)) for v in line.split(",")]
        images.append(fields[:784])
        labels.append(fields[784])
    return images, labels


def fetch_npm_mnist(workdir):
    subprocess.run(["npm", "pack", "--silent", "mnist"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = next(pathlib.Path(workdir).glob("mnist-*.tgz"))
    images, labels = [], []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            flat = json.load(io.TextIOWrapper(member))["data"]
            for k in range(0, len(flat), 784):
                images.append([round(v * 255) for v in flat[k:k + 784]])
                labels.append(digit)
    return images, labels


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/mnist")
    args = parser.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        train_x, train_y = fetch_mlxtend(tmp)
        test_x, test_y = fetch_npm_mnist(tmp)

    seen = {bytes(img) for img in train_x}
    kept = [(x, y) for x, y in zip(test_x, test_y) if bytes(x) not in seen]
    test_x = [x for x, _ in kept]
    test_y = [y for _, y in kept]

    write_idx_images(out / "train-images-idx3-ubyte", train_x)
    write_idx_labels(out / "train-labels-idx1-ubyte", train_y)
    write_idx_images(out / "t10k-images-idx3-ubyte", test_x)
    write_idx_labels(out / "t10k-labels-idx1-ubyte", test_y)
    print(f"wrote {len(train_x)} train and {len(test_x)} test digits to {out}")


if __name__ == "__main__":
    main()
