#!/usr/bin/env python3
"""Build IDX files for MNIST from the `mnist` npm package (10,000 digits).

The package stores each class as a flat list of 28x28 intensities in [0, 1].
Images are split per class 80/20 into train and t10k files, so the split is
stratified and fixed by --seed.

    python3 tools/fetch_mnist.py --out data/mnist
    python3 tools/fetch_mnist.py --package /path/to/package --out data/mnist
"""

import argparse
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile

import numpy as np


def fetch_package(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    (tarball,) = workdir.glob("mnist-*.tgz")
    with tarfile.open(tarball) as tf:
        tf.extractall(workdir)
    return workdir / "package"


def load_digits(package: pathlib.Path):
    images, labels = [], []
    for digit in range(10):
        data = json.loads((package / "src" / "digits" / f"{digit}.json").read_text())["data"]
        arr = np.asarray(data, dtype=np.float64).reshape(-1, 28, 28)
        images.append(np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(len(arr), digit, dtype=np.uint8))
    return images, labels


def write_images(path: pathlib.Path, images: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.tobytes())


def write_labels(path: pathlib.Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--package", type=pathlib.Path, help="unpacked npm package (default: npm pack)")
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist"))
    ap.add_argument("--train-fraction", type=float, default=0.8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        package = args.package or fetch_package(pathlib.Path(tmp))
        images, labels = load_digits(package)

    rng = np.random.default_rng(args.seed)
    split = {"train": ([], []), "t10k": ([], [])}
    for img, lab in zip(images, labels):
        order = rng.permutation(len(img))
        cut = int(round(args.train_fraction * len(img)))
        for name, idx in (("train", order[:cut]), ("t10k", order[cut:])):
            split[name][0].append(img[idx])
            split[name][1].append(lab[idx])

    args.out.mkdir(parents=True, exist_ok=True)
    for name, (imgs, labs) in split.items():
        imgs, labs = np.concatenate(imgs), np.concatenate(labs)
        order = rng.permutation(len(imgs))
        write_images(args.out / f"{name}-images-idx3-ubyte", imgs[order])
        write_labels(args.out / f"{name}-labels-idx1-ubyte", labs[order])
        print(f"{name}: {len(imgs)} images")


if __name__ == "__main__":
    main()
