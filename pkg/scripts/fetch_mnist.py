"""Build the MNIST subset used by the image-track experiments.

The sandbox only reaches PyPI, so the digits are taken from the
``mnist-hub`` wheel, which ships the classic ``mnist.pkl.gz``. The wheel's
sha256 is checked against the digest PyPI publishes before anything is
unpickled. Output is four gzipped IDX files under ``data/mnist/``.

    python scripts/fetch_mnist.py --n-train 10000 --n-test 2000
"""

import argparse
import gzip
import hashlib
import io
import json
import pickle
import sys
import urllib.request
import zipfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from araclf.harness.data import write_idx_images  # noqa: E402

PACKAGE = "mnist-hub"
VERSION = "0.1.4"
MEMBER = "mnist/data/mnist.pkl.gz"


def _wheel_url():
    with urllib.request.urlopen(f"https://pypi.org/pypi/{PACKAGE}/json") as fh:
        meta = json.load(fh)
    for entry in meta["releases"][VERSION]:
        if entry["filename"].endswith(".whl"):
            return entry["url"], entry["digests"]["sha256"]
    raise RuntimeError("no wheel published for %s %s" % (PACKAGE, VERSION))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-train", type=int, default=10000)
    parser.add_argument("--n-test", type=int, default=2000)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data" / "mnist")
    args = parser.parse_args(argv)

    url, digest = _wheel_url()
    print(f"downloading {url}")
    with urllib.request.urlopen(url) as fh:
        blob = fh.read()
    if hashlib.sha256(blob).hexdigest() != digest:
        raise SystemExit("sha256 mismatch for downloaded wheel")

    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        raw = zf.read(MEMBER)
    with gzip.open(io.BytesIO(raw)) as fh:
        train, _valid, test = pickle.load(fh, encoding="latin1")

    args.out.mkdir(parents=True, exist_ok=True)
    for name, (images, labels), n in (("train", train, args.n_train), ("t10k", test, args.n_test)):
        pixels = np.rint(np.asarray(images[:n]) * 255.0).clip(0, 255).astype(np.uint8)
        write_idx_images(
            args.out / f"{name}-images-idx3-ubyte.gz",
            args.out / f"{name}-labels-idx1-ubyte.gz",
            pixels.reshape(-1, 28, 28),
            np.asarray(labels[:n], dtype=np.uint8),
        )
        print(f"{name}: {len(pixels)} images")


if __name__ == "__main__":
    main()
