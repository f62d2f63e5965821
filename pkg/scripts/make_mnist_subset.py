"""Write the 5000-digit MNIST subset bundled with mlxtend as gzipped IDX files.

    python scripts/make_mnist_subset.py [--out data]

Needs the optional ``data`` extra (mlxtend).  The files land at
``<out>/mnist5k-images-idx3-ubyte.gz`` and ``<out>/mnist5k-labels-idx1-ubyte.gz``.
"""

import argparse
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from skyrmion_rc.encoding import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    X, y = mnist_data()
    images = X.reshape(-1, 28, 28).astype(np.uint8)
    write_idx(out / "mnist5k-images-idx3-ubyte.gz", images, IDX_IMAGES_MAGIC)
    write_idx(out / "mnist5k-labels-idx1-ubyte.gz", y.astype(np.uint8), IDX_LABELS_MAGIC)
    print(f"wrote {len(y)} digits to {out}")


if __name__ == "__main__":
    main()
