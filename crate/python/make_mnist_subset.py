"""Convert the 5000-image MNIST sample shipped inside the mlxtend wheel into
IDX files (the same format as the original MNIST distribution).

Usage:
    pip download --no-deps mlxtend -d /tmp/wheels
    python python/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist5k
"""

import gzip
import struct
import sys
import zipfile
from pathlib import Path


def main(wheel: str, out_dir: str) -> None:
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = [line.split(",") for line in raw.strip().splitlines()]
    images = bytearray()
    labels = bytearray()
    for row in rows:
        pixels = [int(float(v)) for v in row[:-1]]
        assert len(pixels) == 784
        images.extend(bytes(pixels))
        labels.append(int(float(row[-1])))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(rows)
    (out / "images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, n, 28, 28) + images)
    (out / "labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, n) + labels)
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
