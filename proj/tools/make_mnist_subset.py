#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
#
# Rebuilds data/mnist-10k.tar.gz from the `mnist` npm package
# (https://www.npmjs.com/package/mnist, MIT), which redistributes 10000
# MNIST digits as per-class JSON files with pixels rounded to 3 decimals.
#
#   npm pack mnist && tar xzf mnist-*.tgz
#   python3 tools/make_mnist_subset.py package/src/digits data/mnist-10k.tar.gz
#
# Digits are interleaved round-robin across classes so that any contiguous
# slice is close to class-balanced. Pixel bytes are round(255 * value), which
# recovers the original 8-bit value exactly (rounding error < 0.13 grey level).

import io
import json
import struct
import sys
import tarfile
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print("usage: make_mnist_subset.py DIGITS_DIR OUT_TAR_GZ", file=sys.stderr)
        return 2
    digits_dir, out = Path(sys.argv[1]), Path(sys.argv[2])

    per_class = []
    for c in range(10):
        text = (digits_dir / f"{c}.json").read_text()
        data = json.loads(text)["data"]
        assert len(data) % 784 == 0
        per_class.append([data[i:i + 784] for i in range(0, len(data), 784)])

    images, labels = [], []
    cursor = [0] * 10
    while any(cursor[c] < len(per_class[c]) for c in range(10)):
        for c in range(10):
            if cursor[c] < len(per_class[c]):
                images.append(per_class[c][cursor[c]])
                labels.append(c)
                cursor[c] += 1

    n = len(images)
    img = bytearray(struct.pack(">IIII", 2051, n, 28, 28))
    for im in images:
        img.extend(min(255, max(0, round(255 * v))) for v in im)
    lab = bytearray(struct.pack(">II", 2049, n))
    lab.extend(labels)

    with tarfile.open(out, "w:gz") as tar:
        for name, payload in (("mnist-10k-images-idx3-ubyte", img),
                              ("mnist-10k-labels-idx1-ubyte", lab)):
            info = tarfile.TarInfo(name)
            info.size = len(payload)
            info.mtime = 0
            tar.addfile(info, io.BytesIO(bytes(payload)))
    print(f"wrote {n} digits to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
