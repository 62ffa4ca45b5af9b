"""Cut the desk-scale MNIST subset out of the original IDX files: the first
10,000 training digits and the full 10,000-digit test set, gzip-compressed.

Usage: npm pack mnist-data && tar xzf mnist-data-*.tgz && python3 mnist_subset.py package/data OUTDIR
"""
import gzip
import struct
import sys
from pathlib import Path

COUNTS = {"train": 10_000, "t10k": 10_000}


def cut(src, name, count):
    images = Path(src, f"{name}-images-idx3-ubyte").read_bytes()
    labels = Path(src, f"{name}-labels-idx1-ubyte").read_bytes()
    magic, n, rows, cols = struct.unpack(">IIII", images[:16])
    assert magic == 0x803 and n >= count
    assert struct.unpack(">II", labels[:8]) == (0x801, n)
    img = struct.pack(">IIII", magic, count, rows, cols) + images[16 : 16 + count * rows * cols]
    lab = struct.pack(">II", 0x801, count) + labels[8 : 8 + count]
    return img, lab


def main(src, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for name, count in COUNTS.items():
        img, lab = cut(src, name, count)
        for kind, payload in (("images-idx3", img), ("labels-idx1", lab)):
            with gzip.GzipFile(out / f"{name}-{kind}-ubyte.gz", "wb", mtime=0) as f:
                f.write(payload)
        print(name, count)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
