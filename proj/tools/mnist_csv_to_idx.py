#!/usr/bin/env python3
"""Convert a CSV of MNIST digits (784 pixels and a label per row) to IDX files.

The 5000-image subset shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz) stores the label last; pass --label-last.
"""
import argparse
import gzip
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv", help="input .csv or .csv.gz")
    ap.add_argument("images", help="output IDX image file")
    ap.add_argument("labels", help="output IDX label file")
    ap.add_argument("--label-last", action="store_true", help="label is the final column")
    args = ap.parse_args()

    opener = gzip.open if args.csv.endswith(".gz") else open
    labels, pixels = [], []
    with opener(args.csv, "rt") as f:
        for line in f:
            fields = line.strip().split(",")
            if len(fields) != 785:
                continue
            if args.label_last:
                label, pix = fields[-1], fields[:-1]
            else:
                label, pix = fields[0], fields[1:]
            labels.append(int(float(label)))
            pixels.append(bytes(int(float(v)) for v in pix))

    with open(args.images, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(pixels), 28, 28))
        for p in pixels:
            f.write(p)
    with open(args.labels, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(labels)} images")


if __name__ == "__main__":
    main()
