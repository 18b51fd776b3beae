#!/usr/bin/env python3
"""Convert a MedMNIST-style .npz (train/val/test images and labels) into the
archive directory read by `calico run`: meta.txt, features.bin (uint8, HWC),
labels.bin (int32, 0-based), splits.bin (0 train, 1 val, 2 test) and, when
given, classes.txt."""

import argparse
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")


def convert(npz_path, out_dir, class_names=None):
    data = np.load(npz_path)
    images, labels, tags = [], [], []
    for tag, split in enumerate(SPLITS):
        if f"{split}_images" not in data:
            continue
        x = data[f"{split}_images"]
        y = data[f"{split}_labels"].reshape(len(x), -1)
        if y.shape[1] != 1:
            raise SystemExit(f"{split}_labels: multi-label targets are not supported")
        images.append(x)
        labels.append(y[:, 0])
        tags.append(np.full(len(x), tag, dtype=np.uint8))
    if not images:
        raise SystemExit(f"{npz_path}: no <split>_images arrays")

    x = np.concatenate(images)
    if x.ndim == 3:
        x = x[..., None]
    if x.dtype != np.uint8:
        raise SystemExit(f"images have dtype {x.dtype}, expected uint8")
    y = np.concatenate(labels).astype("<i4")
    count, height, width, channels = x.shape
    classes = int(y.max()) + 1
    if class_names and len(class_names) != classes:
        raise SystemExit(f"{len(class_names)} class names for {classes} classes")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.txt").write_text(
        f"name {Path(npz_path).stem}\nclasses {classes}\ncount {count}\n"
        f"shape {channels} {height} {width}\nlayout hwc\ndtype uint8\n")
    (out / "features.bin").write_bytes(np.ascontiguousarray(x).tobytes())
    (out / "labels.bin").write_bytes(y.tobytes())
    (out / "splits.bin").write_bytes(np.concatenate(tags).tobytes())
    if class_names:
        (out / "classes.txt").write_text("\n".join(class_names) + "\n")
    return count, classes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("npz")
    ap.add_argument("out_dir")
    ap.add_argument("--classes", help="comma-separated class names in label order")
    args = ap.parse_args()
    names = args.classes.split(",") if args.classes else None
    count, classes = convert(args.npz, args.out_dir, names)
    print(f"wrote {count} images, {classes} classes to {args.out_dir}")


if __name__ == "__main__":
    main()
