"""Write a desk-scale dataset of PPM tiles cut from scikit-image's sample images.

Usage: python3 scripts/make_desk_data.py OUT_DIR [--tile 48] [--count 300]
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
from PIL import Image
from skimage import data

SOURCES = ("astronaut", "chelsea", "coffee", "rocket", "immunohistochemistry", "retina",
           "hubble_deep_field", "camera", "coins", "moon", "brick", "grass", "gravel", "cat")


def source_images():
    for name in SOURCES:
        img = getattr(data, name)()
        if img.ndim == 2:
            img = np.stack([img] * 3, axis=-1)
        img = Image.fromarray(img[..., :3].astype(np.uint8))
        # halve the resolution so tiles carry more structure per pixel
        yield name, img.resize((img.width // 2, img.height // 2), Image.Resampling.LANCZOS)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--tile", type=int, default=48)
    ap.add_argument("--count", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    images = list(source_images())
    per = -(-args.count // len(images))
    written = 0
    for name, img in images:
        arr = np.asarray(img)
        h, w = arr.shape[:2]
        for k in range(per):
            if written == args.count:
                break
            top, left = rng.integers(0, h - args.tile + 1), rng.integers(0, w - args.tile + 1)
            tile = arr[top:top + args.tile, left:left + args.tile]
            Image.fromarray(tile).save(args.out / f"{name}_{k:03d}.ppm")
            written += 1
    print(f"wrote {written} tiles to {args.out}")


if __name__ == "__main__":
    main()
