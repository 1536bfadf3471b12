"""Image datasets from a directory of PGM/PPM (or PNG) files."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..seeding import rng_for

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm", ".png")
LABEL_TAG = "_label"
TRAIN = "train"
TEST = "test"


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    """Cropped images in [-1, 1], shape ``(N, C, crop, crop)``.

    ``labels`` holds the matching one-channel semantic maps, or ``None`` when
    the directory has no label files.
    """

    paths: list[tuple[Path, Path | None]]
    split: str
    crop: int
    images: np.ndarray
    ids: list[str]
    labels: np.ndarray | None = None
    name: str = ""
    skipped: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, n: int, seed: int = 0) -> "Dataset":
        if n < 1:
            raise DatasetError(f"subset size must be >= 1, got {n}")
        if n >= len(self):
            return self
        idx = np.sort(rng_for(seed, "subset", n).permutation(len(self))[:n])
        return Dataset(self.paths, self.split, self.crop, self.images[idx], [self.ids[i] for i in idx],
                       None if self.labels is None else self.labels[idx], self.name, list(self.skipped))


def read_image(path, channels: int = 3) -> np.ndarray:
    """Load as uint8 ``(C, H, W)``; grayscale is replicated when ``channels == 3``."""
    with Image.open(path) as im:
        im = im.convert("RGB" if channels == 3 else "L")
        arr = np.asarray(im, dtype=np.uint8)
    return arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1).copy()


def write_image(path, pixels: np.ndarray) -> None:
    """Write uint8 ``(C, H, W)`` or ``(H, W)``; P5 for one channel, P6 for three."""
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        raise ValueError(f"write_image expects uint8, got {arr.dtype}")
    if arr.ndim == 3:
        arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    path = Path(path)
    fmt = "PNG" if path.suffix.lower() == ".png" else "PPM"
    Image.fromarray(np.ascontiguousarray(arr)).save(path, format=fmt)


def to_unit(pixels: np.ndarray) -> np.ndarray:
    """Bytes -> [-1, 1]: 0 -> -1.0, 255 -> +1.0."""
    return (pixels.astype(np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def scan(directory) -> list[tuple[Path, Path | None]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    labels = {p.stem[: -len(LABEL_TAG)]: p for p in files if p.stem.endswith(LABEL_TAG)}
    return [(p, labels.get(p.stem)) for p in files if not p.stem.endswith(LABEL_TAG)]


def _crops(h: int, w: int, crop: int, count: int, rng: np.random.Generator | None):
    if rng is None:
        return [((h - crop) // 2, (w - crop) // 2)]
    return [(int(rng.integers(0, h - crop + 1)), int(rng.integers(0, w - crop + 1))) for _ in range(count)]


def load_dataset(directory, crop: int, seed: int, split: str = TRAIN, test_count: int = 50,
                 crops_per_image: int = 1, channels: int = 3, multiple: int = 8) -> Dataset:
    """Deterministic shuffled split; seeded random crops for train, center crops for test.

    The first ``test_count`` files of the seeded shuffle form the test split
    (capped at half the files).
    """
    if split not in (TRAIN, TEST):
        raise DatasetError(f"split must be {TRAIN!r} or {TEST!r}, got {split!r}")
    if crop < 1 or crop % multiple:
        raise DatasetError(f"crop size {crop} must be a positive multiple of {multiple}")
    entries = scan(directory)
    if not entries:
        raise DatasetError(f"no images found in {directory}")
    order = rng_for(seed, "split").permutation(len(entries))
    n_test = min(test_count, len(entries) // 2) if len(entries) > 1 else 0
    chosen = order[:n_test] if split == TEST else order[n_test:]
    chosen = sorted(int(i) for i in chosen)
    crop_rng = rng_for(seed, "crop") if split == TRAIN else None

    images, labels, ids, kept, skipped = [], [], [], [], []
    for i in chosen:
        path, label_path = entries[i]
        try:
            img = read_image(path, channels)
            lab = read_image(label_path, 1) if label_path is not None else None
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            warnings.warn(f"skipping undecodable image {path.name}: {exc}", RuntimeWarning, stacklevel=2)
            skipped.append(path.name)
            continue
        h, w = img.shape[-2:]
        if h < crop or w < crop or (lab is not None and lab.shape[-2:] != (h, w)):
            warnings.warn(f"skipping {path.name}: size {(h, w)} unusable for crop {crop}", RuntimeWarning, stacklevel=2)
            skipped.append(path.name)
            continue
        kept.append((path, label_path))
        for k, (top, left) in enumerate(_crops(h, w, crop, crops_per_image, crop_rng)):
            images.append(img[:, top:top + crop, left:left + crop])
            if lab is not None:
                labels.append(lab[:, top:top + crop, left:left + crop])
            ids.append(path.stem if split == TEST or crops_per_image == 1 else f"{path.stem}#{k}")
    if not images:
        raise DatasetError(f"{split} split of {directory} is empty")
    if labels and len(labels) != len(images):
        raise DatasetError("label maps must exist for every image or for none")
    return Dataset(kept, split, crop, to_unit(np.stack(images)), ids,
                   to_unit(np.stack(labels)) if labels else None, Path(directory).name, skipped)
