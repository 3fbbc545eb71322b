"""Image ingestion, dataset splitting, and affine augmentation.

Dataset layout on disk: a root directory with ``COVID/`` and ``Normal/``
subdirectories of PNG files.  The manifest CSV (header
``path,label,split,origin,seed``, UTF-8, LF, rows sorted by path then
origin) records which file belongs to which split and, for augmented train
records, the warp parameters, so a manifest is byte-reproducible from the
file list and the seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, FormatError, ParameterError
from .rng import derive_rng
from .tensor import Tensor

CLASSES = ("COVID", "Normal")
POSITIVE_CLASS = "COVID"
SPLITS = ("train", "test", "val")
IMAGE_SIZE = 30
TRAIN_FRACTION = 0.7
TEST_FRACTION = 0.2


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling ranges for the four warp families; the single place to sweep them."""

    rotation_deg: float = 15.0
    shift_frac: float = 0.10
    shear_deg: float = 10.0
    zoom_low: float = 0.9
    zoom_high: float = 1.1


DEFAULT_AUGMENT_RANGES = AugmentRanges()


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float
    shift_x: float
    shift_y: float
    shear_deg: float
    zoom: float

    def __post_init__(self):
        r = DEFAULT_AUGMENT_RANGES
        if abs(self.rotation_deg) > r.rotation_deg:
            raise ParameterError(f"rotation {self.rotation_deg} outside +-{r.rotation_deg}")
        if abs(self.shift_x) > r.shift_frac or abs(self.shift_y) > r.shift_frac:
            raise ParameterError(f"shift ({self.shift_x}, {self.shift_y}) outside +-{r.shift_frac}")
        if abs(self.shear_deg) > r.shear_deg:
            raise ParameterError(f"shear {self.shear_deg} outside +-{r.shear_deg}")
        if not r.zoom_low <= self.zoom <= r.zoom_high:
            raise ParameterError(f"zoom {self.zoom} outside [{r.zoom_low}, {r.zoom_high}]")

    @staticmethod
    def identity() -> "AugmentParams":
        return AugmentParams(0.0, 0.0, 0.0, 0.0, 1.0)

    @staticmethod
    def draw(rng: np.random.Generator, ranges: AugmentRanges = DEFAULT_AUGMENT_RANGES) -> "AugmentParams":
        return AugmentParams(
            rotation_deg=rng.uniform(-ranges.rotation_deg, ranges.rotation_deg),
            shift_x=rng.uniform(-ranges.shift_frac, ranges.shift_frac),
            shift_y=rng.uniform(-ranges.shift_frac, ranges.shift_frac),
            shear_deg=rng.uniform(-ranges.shear_deg, ranges.shear_deg),
            zoom=rng.uniform(ranges.zoom_low, ranges.zoom_high),
        )


@dataclass(frozen=True)
class SampleRecord:
    """One labeled sample; augmented records reuse the source file's path."""

    path: str
    label: str
    split: str
    slot: int = 0                        # k-th augmented copy of this path
    params: AugmentParams | None = None  # None for originals

    @property
    def is_augmented(self) -> bool:
        return self.params is not None

    def origin_string(self) -> str:
        if self.params is None:
            return "original"
        p = self.params
        return (
            f"aug:{self.slot:06d}:{p.rotation_deg!r}:{p.shift_x!r}:{p.shift_y!r}"
            f":{p.shear_deg!r}:{p.zoom!r}"
        )


def _parse_origin(origin: str) -> tuple[int, AugmentParams | None]:
    if origin == "original":
        return 0, None
    head, slot, *vals = origin.split(":")
    if head != "aug" or len(vals) != 5:
        raise DataError(f"unparseable origin field {origin!r}")
    return int(slot), AugmentParams(*(float(v) for v in vals))


def _sort_key(record: SampleRecord):
    return (record.path, record.origin_string())


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[SampleRecord, ...]
    seed: int

    def for_split(self, split: str) -> list[SampleRecord]:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [r for r in self.records if r.split == split]

    def class_counts(self) -> dict[str, dict[str, int]]:
        counts = {s: {c: 0 for c in CLASSES} for s in SPLITS}
        for r in self.records:
            counts[r.split][r.label] += 1
        return counts

    def validate(self) -> None:
        seen = set()
        for r in self.records:
            if r.split not in SPLITS or r.label not in CLASSES:
                raise DataError(f"bad record {r.path}: split={r.split} label={r.label}")
            if r.is_augmented:
                if r.split != "train":
                    raise DataError(f"augmented record {r.path} in split {r.split}")
            else:
                if r.path in seen:
                    raise DataError(f"original {r.path} appears more than once")
                seen.add(r.path)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["path", "label", "split", "origin", "seed"])
            for r in sorted(self.records, key=_sort_key):
                writer.writerow([r.path, r.label, r.split, r.origin_string(), self.seed])

    @staticmethod
    def read_csv(path: str | Path) -> "DatasetManifest":
        records = []
        seed = 0
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["path", "label", "split", "origin", "seed"]:
                raise DataError(f"bad manifest header in {path}: {header}")
            for row in reader:
                if len(row) != 5:
                    raise DataError(f"bad manifest row in {path}: {row}")
                rpath, label, split, origin, seed_field = row
                slot, params = _parse_origin(origin)
                seed = int(seed_field)
                records.append(SampleRecord(rpath, label, split, slot=slot, params=params))
        manifest = DatasetManifest(records=tuple(sorted(records, key=_sort_key)), seed=seed)
        manifest.validate()
        return manifest


def scan_data_root(root: str | Path) -> list[tuple[str, str]]:
    """List (path, label) pairs under root/COVID and root/Normal."""
    root = Path(root)
    items: list[tuple[str, str]] = []
    for label in CLASSES:
        class_dir = root / label
        if not class_dir.is_dir():
            raise DataError(f"missing class directory: {class_dir}")
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() == ".png")
        if not files:
            raise DataError(f"no PNG files in class directory: {class_dir}")
        items.extend((str(p), label) for p in files)
    return items


def load_grayscale(path: str | Path) -> Tensor:
    """Decode a PNG to an (h, w, 1) uint8 grayscale plane.

    Color images are reduced with integer luminance
    ``(299 R + 587 G + 114 B + 500) // 1000`` (round-half-up of the
    0.299/0.587/0.114 weights); alpha is dropped.
    """
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise FormatError(f"{path}: expected a PNG file, got {img.format}")
            if img.mode in ("L", "LA", "1"):
                arr = np.asarray(img.convert("L"), dtype=np.uint8)
            elif img.mode in ("RGB", "RGBA", "P"):
                rgb = np.asarray(img.convert("RGB"), dtype=np.int64)
                lum = (299 * rgb[:, :, 0] + 587 * rgb[:, :, 1] + 114 * rgb[:, :, 2] + 500) // 1000
                arr = lum.astype(np.uint8)
            else:
                raise FormatError(f"{path}: unsupported PNG mode {img.mode}")
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a decodable image") from exc
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise OSError(f"{path}: {exc}") from exc
    return arr[:, :, None]


def resize_bilinear(img: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with half-pixel-centered sampling; returns float64."""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"target size must be positive, got {out_h}x{out_w}")
    h, w, c = img.shape
    src = img.astype(np.float64)

    def axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0.0, n_in - 1.0)
        lo = np.floor(s).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, s - lo

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def normalize_unit(img: Tensor) -> Tensor:
    """Map byte values 0..255 onto [0, 1]."""
    return img.astype(np.float64) / 255.0


def preprocess_image(path: str | Path, size: int = IMAGE_SIZE) -> Tensor:
    """Decode, resize to size x size, normalize; the standard ingest chain."""
    img = load_grayscale(path)
    if img.shape[:2] != (size, size):
        img = resize_bilinear(img, size, size)
    return normalize_unit(img)


def split_dataset(items: list[tuple[str, str]], seed: int) -> DatasetManifest:
    """Stratified 70/20/10 split: per class, shuffle with the seed, assign
    the first floor(0.7 n) to train, the next floor(0.2 n) to test, the
    remainder to val."""
    by_label: dict[str, list[str]] = {c: [] for c in CLASSES}
    for path, label in items:
        if label not in by_label:
            raise DataError(f"unknown label {label!r} for {path}")
        by_label[label].append(path)
    records = []
    for label, paths in by_label.items():
        if not paths:
            raise DataError(f"class {label!r} has no samples")
        ordered = sorted(paths)
        order = derive_rng(seed, "split", label).permutation(len(ordered))
        shuffled = [ordered[i] for i in order]
        n = len(shuffled)
        n_train = math.floor(TRAIN_FRACTION * n)
        n_test = math.floor(TEST_FRACTION * n)
        for i, path in enumerate(shuffled):
            split = "train" if i < n_train else "test" if i < n_train + n_test else "val"
            records.append(SampleRecord(path=path, label=label, split=split))
    manifest = DatasetManifest(records=tuple(sorted(records, key=_sort_key)), seed=seed)
    manifest.validate()
    return manifest


def augment_sample(img: Tensor, params: AugmentParams) -> Tensor:
    """Warp a [0, 1] image by one combined affine map about its center.

    The forward map composes zoom, then an x-shear by tan(shear_deg), then
    rotation, then a shift of (shift_x * w, shift_y * h) pixels; sampling is
    inverse-mapped bilinear with out-of-bounds coordinates clamped to the
    nearest edge pixel, and the result is clamped back to [0, 1].
    """
    h, w, c = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    th = math.radians(params.rotation_deg)
    shear = math.tan(math.radians(params.shear_deg))
    zoom_m = np.array([[params.zoom, 0.0], [0.0, params.zoom]])
    shear_m = np.array([[1.0, shear], [0.0, 1.0]])
    rot_m = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    linear = rot_m @ shear_m @ zoom_m
    inv = np.linalg.inv(linear)
    tx, ty = params.shift_x * w, params.shift_y * h

    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    qx = xs - cx - tx
    qy = ys - cy - ty
    sx = np.clip(inv[0, 0] * qx + inv[0, 1] * qy + cx, 0.0, w - 1.0)
    sy = np.clip(inv[1, 0] * qx + inv[1, 1] * qy + cy, 0.0, h - 1.0)

    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[:, :, None]
    fy = (sy - y0)[:, :, None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return np.clip(top * (1 - fy) + bot * fy, 0.0, 1.0)


def balance_by_augmentation(manifest: DatasetManifest, rng: np.random.Generator) -> DatasetManifest:
    """Duplicate minority-class train records as augmented copies until the
    train split's class counts are equal; test/val are untouched."""
    counts = manifest.class_counts()["train"]
    minority = min(CLASSES, key=lambda c: counts[c])
    majority = max(CLASSES, key=lambda c: counts[c])
    deficit = counts[majority] - counts[minority]
    if deficit == 0:
        return manifest

    pool = sorted(
        (r for r in manifest.records if r.split == "train" and r.label == minority and not r.is_augmented),
        key=_sort_key,
    )
    if not pool:
        raise DataError(f"train split has no original {minority!r} records to augment")
    order = rng.permutation(len(pool))
    slots: dict[str, int] = {}
    for r in manifest.records:
        if r.is_augmented:
            slots[r.path] = max(slots.get(r.path, 0), r.slot + 1)
    new_records = list(manifest.records)
    for k in range(deficit):
        source = pool[order[k % len(pool)]]
        slot = slots.get(source.path, 0)
        slots[source.path] = slot + 1
        new_records.append(
            replace(source, slot=slot, params=AugmentParams.draw(rng))
        )
    balanced = DatasetManifest(records=tuple(sorted(new_records, key=_sort_key)), seed=manifest.seed)
    balanced.validate()
    return balanced
