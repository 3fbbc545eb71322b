"""Synthetic 30x30 PNG datasets for smoke runs and the stochastic checks.

Two tasks, both written in the standard ``COVID/`` + ``Normal/`` layout:

* overfit task: trivially separable bright-square vs dark images, used to
  certify that the end-to-end loop can drive train accuracy to 1.0;
* imbalanced task: 1:3 minority/majority with a label-relevant square
  pattern buried in pixel noise, used for the augmentation-benefit check.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .rng import derive_rng

SIZE = 30


def _save(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8), mode="L").save(path, format="PNG")


def _square_image(rng, background: float, square: float | None, noise: float, side: int = 12) -> np.ndarray:
    img = background + rng.normal(0.0, noise, size=(SIZE, SIZE))
    if square is not None:
        r = int(rng.integers(4, SIZE - side - 4))
        c = int(rng.integers(4, SIZE - side - 4))
        img[r : r + side, c : c + side] = square + rng.normal(0.0, noise, size=(side, side))
    return img


def write_overfit_dataset(root: str | Path, seed: int = 0, per_class: int = 16) -> Path:
    """Bright-square COVID images vs dark Normal images; cleanly separable."""
    root = Path(root)
    for label in ("COVID", "Normal"):
        (root / label).mkdir(parents=True, exist_ok=True)
    for i in range(per_class):
        rng = derive_rng(seed, "overfit", "COVID", i)
        _save(root / "COVID" / f"covid_{i:03d}.png", _square_image(rng, 30.0, 230.0, 6.0))
        rng = derive_rng(seed, "overfit", "Normal", i)
        _save(root / "Normal" / f"normal_{i:03d}.png", _square_image(rng, 30.0, None, 6.0))
    return root


def write_imbalanced_dataset(
    root: str | Path, seed: int = 0, minority: int = 40, majority: int = 120
) -> Path:
    """1:3 imbalanced task: the classes differ only in the brightness of a
    noisy square, so the decision threshold is sensitive to class balance."""
    root = Path(root)
    for label in ("COVID", "Normal"):
        (root / label).mkdir(parents=True, exist_ok=True)
    for i in range(minority):
        rng = derive_rng(seed, "imbalanced", "COVID", i)
        level = float(rng.normal(150.0, 25.0))
        _save(root / "COVID" / f"covid_{i:03d}.png", _square_image(rng, 70.0, level, 30.0))
    for i in range(majority):
        rng = derive_rng(seed, "imbalanced", "Normal", i)
        level = float(rng.normal(100.0, 25.0))
        _save(root / "Normal" / f"normal_{i:03d}.png", _square_image(rng, 70.0, level, 30.0))
    return root
