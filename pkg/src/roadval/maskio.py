"""Reading and writing label masks and overlays as lossless raster files."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def read_mask(path: str | Path) -> np.ndarray:
    """Load a single-channel 8-bit label raster as a (H, W) uint8 array."""
    with Image.open(path) as img:
        if img.mode in ("P", "L"):
            # palette indices / 8-bit grey are the class ids
            arr = np.asarray(img)
        elif img.mode in ("I;16", "I"):
            arr = np.asarray(img.convert("I"))
        else:
            raise ValueError(f"{path}: expected a single-channel mask, got mode {img.mode}")
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"{path}: mask must be 2-D, got shape {arr.shape}")
    if arr.max(initial=0) > 255 or arr.min(initial=0) < 0:
        raise ValueError(f"{path}: class ids must fit in 8 bits")
    return arr.astype(np.uint8)


def write_mask(path: str | Path, labels: np.ndarray) -> None:
    """Write a (H, W) uint8 label raster losslessly (format by extension)."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {labels.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)


def write_rgb(path: str | Path, image: np.ndarray) -> None:
    """Write a (H, W, 3) uint8 image (used for error overlays)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3), got shape {image.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image.astype(np.uint8), mode="RGB").save(path)
