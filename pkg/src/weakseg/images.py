"""PNG helpers shared by the archive, pipeline and harness.

Scenes are stored as 8-bit 3-channel PNG; masks as 8-bit single-channel
PNG with values {0, 255} on disk and {0, 1} in memory.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def save_image(path: Path | str, pixels: np.ndarray) -> None:
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {arr.shape}")
    Image.fromarray(arr, mode="RGB").save(str(path), format="PNG")


def load_image(path: Path | str) -> np.ndarray:
    with Image.open(str(path)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_mask(path: Path | str, mask: np.ndarray) -> None:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"expected HxW mask, got shape {arr.shape}")
    binary = (arr > 0).astype(np.uint8) * 255
    Image.fromarray(binary, mode="L").save(str(path), format="PNG")


def load_mask(path: Path | str) -> np.ndarray:
    with Image.open(str(path)) as img:
        arr = np.asarray(img.convert("L"), dtype=np.uint8)
    return (arr > 127).astype(np.uint8)


def image_size(path: Path | str) -> tuple[int, int]:
    """Return (height, width) from the PNG header without decoding pixels."""
    with Image.open(str(path)) as img:
        w, h = img.size
    return h, w
