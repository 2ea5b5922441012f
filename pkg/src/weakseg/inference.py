"""Whole-image prediction by overlapping-tile stitching.

A prediction mask is an HxW float32 grid of activations in [0, 1]; each
output pixel is the arithmetic mean of every tile prediction covering it.
Accumulation happens in float64 with an explicit coverage counter and in a
fixed canonical tile order, so the result is independent of how tile
inference is batched or parallelized.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pipeline import _window_starts
from .segmenter import SegmenterModel, predict_batch

logger = logging.getLogger(__name__)

_PRED_CHUNK = 8


@dataclass(frozen=True)
class StitchConfig:
    patch_size: int = 256
    step: int = 128
    binarize_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 1 <= self.step <= self.patch_size:
            raise ValueError(f"step must be in [1, patch_size], got {self.step}")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError(f"binarize_threshold must be in (0, 1), got {self.binarize_threshold}")


def stitch_predict(model, image: np.ndarray, cfg: StitchConfig) -> np.ndarray:
    """Tile the image as in patchify (flush-to-edge final window), predict each
    tile and average overlapping activations per pixel.

    `model` is either a SegmenterModel or a callable mapping one HxWx3 tile
    to an HxW activation grid.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    if isinstance(model, SegmenterModel) and model.config.infer_size != cfg.patch_size:
        raise ValueError(
            f"model inference size {model.config.infer_size} != stitch patch size {cfg.patch_size}")

    h, w = image.shape[:2]
    size = cfg.patch_size
    pad_r, pad_c = max(0, size - h), max(0, size - w)
    padded = image
    if pad_r or pad_c:
        logger.warning("image %dx%d smaller than patch size %d; zero-padding for stitching", h, w, size)
        padded = np.pad(image, ((0, pad_r), (0, pad_c), (0, 0)))

    ph, pw = padded.shape[:2]
    origins = [(r, c)
               for r in _window_starts(ph, size, cfg.step)
               for c in _window_starts(pw, size, cfg.step)]
    tiles = [padded[r:r + size, c:c + size] for r, c in origins]

    if isinstance(model, SegmenterModel):
        preds = []
        for start in range(0, len(tiles), _PRED_CHUNK):
            preds.extend(predict_batch(model, tiles[start:start + _PRED_CHUNK]))
    else:
        preds = [np.asarray(model(tile), dtype=np.float64) for tile in tiles]

    accum = np.zeros((ph, pw), dtype=np.float64)
    counts = np.zeros((ph, pw), dtype=np.int64)
    for (r, c), pred in zip(origins, preds):
        accum[r:r + size, c:c + size] += pred
        counts[r:r + size, c:c + size] += 1
    if counts.min() == 0:
        raise AssertionError("stitching left uncovered pixels")  # cannot happen with flush windows
    stitched = (accum / counts)[:h, :w]
    return stitched.astype(np.float32)


def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Pixel = 1 iff activation > threshold (ties go negative)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return (np.asarray(mask) > threshold).astype(np.uint8)


# ---------------------------------------------------------------------------
# probability-grid file format: one JSON header line, then raw little-endian
# float32 pixels in row-major order
# ---------------------------------------------------------------------------

def save_prob_grid(path: Path | str, grid: np.ndarray) -> None:
    arr = np.asarray(grid, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected HxW grid, got shape {arr.shape}")
    header = json.dumps({"height": arr.shape[0], "width": arr.shape[1],
                         "dtype": "<f4", "version": 1}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_prob_grid(path: Path | str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("dtype") != "<f4" or header.get("version") != 1:
            raise ValueError(f"{path}: unsupported probability grid header {header}")
        h, w = int(header["height"]), int(header["width"])
        data = np.frombuffer(fh.read(), dtype="<f4", count=h * w)
    return data.reshape(h, w).copy()
