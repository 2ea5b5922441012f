"""Data acquisition: archive query, padded colony crops, entropy filtering,
polygon rasterization and sliding-window patchification.

Provenance runs through everything here: "hand" masks are trusted pixel-wise,
"weak" masks only at the image-statistic level.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geo import ColonyPolygon, CrsMismatchError, GeoRaster, rasterize_polygon
from .images import load_image, load_mask, save_image, save_mask
from .scenegen import ArchiveIndex, SceneRecord

HAND = "hand"
WEAK = "weak"

DEFAULT_PADDING = 100
DEFAULT_ENTROPY_THRESHOLD = 5.0


@dataclass
class CropRecord:
    """A colony-centered crop plus its (possibly misaligned) mask."""

    image: np.ndarray  # HxWx3 uint8
    weak_mask: np.ndarray  # HxW uint8 {0,1}
    colony_id: str
    scene_id: str
    entropy_bits: float
    provenance: str = WEAK
    pixel_offset_in_source: tuple[int, int] = (0, 0)  # (row, col)

    @property
    def crop_id(self) -> str:
        return f"{self.colony_id}_{self.scene_id}"


@dataclass
class Patch:
    """Fixed-size tile cut from a crop, with its image-level label."""

    image_tile: np.ndarray  # SxSx3 uint8
    mask_tile: np.ndarray  # SxS uint8 {0,1}
    provenance: str
    image_level_label: int
    origin: tuple[int, int]  # (row, col) in the parent crop
    crop_id: str = ""
    padded: bool = False


def query_archive(polygons: list[ColonyPolygon],
                  index: ArchiveIndex) -> list[tuple[ColonyPolygon, SceneRecord]]:
    """All (polygon, scene) pairs where the scene footprint contains the
    polygon's bounding box. Containment is closed: touching edges match.
    """
    from .geo import GeoTransform, footprint_of

    matches = []
    for record in index.records:
        h, w = index.scene_shape(record)
        transform = GeoTransform.from_list(record.geotransform)
        fx0, fy0, fx1, fy1 = footprint_of(transform, h, w)
        for poly in polygons:
            if poly.crs != record.crs:
                raise CrsMismatchError(
                    f"polygon {poly.colony_id!r} crs {poly.crs!r} != "
                    f"scene {record.colony_id}/{record.scene_id} crs {record.crs!r}")
            x0, y0, x1, y1 = poly.bounds
            if fx0 <= x0 and fy0 <= y0 and x1 <= fx1 and y1 <= fy1:
                matches.append((poly, record))
    return matches


def crop_colony(raster: GeoRaster, polygon: ColonyPolygon,
                padding: int = DEFAULT_PADDING,
                colony_id: str | None = None,
                scene_id: str = "") -> CropRecord:
    """Crop the polygon's pixel bounding box expanded by `padding`, clipped to
    the raster; the weak mask is the polygon rasterized over the crop window.
    """
    if polygon.crs != raster.crs:
        raise CrsMismatchError(
            f"polygon {polygon.colony_id!r} crs {polygon.crs!r} != raster crs {raster.crs!r}")

    xs = np.array([v[0] for v in polygon.vertices])
    ys = np.array([v[1] for v in polygon.vertices])
    cols, rows = raster.transform.world_to_pixel(xs, ys)
    col0 = int(np.floor(cols.min())) - padding
    col1 = int(np.ceil(cols.max())) + padding
    row0 = int(np.floor(rows.min())) - padding
    row1 = int(np.ceil(rows.max())) + padding

    col0, col1 = max(0, col0), min(raster.width, col1)
    row0, row1 = max(0, row0), min(raster.height, row1)
    if col0 >= col1 or row0 >= row1:
        raise ValueError(
            f"polygon {polygon.colony_id!r} does not intersect the raster extent")

    crop = raster.pixels[row0:row1, col0:col1]
    crop_transform = raster.transform.shifted(col0, row0)
    weak_mask = rasterize_polygon(polygon, crop_transform, crop.shape[:2])
    return CropRecord(
        image=np.ascontiguousarray(crop),
        weak_mask=weak_mask,
        colony_id=colony_id if colony_id is not None else polygon.colony_id,
        scene_id=scene_id,
        entropy_bits=shannon_entropy(crop),
        provenance=WEAK,
        pixel_offset_in_source=(row0, col0),
    )


def shannon_entropy(image: np.ndarray) -> float:
    """Base-2 entropy of the 256-bin grayscale histogram, with 0*log0 := 0.

    Grayscale is the half-up-rounded mean over channels.
    """
    arr = np.asarray(image)
    if arr.size == 0:
        raise ValueError("cannot compute entropy of an empty image")
    if arr.ndim == 3:
        gray = np.floor(arr.astype(np.float64).mean(axis=2) + 0.5).astype(np.uint8)
    else:
        gray = arr.astype(np.uint8)
    counts = np.bincount(gray.ravel(), minlength=256)
    probs = counts[counts > 0] / gray.size
    return float(-(probs * np.log2(probs)).sum())


def entropy_filter(crops: list[CropRecord],
                   threshold: float = DEFAULT_ENTROPY_THRESHOLD) -> list[CropRecord]:
    """Keep crops scoring strictly above the threshold; at-or-below is discarded."""
    return [c for c in crops if c.entropy_bits > threshold]


def patch_label(mask_tile: np.ndarray, min_fraction: float = 0.0) -> int:
    """1 iff the positive fraction exceeds min_fraction (default: any positive pixel)."""
    frac = float((np.asarray(mask_tile) > 0).mean())
    return int(frac > min_fraction)


def _window_starts(length: int, size: int, step: int) -> list[int]:
    starts = []
    pos = 0
    while pos + size <= length:
        starts.append(pos)
        pos += step
    flush = length - size
    if flush > 0 and (not starts or starts[-1] != flush):
        starts.append(flush)
    if not starts:
        starts = [0]
    return starts


def patchify(crop: CropRecord, size: int, step: int,
             min_fraction: float = 0.0) -> list[Patch]:
    """Sliding windows at offsets {0, step, 2*step, ...} per axis, plus one
    window flush against the edge when the stride would overrun, so the
    union of windows covers the whole crop.

    A crop smaller than `size` yields a single symmetrically zero-padded
    patch flagged via `Patch.padded`.
    """
    if size < 1:
        raise ValueError(f"patch size must be >= 1, got {size}")
    if not 1 <= step <= size:
        raise ValueError(f"step must be in [1, size], got step={step} size={size}")

    h, w = crop.image.shape[:2]
    image, mask = crop.image, crop.weak_mask
    padded = False
    if h < size or w < size:
        pad_r, pad_c = max(0, size - h), max(0, size - w)
        before_r, before_c = pad_r // 2, pad_c // 2
        image = np.pad(image, ((before_r, pad_r - before_r), (before_c, pad_c - before_c), (0, 0)))
        mask = np.pad(mask, ((before_r, pad_r - before_r), (before_c, pad_c - before_c)))
        h, w = image.shape[:2]
        padded = True

    patches = []
    for r in _window_starts(h, size, step):
        for c in _window_starts(w, size, step):
            tile = np.ascontiguousarray(image[r:r + size, c:c + size])
            mtile = np.ascontiguousarray(mask[r:r + size, c:c + size])
            patches.append(Patch(
                image_tile=tile,
                mask_tile=mtile,
                provenance=crop.provenance,
                image_level_label=patch_label(mtile, min_fraction),
                origin=(r, c),
                crop_id=crop.crop_id,
                padded=padded,
            ))
    return patches


# ---------------------------------------------------------------------------
# persistence: crop stores and patch stores (PNG pairs + JSONL manifest)
# ---------------------------------------------------------------------------

CROP_MANIFEST = "crops.jsonl"
PATCH_MANIFEST = "patches.jsonl"


def save_crops(crops: list[CropRecord], out_dir: Path | str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for crop in crops:
        image_path = f"{crop.crop_id}.png"
        mask_path = f"{crop.crop_id}_mask.png"
        save_image(out_dir / image_path, crop.image)
        save_mask(out_dir / mask_path, crop.weak_mask)
        lines.append(json.dumps({
            "crop_id": crop.crop_id,
            "colony_id": crop.colony_id,
            "scene_id": crop.scene_id,
            "image_path": image_path,
            "mask_path": mask_path,
            "entropy_bits": crop.entropy_bits,
            "provenance": crop.provenance,
            "offset_row": crop.pixel_offset_in_source[0],
            "offset_col": crop.pixel_offset_in_source[1],
        }, sort_keys=True))
    manifest = out_dir / CROP_MANIFEST
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return manifest


def load_crops(manifest: Path | str) -> list[CropRecord]:
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / CROP_MANIFEST
    root = manifest.parent
    crops = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        crops.append(CropRecord(
            image=load_image(root / d["image_path"]),
            weak_mask=load_mask(root / d["mask_path"]),
            colony_id=d["colony_id"],
            scene_id=d["scene_id"],
            entropy_bits=float(d["entropy_bits"]),
            provenance=d["provenance"],
            pixel_offset_in_source=(int(d["offset_row"]), int(d["offset_col"])),
        ))
    return crops


def write_crop_manifest(crops: list[CropRecord], src_manifest: Path | str,
                        out_manifest: Path | str) -> Path:
    """Rewrite a crop manifest keeping only `crops`, reusing the stored PNGs."""
    src_manifest = Path(src_manifest)
    if src_manifest.is_dir():
        src_manifest = src_manifest / CROP_MANIFEST
    keep = {c.crop_id for c in crops}
    lines = [line for line in src_manifest.read_text(encoding="utf-8").splitlines()
             if line.strip() and json.loads(line)["crop_id"] in keep]
    out_manifest = Path(out_manifest)
    out_manifest.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return out_manifest


def save_patches(patches: list[Patch], out_dir: Path | str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, patch in enumerate(patches):
        patch_id = f"patch_{i:06d}"
        image_path = f"{patch_id}.png"
        mask_path = f"{patch_id}_mask.png"
        save_image(out_dir / image_path, patch.image_tile)
        save_mask(out_dir / mask_path, patch.mask_tile)
        lines.append(json.dumps({
            "patch_id": patch_id,
            "crop_id": patch.crop_id,
            "image_path": image_path,
            "mask_path": mask_path,
            "provenance": patch.provenance,
            "label": patch.image_level_label,
            "origin": list(patch.origin),
            "padded": patch.padded,
        }, sort_keys=True))
    manifest = out_dir / PATCH_MANIFEST
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return manifest


def load_patches(manifest: Path | str) -> list[Patch]:
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / PATCH_MANIFEST
    root = manifest.parent
    patches = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        patches.append(Patch(
            image_tile=load_image(root / d["image_path"]),
            mask_tile=load_mask(root / d["mask_path"]),
            provenance=d["provenance"],
            image_level_label=int(d["label"]),
            origin=(int(d["origin"][0]), int(d["origin"][1])),
            crop_id=d["crop_id"],
            padded=bool(d.get("padded", False)),
        ))
    return patches


def with_mask(crop: CropRecord, mask: np.ndarray, provenance: str) -> CropRecord:
    """Crop with its mask replaced (e.g. swapping in a trusted hand mask)."""
    if mask.shape != crop.weak_mask.shape:
        raise ValueError(f"replacement mask shape {mask.shape} != crop shape {crop.weak_mask.shape}")
    return replace(crop, weak_mask=(np.asarray(mask) > 0).astype(np.uint8), provenance=provenance)
