"""Georeferenced raster primitives: affine transforms, rasters, colony polygons.

The pixel/world mapping follows the GDAL six-coefficient convention: the
transform maps *continuous* pixel coordinates (col, row) measured from the
top-left corner of the raster, so the center of pixel [r, c] sits at
continuous coordinates (c + 0.5, r + 0.5).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_CRS = "local-xy"


class CrsMismatchError(ValueError):
    """Two georeferenced objects disagree on coordinate system id."""


@dataclass(frozen=True)
class GeoTransform:
    """Affine map from pixel (col, row) to world (x, y)."""

    origin_x: float
    pixel_width: float
    row_rotation: float
    origin_y: float
    col_rotation: float
    pixel_height: float

    def __post_init__(self) -> None:
        if self.pixel_width == 0 or self.pixel_height == 0:
            raise ValueError("pixel_width and pixel_height must be nonzero")
        if self.determinant() == 0:
            raise ValueError("geotransform linear part is singular")

    def determinant(self) -> float:
        return self.pixel_width * self.pixel_height - self.row_rotation * self.col_rotation

    def pixel_to_world(self, col, row):
        x = self.origin_x + col * self.pixel_width + row * self.row_rotation
        y = self.origin_y + col * self.col_rotation + row * self.pixel_height
        return x, y

    def world_to_pixel(self, x, y):
        det = self.determinant()
        dx = x - self.origin_x
        dy = y - self.origin_y
        col = (dx * self.pixel_height - dy * self.row_rotation) / det
        row = (dy * self.pixel_width - dx * self.col_rotation) / det
        return col, row

    def shifted(self, col_offset: float, row_offset: float) -> "GeoTransform":
        """Transform of a window whose top-left pixel is (col_offset, row_offset)."""
        x, y = self.pixel_to_world(col_offset, row_offset)
        return GeoTransform(x, self.pixel_width, self.row_rotation,
                            y, self.col_rotation, self.pixel_height)

    def to_list(self) -> list[float]:
        return [self.origin_x, self.pixel_width, self.row_rotation,
                self.origin_y, self.col_rotation, self.pixel_height]

    @classmethod
    def from_list(cls, coeffs) -> "GeoTransform":
        if len(coeffs) != 6:
            raise ValueError(f"geotransform needs 6 coefficients, got {len(coeffs)}")
        return cls(*(float(c) for c in coeffs))


@dataclass
class GeoRaster:
    """Pixel grid plus its world placement."""

    pixels: np.ndarray  # HxW or HxWxC, uint8
    transform: GeoTransform
    crs: str = DEFAULT_CRS

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def footprint(self) -> tuple[float, float, float, float]:
        """World bounding box (xmin, ymin, xmax, ymax) of the pixel extent."""
        return footprint_of(self.transform, self.height, self.width)

    def contains_bbox(self, bbox: tuple[float, float, float, float]) -> bool:
        """Closed containment of a world bbox inside the raster footprint."""
        fx0, fy0, fx1, fy1 = self.footprint
        x0, y0, x1, y1 = bbox
        return fx0 <= x0 and fy0 <= y0 and x1 <= fx1 and y1 <= fy1


def footprint_of(transform: GeoTransform, height: int, width: int) -> tuple[float, float, float, float]:
    cols = np.array([0.0, width, 0.0, width])
    rows = np.array([0.0, 0.0, height, height])
    xs, ys = transform.pixel_to_world(cols, rows)
    return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())


@dataclass
class ColonyPolygon:
    """Closed world-coordinate ring outlining one colony."""

    colony_id: str
    vertices: list[tuple[float, float]]
    crs: str = DEFAULT_CRS

    def __post_init__(self) -> None:
        verts = [(float(x), float(y)) for x, y in self.vertices]
        if len(verts) >= 2 and verts[0] == verts[-1]:
            verts = verts[:-1]
        if len(verts) < 3:
            raise ValueError(f"polygon {self.colony_id!r} needs >= 3 vertices")
        self.vertices = verts
        if _self_intersects(verts):
            raise ValueError(f"polygon {self.colony_id!r} is self-intersecting")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def area(self) -> float:
        return abs(_signed_area(self.vertices))


def _signed_area(verts: list[tuple[float, float]]) -> float:
    acc = 0.0
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return 0.5 * acc


def _self_intersects(verts: list[tuple[float, float]]) -> bool:
    """Proper edge crossings only; shared endpoints of adjacent edges are fine."""

    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    n = len(verts)
    edges = [(verts[i], verts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or j == (i + 1) % n or (j + 1) % n == i:
                continue
            a, b = edges[i]
            c, d = edges[j]
            o1, o2 = orient(a, b, c), orient(a, b, d)
            o3, o4 = orient(c, d, a), orient(c, d, b)
            if ((o1 > 0) != (o2 > 0)) and ((o3 > 0) != (o4 > 0)) and 0 not in (o1, o2, o3, o4):
                return True
    return False


def rasterize_polygon(polygon: ColonyPolygon, transform: GeoTransform,
                      shape: tuple[int, int]) -> np.ndarray:
    """Binary grid over `shape`: 1 iff the pixel center falls inside the ring.

    Degenerate (zero-area) polygons rasterize to all zeros with a warning.
    """
    h, w = int(shape[0]), int(shape[1])
    out = np.zeros((h, w), dtype=np.uint8)
    if abs(_signed_area(polygon.vertices)) == 0.0:
        warnings.warn(f"polygon {polygon.colony_id!r} has zero area; rasterizing to empty mask")
        return out

    cols, rows = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    xs, ys = transform.pixel_to_world(cols, rows)

    inside = np.zeros((h, w), dtype=bool)
    verts = polygon.vertices
    x1, y1 = verts[-1]
    for x2, y2 in verts:
        crosses = (y1 > ys) != (y2 > ys)
        if np.any(crosses):
            with np.errstate(divide="ignore", invalid="ignore"):
                x_at = (x2 - x1) * (ys - y1) / (y2 - y1) + x1
            inside ^= crosses & (xs < x_at)
        x1, y1 = x2, y2
    out[inside] = 1
    return out


def outline_mask(mask: np.ndarray, transform: GeoTransform, colony_id: str,
                 crs: str = DEFAULT_CRS, max_vertices: int = 120) -> ColonyPolygon:
    """Trace the outer boundary of the largest connected mask component.

    The contour is decimated to at most `max_vertices` points; hand-drawn
    outlines are coarse, so the simplification is part of the realism.
    """
    from skimage import measure

    arr = (np.asarray(mask) > 0).astype(float)
    if not arr.any():
        raise ValueError(f"cannot outline an empty mask for {colony_id!r}")
    padded = np.pad(arr, 1)
    contours = measure.find_contours(padded, 0.5)
    if not contours:
        raise ValueError(f"no contour found for {colony_id!r}")
    contour = max(contours, key=len) - 1.0  # undo padding; (row, col) points
    if len(contour) > max_vertices:
        idx = np.linspace(0, len(contour) - 1, max_vertices).astype(int)
        contour = contour[idx]
    # find_contours indexes pixel centers, so add the half-pixel offset
    xs, ys = transform.pixel_to_world(contour[:, 1] + 0.5, contour[:, 0] + 0.5)
    return ColonyPolygon(colony_id, list(zip(xs.tolist(), ys.tolist())), crs=crs)


def load_polygons(path: Path | str) -> list[ColonyPolygon]:
    """Read colony polygons from a GeoJSON FeatureCollection.

    Each feature must be a Polygon carrying a "colony_id" property; only the
    exterior ring is used.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("type") != "FeatureCollection":
        raise ValueError(f"{path}: expected a GeoJSON FeatureCollection")
    crs = DEFAULT_CRS
    if isinstance(data.get("crs"), dict):
        crs = data["crs"].get("properties", {}).get("name", DEFAULT_CRS)

    polygons = []
    for i, feature in enumerate(data.get("features", [])):
        geom = feature.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise ValueError(f"{path}: feature {i} has geometry {geom.get('type')!r}, expected Polygon")
        props = feature.get("properties") or {}
        if "colony_id" not in props:
            raise ValueError(f"{path}: feature {i} is missing the required 'colony_id' property")
        ring = geom.get("coordinates", [[]])[0]
        polygons.append(ColonyPolygon(str(props["colony_id"]),
                                      [(float(p[0]), float(p[1])) for p in ring],
                                      crs=crs))
    return polygons


def save_polygons(polygons: list[ColonyPolygon], path: Path | str) -> None:
    crs = polygons[0].crs if polygons else DEFAULT_CRS
    features = []
    for poly in polygons:
        ring = [[x, y] for x, y in poly.vertices]
        ring.append(ring[0])
        features.append({
            "type": "Feature",
            "properties": {"colony_id": poly.colony_id},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    doc = {
        "type": "FeatureCollection",
        "crs": {"type": "name", "properties": {"name": crs}},
        "features": features,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")
