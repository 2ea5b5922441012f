"""Synthetic georeferenced scene generation.

Desk-scale stand-in for a commercial satellite archive: rocky scenes with
organic guano-stain colonies, seasonal corruption (snow, cloud, shadow,
off-season) and controlled misregistration between the rendered stains and
the reference colony outline.

Color model
-----------
Every material is synthesized in (lightness, redness) space where redness
is the R-G channel gap. Each colony sits on one of several discrete
background families (granite, basalt, till, moraine, ...) that fix the
rock's tone offset, lightness and texture; scenes of the colony jitter
around the family. No global per-pixel color threshold separates stain from
rock across families, but within a scene the stain always sits at least 13
redness units above the rock. Rock redness (tone + warmth) never exceeds 48
and snow/cloud stay near zero, so after uint8 rounding the rule
``R - G >= 50`` matches only guano-textured pixels, in any scene.
`guano_pixel_mask` is that rule; visibility bookkeeping and tests rely on
it.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geo import DEFAULT_CRS, ColonyPolygon, GeoRaster, GeoTransform, outline_mask, save_polygons
from .images import image_size, load_image, load_mask, save_image, save_mask

GUANO_REDNESS_MIN = 31.0  # above the scene tone offset
ROCK_REDNESS_MAX = 18.0  # above the scene tone offset
SCENE_TONE_MAX = 30.0
NON_GUANO_REDNESS_CEIL = 48.0  # tone + rock, the reddest any non-stain pixel gets
GUANO_REDNESS_THRESHOLD = 50  # strictly above the ceiling after rounding
SHADOW_FACTOR = 0.30

BACKGROUND_TEXTURES = ("rock", "mixed")
CORRUPTION_KINDS = ("none", "snow", "cloud", "shadow", "off_season")

INDEX_NAME = "index.jsonl"
POLYGONS_NAME = "polygons.geojson"


@dataclass(frozen=True)
class SceneSpec:
    """Parameters for one synthetic scene (one colony neighborhood)."""

    width: int = 512
    height: int = 512
    colony_count: int = 1
    guano_fraction_target: float = 0.08
    background_texture: str = "rock"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 256 or self.height < 256:
            raise ValueError(f"scene must be at least 256x256, got {self.width}x{self.height}")
        if not 0.0 <= self.guano_fraction_target <= 0.5:
            raise ValueError(f"guano_fraction_target must be in [0, 0.5], got {self.guano_fraction_target}")
        if self.colony_count < 1:
            raise ValueError("colony_count must be >= 1")
        if self.background_texture not in BACKGROUND_TEXTURES:
            raise ValueError(f"background_texture must be one of {BACKGROUND_TEXTURES}")


@dataclass(frozen=True)
class CorruptionParams:
    kind: str = "none"
    coverage: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(f"corruption kind must be one of {CORRUPTION_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError(f"coverage must be in [0, 1], got {self.coverage}")


@dataclass(frozen=True)
class MisregistrationParams:
    shift_x: float = 0.0
    shift_y: float = 0.0
    rotation: float = 0.0  # degrees

    def __post_init__(self) -> None:
        if abs(self.rotation) > 5.0:
            raise ValueError(f"|rotation| must be <= 5 degrees, got {self.rotation}")


@dataclass
class SyntheticScene:
    image: GeoRaster
    truth_mask: np.ndarray  # uint8 {0,1}, actual rendered stain geometry
    weak_mask: np.ndarray  # uint8 {0,1}, nominal outline shared across years
    guano_visible: bool
    corruption: CorruptionParams = CorruptionParams()


def guano_pixel_mask(image: np.ndarray) -> np.ndarray:
    """Boolean grid of pixels carrying the guano color signature."""
    arr = np.asarray(image)
    redness = arr[..., 0].astype(np.int16) - arr[..., 1].astype(np.int16)
    return redness >= GUANO_REDNESS_THRESHOLD


# ---------------------------------------------------------------------------
# field / mask synthesis
# ---------------------------------------------------------------------------

def _smooth_noise(shape: tuple[int, int], rng: np.random.Generator, scale: float) -> np.ndarray:
    """Low-frequency unit-variance noise via bilinear upsampling of a coarse grid."""
    h, w = shape
    ch = max(2, int(np.ceil(h / scale)) + 1)
    cw = max(2, int(np.ceil(w / scale)) + 1)
    coarse = rng.standard_normal((ch, cw))
    rr = np.linspace(0.0, ch - 1.0, h)
    cc = np.linspace(0.0, cw - 1.0, w)
    grid_r, grid_c = np.meshgrid(rr, cc, indexing="ij")
    return ndimage.map_coordinates(coarse, [grid_r, grid_c], order=1, mode="nearest")


def _colony_field(shape: tuple[int, int], colony_count: int, rng: np.random.Generator) -> np.ndarray:
    """Max of per-colony blob fields: gaussian bumps wobbled by smooth noise."""
    h, w = shape
    span = min(h, w)
    cols, rows = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    field = np.full(shape, -np.inf)
    for _ in range(colony_count):
        cx = rng.uniform(0.25 * w, 0.75 * w)
        cy = rng.uniform(0.25 * h, 0.75 * h)
        blobs = int(rng.integers(1, 6))
        for _ in range(blobs):
            bx = cx + rng.normal(0.0, 0.05 * span)
            by = cy + rng.normal(0.0, 0.05 * span)
            sigma = rng.uniform(0.04, 0.1) * span
            bump = np.exp(-((cols - bx) ** 2 + (rows - by) ** 2) / (2.0 * sigma**2))
            wobble = _smooth_noise(shape, rng, scale=span / 18.0) * 0.35
            field = np.maximum(field, bump + wobble)
    return field


def _mask_at_threshold(field: np.ndarray, threshold: float, connected: bool) -> np.ndarray:
    mask = field >= threshold
    if not connected or not mask.any():
        return mask
    labels, n = ndimage.label(mask)
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(sizes.argmax())


def _colony_mask(field: np.ndarray, fraction_target: float, connected: bool) -> np.ndarray:
    """Threshold `field` so the mask hits fraction_target; bisection on the level."""
    h, w = field.shape
    if fraction_target <= 0.0:
        return np.zeros((h, w), dtype=np.uint8)
    want = fraction_target * h * w
    lo, hi = float(field.min()) - 1.0, float(field.max())
    best_mask = _mask_at_threshold(field, lo, connected)
    best_err = abs(best_mask.sum() - want)
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        mask = _mask_at_threshold(field, mid, connected)
        size = mask.sum()
        err = abs(size - want)
        if err < best_err:
            best_err, best_mask = err, mask
        if size > want:
            lo = mid
        else:
            hi = mid
    return best_mask.astype(np.uint8)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _round_u8(values: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)


# Background families: rock tone/lightness/texture plus the blue-tint split
# between the two seasonal red materials, guano stain and algal bloom. Tints
# overlap across families (one family's stain looks like another's bloom),
# so telling them apart requires having seen the family.
ROCK_FAMILIES = (
    {"name": "granite", "tone": 2.0, "l": 152.0, "warm": 3.0, "brown": 5.0,
     "amp": 11.0, "scale": 52.0, "sigma": 7.0, "guano_tint": 14.0, "algae_tint": 2.0},
    {"name": "basalt", "tone": 6.0, "l": 74.0, "warm": 5.0, "brown": 7.0,
     "amp": 9.0, "scale": 34.0, "sigma": 6.5, "guano_tint": 10.0, "algae_tint": -2.0},
    {"name": "till", "tone": 16.0, "l": 116.0, "warm": 8.0, "brown": 12.0,
     "amp": 13.0, "scale": 46.0, "sigma": 8.0, "guano_tint": 6.0, "algae_tint": -6.0},
    {"name": "moraine", "tone": 26.0, "l": 104.0, "warm": 9.0, "brown": 14.0,
     "amp": 12.0, "scale": 40.0, "sigma": 8.5, "guano_tint": 2.0, "algae_tint": -10.0},
    {"name": "sediment", "tone": 11.0, "l": 176.0, "warm": 5.0, "brown": 8.0,
     "amp": 10.0, "scale": 64.0, "sigma": 6.0, "guano_tint": 12.0, "algae_tint": 0.0},
    {"name": "gravel", "tone": 21.0, "l": 92.0, "warm": 7.0, "brown": 10.0,
     "amp": 15.0, "scale": 18.0, "sigma": 9.5, "guano_tint": 4.0, "algae_tint": -8.0},
)

ALGAE_COLONY_FRACTION = 0.55  # colonies whose scenes can carry algal blooms


def _family_of(seed: int) -> int:
    return int(np.random.default_rng([seed, 4]).integers(len(ROCK_FAMILIES)))


def _has_algae(seed: int) -> bool:
    return bool(np.random.default_rng([seed, 6]).random() < ALGAE_COLONY_FRACTION)


def _rock_channels(shape, rng, l_base, tone, warm_mu, brown_mu, lowfreq, sigma=8.0):
    lightness = np.clip(l_base + lowfreq + rng.normal(0.0, sigma, shape), 40.0, 210.0)
    warm = tone + np.clip(rng.normal(warm_mu, 4.0, shape), -8.0, ROCK_REDNESS_MAX)
    warm = np.clip(warm, -8.0, NON_GUANO_REDNESS_CEIL)
    brown = np.clip(rng.normal(brown_mu, 3.0, shape), 0.0, 20.0)
    r = lightness + warm / 2.0
    g = lightness - warm / 2.0
    b = g - brown
    return r, g, b


def _seasonal_channels(region, rng, lowfreq, tone, l_base, warm_mu, tint_mu, shape):
    """Red seasonal material (stain or bloom): redness well above the rock,
    blue tint set by the family."""
    lightness = np.clip(l_base + lowfreq + rng.normal(0.0, 7.0, shape), 60.0, 185.0)
    redness = tone + np.clip(rng.normal(warm_mu, 7.0, shape), GUANO_REDNESS_MIN, 73.0)
    tint = np.clip(rng.normal(tint_mu, 3.0, shape), tint_mu - 5.0, tint_mu + 5.0)
    r = lightness + redness / 2.0
    g = lightness - redness / 2.0
    b = g - tint
    return r, g, b


def _algae_mask(shape, rng, fraction: float) -> np.ndarray:
    field = _colony_field(shape, int(rng.integers(1, 4)), rng)
    return _colony_mask(field, fraction, connected=False).astype(bool)


def _render_image(truth_mask: np.ndarray, rng: np.random.Generator,
                  background_texture: str, family: int = 0,
                  algae: bool = False) -> np.ndarray:
    h, w = truth_mask.shape
    fam = ROCK_FAMILIES[family % len(ROCK_FAMILIES)]
    tone = float(np.clip(fam["tone"] + rng.uniform(-3.0, 3.0), 0.0, SCENE_TONE_MAX))
    rock_l = float(np.clip(fam["l"] + rng.uniform(-12.0, 12.0), 55.0, 190.0))
    rock_warm = float(np.clip(fam["warm"] + rng.uniform(-3.0, 3.0), 0.0, 12.0))
    rock_brown = fam["brown"] + rng.uniform(-2.0, 2.0)
    guano_l = rng.uniform(85.0, 130.0)
    guano_warm = rng.uniform(40.0, 62.0)

    lowfreq = _smooth_noise((h, w), rng, scale=fam["scale"]) * (fam["amp"] * rng.uniform(0.8, 1.25))
    if background_texture == "mixed":
        patches = _smooth_noise((h, w), rng, scale=90.0)
        lowfreq = lowfreq + np.where(patches > 0.6, rng.uniform(-28.0, 28.0), 0.0)

    r, g, b = _rock_channels((h, w), rng, rock_l, tone, rock_warm, rock_brown,
                             lowfreq, sigma=fam["sigma"])

    if algae:
        bloom = _algae_mask((h, w), rng, float(rng.uniform(0.01, 0.05))) & (truth_mask == 0)
        if bloom.any():
            ar, ag, ab = _seasonal_channels(bloom, rng, lowfreq, tone,
                                            rng.uniform(90.0, 140.0), rng.uniform(40.0, 62.0),
                                            fam["algae_tint"], (h, w))
            r = np.where(bloom, ar, r)
            g = np.where(bloom, ag, g)
            b = np.where(bloom, ab, b)

    stained = truth_mask > 0
    if stained.any():
        gr, gg, gb = _seasonal_channels(stained, rng, lowfreq, tone, guano_l,
                                        guano_warm, fam["guano_tint"], (h, w))
        r = np.where(stained, gr, r)
        g = np.where(stained, gg, g)
        b = np.where(stained, gb, b)

    return np.stack([_round_u8(r), _round_u8(g), _round_u8(b)], axis=-1)


def _default_transform() -> GeoTransform:
    return GeoTransform(0.0, 1.0, 0.0, 0.0, 0.0, -1.0)


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Render one scene from scratch; pure function of the spec.

    The nominal colony outline doubles as both truth and weak mask here;
    `build_archive` is where the two diverge via misregistration.
    """
    layout_rng = np.random.default_rng([spec.seed, 0])
    appearance_rng = np.random.default_rng([spec.seed, 1])
    shape = (spec.height, spec.width)
    if spec.guano_fraction_target > 0.0:
        field = _colony_field(shape, spec.colony_count, layout_rng)
        nominal = _colony_mask(field, spec.guano_fraction_target, connected=spec.colony_count == 1)
    else:
        nominal = np.zeros(shape, dtype=np.uint8)

    image = _render_image(nominal, appearance_rng, spec.background_texture,
                          _family_of(spec.seed), _has_algae(spec.seed))
    raster = GeoRaster(image, _default_transform(), DEFAULT_CRS)
    visible = bool((guano_pixel_mask(image) & (nominal > 0)).any())
    return SyntheticScene(raster, nominal, nominal.copy(), visible)


# ---------------------------------------------------------------------------
# corruption
# ---------------------------------------------------------------------------

def _coverage_region(shape, rng, coverage, scale) -> np.ndarray:
    if coverage >= 1.0:
        return np.ones(shape, dtype=bool)
    field = _smooth_noise(shape, rng, scale=scale)
    level = np.quantile(field, 1.0 - coverage)
    return field >= level


def _paint_overlay(channels, region, rng, l_mu, l_sigma_range, l_clip):
    r, g, b = channels
    n = int(region.sum())
    sigma = rng.uniform(*l_sigma_range)
    lightness = np.clip(rng.normal(l_mu, sigma, n), *l_clip)
    warm = np.clip(rng.normal(0.0, 3.0, n), -8.0, 8.0)
    r[region] = lightness + warm / 2.0
    g[region] = lightness - warm / 2.0
    b[region] = lightness + np.clip(rng.normal(2.0, 2.0, n), -4.0, 8.0)


def apply_corruption(scene: SyntheticScene, params: CorruptionParams,
                     seed: int = 0) -> SyntheticScene:
    """Overlay corruption on the rendered appearance; geometry is untouched.

    Deterministic in (scene, params, seed). The returned scene's
    `guano_visible` is recomputed by scanning the corrupted render: it stays
    True only while more than 1% of the uncorrupted stain pixels still carry
    the guano color signature.
    """
    if params.kind == "none" or (params.kind in ("snow", "cloud", "shadow") and params.coverage == 0.0):
        return dataclasses.replace(scene, corruption=params)

    rng = np.random.default_rng([seed, 17])
    pixels = scene.image.pixels.astype(np.float64)
    r, g, b = pixels[..., 0], pixels[..., 1], pixels[..., 2]
    truth = scene.truth_mask > 0
    shape = truth.shape

    if params.kind == "snow":
        region = _coverage_region(shape, rng, params.coverage, scale=36.0)
        _paint_overlay((r, g, b), region, rng, rng.uniform(226.0, 246.0), (1.5, 14.0), (205.0, 254.0))
    elif params.kind == "cloud":
        region = _coverage_region(shape, rng, params.coverage, scale=80.0)
        _paint_overlay((r, g, b), region, rng, rng.uniform(208.0, 235.0), (1.0, 8.0), (195.0, 248.0))
    elif params.kind == "shadow":
        region = _coverage_region(shape, rng, params.coverage, scale=60.0)
        for ch in (r, g, b):
            ch[region] = ch[region] * SHADOW_FACTOR
    else:
        # off_season: every seasonal red material (stain and algal bloom)
        # disappears; repaint with background estimated from the scene
        bg = ~truth
        if bg.any():
            l_est = float(np.median((r[bg] + g[bg]) / 2.0))
            tone_est = float(np.median(r[bg] - g[bg]))
            brown_est = float(np.median(g[bg] - b[bg]))
        else:
            l_est, tone_est, brown_est = 120.0, 6.0, 8.0
        red_level = min(tone_est + 13.0, 49.0)  # above any rock, below any seasonal red
        seasonal = truth | ((r - g) >= red_level)
        if seasonal.any():
            lowfreq = _smooth_noise(shape, rng, scale=48.0) * 10.0
            rr, rg, rb = _rock_channels(shape, rng, l_est, tone_est, 0.0, brown_est, lowfreq)
            r[seasonal] = rr[seasonal]
            g[seasonal] = rg[seasonal]
            b[seasonal] = rb[seasonal]

    image = np.stack([_round_u8(r), _round_u8(g), _round_u8(b)], axis=-1)
    raster = GeoRaster(image, scene.image.transform, scene.image.crs)

    total = int(truth.sum())
    visible_now = int((guano_pixel_mask(image) & truth).sum())
    visible = scene.guano_visible and total > 0 and visible_now > 0.01 * total
    return SyntheticScene(raster, scene.truth_mask, scene.weak_mask, visible, params)


# ---------------------------------------------------------------------------
# misregistration
# ---------------------------------------------------------------------------

def misregister(mask: np.ndarray, params: MisregistrationParams) -> np.ndarray:
    """Translate/rotate a binary mask with zero fill; nearest-neighbor resampling.

    Pure interior translations preserve the positive-pixel count exactly,
    which is what makes percent-cover supervision robust to this corruption.
    """
    arr = (np.asarray(mask) > 0).astype(np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    bound = 0.25 * min(h, w)
    if abs(params.shift_x) > bound or abs(params.shift_y) > bound:
        raise ValueError(
            f"shift ({params.shift_x}, {params.shift_y}) exceeds bound {bound} for a {w}x{h} mask")

    if params.rotation == 0.0 and float(params.shift_x).is_integer() and float(params.shift_y).is_integer():
        return _shift_integer(arr, int(params.shift_x), int(params.shift_y))

    theta = np.deg2rad(params.rotation)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx = cols - cx - params.shift_x
    dy = rows - cy - params.shift_y
    src_c = cos_t * dx + sin_t * dy + cx
    src_r = -sin_t * dx + cos_t * dy + cy
    # half-up rounding keeps the lattice offset constant for pure translations
    src_ci = np.floor(src_c + 0.5).astype(np.int64)
    src_ri = np.floor(src_r + 0.5).astype(np.int64)
    valid = (src_ri >= 0) & (src_ri < h) & (src_ci >= 0) & (src_ci < w)
    out = np.zeros_like(arr)
    out[valid] = arr[src_ri[valid], src_ci[valid]]
    return out


def _shift_integer(arr: np.ndarray, sx: int, sy: int) -> np.ndarray:
    out = np.zeros_like(arr)
    h, w = arr.shape
    src_r0, src_r1 = max(0, -sy), min(h, h - sy)
    src_c0, src_c1 = max(0, -sx), min(w, w - sx)
    if src_r0 >= src_r1 or src_c0 >= src_c1:
        return out
    out[src_r0 + sy:src_r1 + sy, src_c0 + sx:src_c1 + sx] = arr[src_r0:src_r1, src_c0:src_c1]
    return out


# ---------------------------------------------------------------------------
# archive construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorruptionSchedule:
    """Per-scene corruption sampling for archive building."""

    corrupt_fraction: float = 0.3
    kinds: tuple[str, ...] = ("snow", "cloud", "off_season")
    kind_weights: tuple[float, ...] = (0.3, 0.2, 0.5)
    coverage_range: tuple[float, float] = (0.75, 1.0)

    def sample(self, rng: np.random.Generator) -> CorruptionParams:
        if rng.random() >= self.corrupt_fraction:
            return CorruptionParams()
        weights = np.asarray(self.kind_weights, dtype=np.float64)
        kind = str(rng.choice(list(self.kinds), p=weights / weights.sum()))
        if kind == "off_season":
            return CorruptionParams(kind, 1.0)
        return CorruptionParams(kind, float(rng.uniform(*self.coverage_range)))


@dataclass(frozen=True)
class MisregistrationSchedule:
    """Shift magnitudes are uniform in [shift_min, shift_max] px with random sign.

    The default reproduces shifts uniform in [-15, 15] px; no field-measured
    magnitude exists, so treat this as tunable.
    """

    shift_min: float = 0.0
    shift_max: float = 15.0
    rotation_max: float = 0.0

    def sample(self, rng: np.random.Generator) -> MisregistrationParams:
        def one() -> float:
            mag = rng.uniform(self.shift_min, self.shift_max)
            return float(mag if rng.random() < 0.5 else -mag)

        sx, sy = one(), one()
        rot = float(rng.uniform(-self.rotation_max, self.rotation_max)) if self.rotation_max > 0 else 0.0
        return MisregistrationParams(sx, sy, rot)


@dataclass(frozen=True)
class SceneRecord:
    colony_id: str
    scene_id: str
    image_path: str
    truth_mask_path: str
    weak_mask_path: str
    guano_visible: bool
    corruption_kind: str
    geotransform: tuple[float, ...]
    crs: str

    def to_dict(self) -> dict:
        return {
            "colony_id": self.colony_id,
            "scene_id": self.scene_id,
            "image_path": self.image_path,
            "truth_mask_path": self.truth_mask_path,
            "weak_mask_path": self.weak_mask_path,
            "guano_visible": self.guano_visible,
            "corruption_kind": self.corruption_kind,
            "geotransform": list(self.geotransform),
            "crs": self.crs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRecord":
        return cls(
            colony_id=str(d["colony_id"]),
            scene_id=str(d["scene_id"]),
            image_path=str(d["image_path"]),
            truth_mask_path=str(d["truth_mask_path"]),
            weak_mask_path=str(d["weak_mask_path"]),
            guano_visible=bool(d["guano_visible"]),
            corruption_kind=str(d["corruption_kind"]),
            geotransform=tuple(float(v) for v in d["geotransform"]),
            crs=str(d["crs"]),
        )


@dataclass
class ArchiveIndex:
    """Scene manifest; paths are stored relative to the archive root."""

    root: Path
    records: list[SceneRecord]

    def save(self) -> Path:
        path = self.root / INDEX_NAME
        lines = [json.dumps(rec.to_dict(), sort_keys=True) for rec in self.records]
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        return path

    @classmethod
    def load(cls, root: Path | str) -> "ArchiveIndex":
        root = Path(root)
        index_path = root if root.suffix == ".jsonl" else root / INDEX_NAME
        records = []
        for line in index_path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line:
                records.append(SceneRecord.from_dict(json.loads(line)))
        return cls(index_path.parent, records)

    def load_raster(self, record: SceneRecord) -> GeoRaster:
        pixels = load_image(self.root / record.image_path)
        return GeoRaster(pixels, GeoTransform.from_list(record.geotransform), record.crs)

    def load_truth(self, record: SceneRecord) -> np.ndarray:
        return load_mask(self.root / record.truth_mask_path)

    def load_weak(self, record: SceneRecord) -> np.ndarray:
        return load_mask(self.root / record.weak_mask_path)

    def scene_shape(self, record: SceneRecord) -> tuple[int, int]:
        return image_size(self.root / record.image_path)

    def polygons_path(self) -> Path:
        return self.root / POLYGONS_NAME


def build_archive(specs: list[SceneSpec],
                  corruption_schedule: CorruptionSchedule | None,
                  misreg_schedule: MisregistrationSchedule | None,
                  out_dir: Path | str,
                  scenes_per_colony: int = 8,
                  colony_ids: list[str] | None = None) -> ArchiveIndex:
    """Write a multi-year synthetic archive: one colony per spec, several scenes each.

    Every scene of a colony shares the colony's nominal outline (the weak
    mask) while its rendered stain is independently misregistered, so the
    archive mimics a time series whose masks are only image-statistic
    trustworthy. A `polygons.geojson` with one traced outline per colony is
    written next to the index.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create archive directory {out_dir}: {exc}") from exc

    if colony_ids is None:
        colony_ids = [f"colony_{i:04d}" for i in range(len(specs))]
    if len(colony_ids) != len(specs):
        raise ValueError("colony_ids must match specs in length")

    spacing = (max((s.width for s in specs), default=512)) * 10.0
    records: list[SceneRecord] = []
    polygons: list[ColonyPolygon] = []

    for idx, (colony_id, spec) in enumerate(zip(colony_ids, specs)):
        layout_rng = np.random.default_rng([spec.seed, 0])
        family = _family_of(spec.seed)
        algae = _has_algae(spec.seed)
        shape = (spec.height, spec.width)
        if spec.guano_fraction_target > 0.0:
            field = _colony_field(shape, spec.colony_count, layout_rng)
            nominal = _colony_mask(field, spec.guano_fraction_target, connected=spec.colony_count == 1)
        else:
            nominal = np.zeros(shape, dtype=np.uint8)

        transform = GeoTransform(idx * spacing, 1.0, 0.0, 0.0, 0.0, -1.0)
        if nominal.any():
            polygons.append(outline_mask(nominal, transform, colony_id))

        colony_dir = out_dir / colony_id
        colony_dir.mkdir(exist_ok=True)
        for j in range(scenes_per_colony):
            scene_id = f"scene_{j:03d}"
            appearance_rng = np.random.default_rng([spec.seed, 1, j])
            misreg_rng = np.random.default_rng([spec.seed, 2, j])
            corruption_rng = np.random.default_rng([spec.seed, 3, j])

            if misreg_schedule is not None and nominal.any():
                truth = misregister(nominal, misreg_schedule.sample(misreg_rng))
            else:
                truth = nominal.copy()

            image = _render_image(truth, appearance_rng, spec.background_texture, family, algae)
            raster = GeoRaster(image, transform, DEFAULT_CRS)
            visible = bool((guano_pixel_mask(image) & (truth > 0)).any())
            scene = SyntheticScene(raster, truth, nominal.copy(), visible)

            if corruption_schedule is not None:
                params = corruption_schedule.sample(corruption_rng)
                scene = apply_corruption(scene, params, seed=int(corruption_rng.integers(2**62)))

            rel = f"{colony_id}/{scene_id}"
            paths = {
                "image": f"{rel}.png",
                "truth": f"{rel}_truth.png",
                "weak": f"{rel}_weak.png",
            }
            try:
                save_image(out_dir / paths["image"], scene.image.pixels)
                save_mask(out_dir / paths["truth"], scene.truth_mask)
                save_mask(out_dir / paths["weak"], scene.weak_mask)
            except OSError as exc:
                raise OSError(f"failed to write scene files under {out_dir / rel}: {exc}") from exc

            records.append(SceneRecord(
                colony_id=colony_id,
                scene_id=scene_id,
                image_path=paths["image"],
                truth_mask_path=paths["truth"],
                weak_mask_path=paths["weak"],
                guano_visible=scene.guano_visible,
                corruption_kind=scene.corruption.kind,
                geotransform=tuple(transform.to_list()),
                crs=DEFAULT_CRS,
            ))

    records.sort(key=lambda r: (r.colony_id, r.scene_id))
    index = ArchiveIndex(out_dir, records)
    index.save()
    save_polygons(polygons, out_dir / POLYGONS_NAME)
    return index
