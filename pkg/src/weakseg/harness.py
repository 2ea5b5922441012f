"""End-to-end experiment orchestration: the four-variant ablation.

Variant semantics:
    S         hand data only, pixel loss
    S_plus    hand + weak data, pixel loss on both (misaligned masks trusted
              pixel-wise -- the naive baseline)
    SR_plus   hand pixel loss + weak mean-activation regression
    C_SR_plus SR_plus on the classifier-filtered weak pool

All randomness in a run derives from the configured seeds; two runs with the
same config and archive produce byte-identical reports up to the wall-clock
and timestamp fields.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import report as report_figs
from .classifier import ClassifierConfig, ClassifierModel, filter_weak_positives, save_classifier, train_classifier
from .geo import ColonyPolygon, load_polygons
from .images import load_image, save_image, save_mask
from .inference import StitchConfig, binarize, stitch_predict
from .metrics import iou
from .pipeline import (HAND, WEAK, CropRecord, Patch, crop_colony, entropy_filter,
                       load_crops, patchify, save_crops, with_mask)
from .scenegen import (ArchiveIndex, CorruptionSchedule, MisregistrationSchedule,
                       SceneSpec, build_archive)
from .segmenter import (SegmenterConfig, save_segmenter, train_segmenter)

VARIANTS = ("S", "S_plus", "SR_plus", "C_SR_plus")
CONFIG_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1
CACHE_ENV_VAR = "WEAKSEG_CACHE"

VARIANT_TABLE_ROWS = {
    "S": ("hand", "pixel"),
    "S_plus": ("hand+weak", "pixel(hand) + pixel(weak)"),
    "SR_plus": ("hand+weak", "pixel(hand) + mean-regression(weak)"),
    "C_SR_plus": ("hand+filtered weak", "pixel(hand) + mean-regression(weak)"),
}


@dataclass(frozen=True)
class PipelineParams:
    padding: int = 100
    entropy_threshold: float = 5.0
    patch_size: int = 96
    patch_step: int = 96
    cnet_patch_step: int = 48


@dataclass(frozen=True)
class SplitParams:
    """Colony-disjoint held-out split; hand labels live on a few uncorrupted
    training scenes, mirroring a small expert-annotated set.

    Hand colonies are the least ambiguous candidates: annotators prefer
    reference images where nothing stain-colored sits outside the outline.
    """

    test_fraction: float = 0.2
    hand_colonies: int = 4
    hand_scenes_per_colony: int = 1
    test_scenes_per_colony: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    archive_dir: str
    output_dir: str
    variants: tuple[str, ...] = VARIANTS
    seeds: tuple[int, ...] = (0, 1, 2)
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    split: SplitParams = field(default_factory=SplitParams)
    classifier: ClassifierConfig = field(default_factory=lambda: ClassifierConfig(
        input_size=96, architecture="small_cnn", epochs=30, batch_size=16))
    segmenter: SegmenterConfig = field(default_factory=lambda: SegmenterConfig(
        train_size=96, infer_size=256, depth=4, base_channels=16,
        batch_size=12, epochs=3, steps_per_epoch=60, hand_weight=12.0))
    stitch: StitchConfig = field(default_factory=StitchConfig)
    schema_version: int = CONFIG_SCHEMA_VERSION

    def __post_init__(self) -> None:
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ValueError(f"unknown variants {sorted(unknown)}; valid: {VARIANTS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.classifier.input_size != self.pipeline.patch_size:
            raise ValueError("classifier input_size must equal pipeline patch_size")
        if self.segmenter.train_size != self.pipeline.patch_size:
            raise ValueError("segmenter train_size must equal pipeline patch_size")
        if self.segmenter.infer_size != self.stitch.patch_size:
            raise ValueError("segmenter infer_size must equal stitch patch_size")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "archive_dir": self.archive_dir,
            "output_dir": self.output_dir,
            "variants": list(self.variants),
            "seeds": list(self.seeds),
            "pipeline": dataclasses.asdict(self.pipeline),
            "split": dataclasses.asdict(self.split),
            "classifier": dataclasses.asdict(self.classifier),
            "segmenter": self.segmenter.to_dict(),
            "stitch": dataclasses.asdict(self.stitch),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        version = d.get("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema version {version}")
        return cls(
            archive_dir=d["archive_dir"],
            output_dir=d["output_dir"],
            variants=tuple(d.get("variants", VARIANTS)),
            seeds=tuple(int(s) for s in d.get("seeds", (0, 1, 2))),
            pipeline=PipelineParams(**d.get("pipeline", {})),
            split=SplitParams(**d.get("split", {})),
            classifier=ClassifierConfig(**d.get("classifier", {})),
            segmenter=SegmenterConfig.from_dict(d["segmenter"]) if "segmenter" in d
            else SegmenterConfig(),
            stitch=StitchConfig(**d.get("stitch", {})),
        )

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def load(cls, path: Path | str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True),
                              encoding="utf-8")


def default_archive_specs(colonies: int = 40, size: int = 512,
                          master_seed: int = 1234) -> list[SceneSpec]:
    """Per-colony scene specs with varied stain coverage and textures."""
    rng = np.random.default_rng([master_seed, 5])
    specs = []
    for _ in range(colonies):
        specs.append(SceneSpec(
            width=size, height=size,
            colony_count=1,
            guano_fraction_target=float(rng.uniform(0.05, 0.14)),
            background_texture="mixed" if rng.random() < 0.4 else "rock",
            seed=int(rng.integers(2**31)),
        ))
    return specs


def build_default_archive(out_dir: Path | str, colonies: int = 40,
                          scenes_per_colony: int = 8, size: int = 512,
                          master_seed: int = 1234,
                          corrupt_fraction: float = 0.3,
                          shift_min: float = 8.0, shift_max: float = 15.0) -> ArchiveIndex:
    """Desk-scale default archive; misregistration shifts of at least 8 px and
    roughly `corrupt_fraction` of scenes corrupted beyond visibility."""
    specs = default_archive_specs(colonies, size, master_seed)
    return build_archive(
        specs,
        CorruptionSchedule(corrupt_fraction=corrupt_fraction),
        MisregistrationSchedule(shift_min=shift_min, shift_max=shift_max),
        out_dir,
        scenes_per_colony=scenes_per_colony,
    )


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------

@dataclass
class SeedData:
    hand_patches: list[Patch]
    weak_patches: list[Patch]
    cnet_hand_patches: list[Patch]
    test_items: list[tuple[str, np.ndarray, np.ndarray]]  # (image_id, image, truth)
    split_info: dict


def _crop_all_colonies(index: ArchiveIndex, polygons: list[ColonyPolygon],
                       params: PipelineParams) -> dict[str, CropRecord]:
    """One padded crop per (colony, scene); seed-independent, so cacheable."""
    cache_dir = _cache_dir(index, params)
    if cache_dir is not None and (cache_dir / "crops.jsonl").exists():
        return {c.crop_id: c for c in load_crops(cache_dir)}

    by_colony = {p.colony_id: p for p in polygons}
    crops: dict[str, CropRecord] = {}
    for record in index.records:
        poly = by_colony.get(record.colony_id)
        if poly is None:
            continue
        raster = index.load_raster(record)
        crop = crop_colony(raster, poly, params.padding, scene_id=record.scene_id)
        crops[crop.crop_id] = crop

    if cache_dir is not None:
        save_crops(list(crops.values()), cache_dir)
    return crops


def _cache_dir(index: ArchiveIndex, params: PipelineParams) -> Path | None:
    root = os.environ.get(CACHE_ENV_VAR)
    if not root:
        return None
    index_text = (index.root / "index.jsonl").read_text(encoding="utf-8")
    key = hashlib.sha256((index_text + json.dumps(dataclasses.asdict(params), sort_keys=True))
                         .encode("utf-8")).hexdigest()[:16]
    return Path(root) / f"crops_{key}"


def _annotation_ambiguity(crop: CropRecord) -> float:
    """Fraction of off-outline pixels that look stain-colored (strong local
    redness); annotators pick reference scenes where this is lowest."""
    red = crop.image[..., 0].astype(np.int16) - crop.image[..., 1].astype(np.int16)
    relative = red - np.median(red)
    outside = crop.weak_mask == 0
    if not outside.any():
        return 1.0
    return float((relative[outside] > 25).mean())


def prepare_seed_data(index: ArchiveIndex, crops: dict[str, CropRecord],
                      config: ExperimentConfig, seed: int) -> SeedData:
    records_by_colony: dict[str, list] = {}
    for record in index.records:
        records_by_colony.setdefault(record.colony_id, []).append(record)
    colonies = sorted(records_by_colony)

    rng = np.random.default_rng([seed, 31])
    order = [colonies[i] for i in rng.permutation(len(colonies))]
    n_test = max(1, round(config.split.test_fraction * len(colonies)))
    test_colonies = set(order[:n_test])
    train_order = order[n_test:]

    # hand candidates: uncorrupted, visible scenes, ranked least-ambiguous first
    candidates: list[tuple[float, str, list[tuple[float, str]]]] = []
    for colony in train_order:
        scored = []
        for record in records_by_colony[colony]:
            if record.corruption_kind != "none" or not record.guano_visible:
                continue
            crop = crops.get(f"{colony}_{record.scene_id}")
            if crop is not None:
                scored.append((_annotation_ambiguity(crop), record.scene_id))
        if scored:
            scored.sort()
            candidates.append((scored[0][0], colony, scored))
    candidates.sort(key=lambda c: (c[0], c[1]))

    hand_pairs: list[tuple[str, str]] = []
    for _, colony, scored in candidates[:config.split.hand_colonies]:
        for _, scene_id in scored[:config.split.hand_scenes_per_colony]:
            hand_pairs.append((colony, scene_id))
    if not hand_pairs:
        raise RuntimeError("no uncorrupted scenes available for hand labelling")
    hand_pair_set = set(hand_pairs)

    hand_patches: list[Patch] = []
    cnet_hand_patches: list[Patch] = []
    pp = config.pipeline
    for colony, scene_id in hand_pairs:
        crop = crops[f"{colony}_{scene_id}"]
        record = next(r for r in records_by_colony[colony] if r.scene_id == scene_id)
        truth = index.load_truth(record)
        r0, c0 = crop.pixel_offset_in_source
        h, w = crop.weak_mask.shape
        hand_crop = with_mask(crop, truth[r0:r0 + h, c0:c0 + w], HAND)
        hand_patches.extend(patchify(hand_crop, pp.patch_size, pp.patch_step))
        cnet_hand_patches.extend(patchify(hand_crop, pp.patch_size, pp.cnet_patch_step))

    weak_crops = [crops[f"{r.colony_id}_{r.scene_id}"]
                  for colony in sorted(set(train_order))
                  for r in records_by_colony[colony]
                  if (colony, r.scene_id) not in hand_pair_set
                  and f"{r.colony_id}_{r.scene_id}" in crops]
    weak_crops = entropy_filter(weak_crops, pp.entropy_threshold)
    weak_patches = [p for crop in weak_crops
                    for p in patchify(crop, pp.patch_size, pp.patch_step)]

    test_items = []
    for colony in sorted(test_colonies):
        clean = [r for r in records_by_colony[colony] if r.corruption_kind == "none"]
        for record in clean[:config.split.test_scenes_per_colony]:
            image = load_image(index.root / record.image_path)
            truth = index.load_truth(record)
            test_items.append((f"{colony}__{record.scene_id}", image, truth))
    if not test_items:
        raise RuntimeError("held-out colonies have no uncorrupted scenes to evaluate on")

    return SeedData(
        hand_patches=hand_patches,
        weak_patches=weak_patches,
        cnet_hand_patches=cnet_hand_patches,
        test_items=test_items,
        split_info={
            "test_colonies": sorted(test_colonies),
            "hand_pairs": [list(p) for p in hand_pairs],
            "n_weak_crops": len(weak_crops),
            "n_hand_patches": len(hand_patches),
            "n_weak_patches": len(weak_patches),
            "n_test_images": len(test_items),
        },
    )


# ---------------------------------------------------------------------------
# variant execution
# ---------------------------------------------------------------------------

def _run_variant(variant: str, data: SeedData, config: ExperimentConfig,
                 seed: int, out_dir: Path) -> dict:
    stage = "setup"
    try:
        result: dict = {"seed": seed}
        weak_pool = data.weak_patches
        filter_stats = None
        cnet_history = None

        if variant == "C_SR_plus":
            stage = "classifier-training"
            ccfg = dataclasses.replace(config.classifier, seed=seed)
            cmodel, cnet_history = train_classifier(data.cnet_hand_patches, ccfg)
            save_classifier(cmodel, out_dir / f"cnet_{variant}_seed{seed}.ckpt")
            stage = "weak-filtering"
            weak_pool, _, stats = filter_weak_positives(cmodel, weak_pool)
            filter_stats = {
                "total_weak_positive": stats.total_weak_positive,
                "kept": stats.kept,
                "removed": stats.removed,
                "removed_fraction": stats.removed_fraction,
            }
        elif variant == "S":
            weak_pool = []
        elif variant == "S_plus":
            # same tiles and masks as SR_plus, but routed through the pixel loss
            weak_pool = [dataclasses.replace(p, provenance=HAND) for p in weak_pool]
        elif variant != "SR_plus":
            raise ValueError(f"unknown variant {variant!r}")

        stage = "segmenter-training"
        scfg = dataclasses.replace(config.segmenter, seed=seed)
        model, history = train_segmenter(data.hand_patches, weak_pool, scfg)
        save_segmenter(model, out_dir / f"snet_{variant}_seed{seed}.ckpt")

        stage = "stitched-inference"
        pred_dir = out_dir.parent / "predictions" / variant / f"seed_{seed}"
        pred_dir.mkdir(parents=True, exist_ok=True)
        per_image = []
        for image_id, image, truth in data.test_items:
            prob = stitch_predict(model, image, config.stitch)
            pred = binarize(prob, config.stitch.binarize_threshold)
            save_mask(pred_dir / f"{image_id}.png", pred)
            per_image.append([image_id, iou(pred, truth)])

        stage = "scoring"
        result.update({
            "miou": float(np.mean([v for _, v in per_image])),
            "per_image_iou": per_image,
            "history": history,
            "filter_stats": filter_stats,
            "cnet_history": cnet_history,
            "n_weak_used": len(weak_pool),
        })
        return result
    except Exception as exc:  # noqa: BLE001 - variant failures must not sink the run
        return {"seed": seed, "error": f"[{stage}] {type(exc).__name__}: {exc}"}


@dataclass
class RunReport:
    config: dict
    config_hash: str
    results: dict  # variant -> {str(seed) -> result dict}
    medians: dict  # variant -> median miou (successful seeds only)
    split_info: dict  # str(seed) -> split summary
    wall_clock_seconds: float
    created_at: str
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self, exclude_volatile: bool = False) -> dict:
        d = {
            "schema_version": self.schema_version,
            "config": self.config,
            "config_hash": self.config_hash,
            "results": self.results,
            "medians": self.medians,
            "split_info": self.split_info,
        }
        if not exclude_volatile:
            d["wall_clock_seconds"] = self.wall_clock_seconds
            d["created_at"] = self.created_at
        return d

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True),
                              encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            config=d["config"],
            config_hash=d["config_hash"],
            results=d["results"],
            medians=d["medians"],
            split_info=d.get("split_info", {}),
            wall_clock_seconds=float(d.get("wall_clock_seconds", 0.0)),
            created_at=d.get("created_at", ""),
            schema_version=d.get("schema_version", REPORT_SCHEMA_VERSION),
        )

    @classmethod
    def load(cls, path: Path | str) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Execute every (variant, seed) cell and persist report, tables, figures,
    checkpoints and per-image predictions under config.output_dir."""
    t0 = time.time()
    archive_root = Path(config.archive_dir)
    if not (archive_root / "index.jsonl").exists():
        raise FileNotFoundError(f"archive index not found under {archive_root}")
    index = ArchiveIndex.load(archive_root)
    polygons = load_polygons(index.polygons_path())

    out_dir = Path(config.output_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    torch.set_num_threads(config.segmenter.threads)
    crops = _crop_all_colonies(index, polygons, config.pipeline)

    results: dict = {variant: {} for variant in config.variants}
    split_info: dict = {}
    for seed in config.seeds:
        data = prepare_seed_data(index, crops, config, seed)
        split_info[str(seed)] = data.split_info
        for variant in config.variants:
            results[variant][str(seed)] = _run_variant(variant, data, config, seed, ckpt_dir)

    medians = {}
    for variant in config.variants:
        values = [r["miou"] for r in results[variant].values() if "miou" in r]
        if values:
            medians[variant] = float(np.median(values))

    report = RunReport(
        config=config.to_dict(),
        config_hash=config.config_hash(),
        results=results,
        medians=medians,
        split_info=split_info,
        wall_clock_seconds=time.time() - t0,
        created_at=datetime.now(timezone.utc).isoformat(),
    )
    report.save(out_dir / "report.json")
    _write_report_csv(report, out_dir / "report.csv")
    report_figs.save_miou_figure(results, out_dir / "figures" / "miou_by_variant.png")
    report_figs.save_history_figure(results, out_dir / "figures" / "loss_curves.png")
    return report


def _write_report_csv(report: RunReport, path: Path | str) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Method", "Data", "Loss Function", "mIoU"])
        for variant in report.results:
            data_desc, loss_desc = VARIANT_TABLE_ROWS.get(variant, ("?", "?"))
            median = report.medians.get(variant)
            writer.writerow([variant, data_desc, loss_desc,
                             f"{median:.4f}" if median is not None else "failed"])


# ---------------------------------------------------------------------------
# overlays and report comparison
# ---------------------------------------------------------------------------

def emit_overlays(images: list[np.ndarray], masks: list[np.ndarray],
                  out_dir: Path | str, names: list[str] | None = None,
                  alpha: float = 0.45) -> list[Path]:
    """Side-by-side input / red-overlay PNGs, one per (image, mask) pair."""
    if len(images) != len(masks):
        raise ValueError("images and masks must pair up")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if names is None:
        names = [f"overlay_{i:04d}" for i in range(len(images))]

    written: list[Path] = []
    failures: list[str] = []
    for name, image, mask in zip(names, images, masks):
        image = np.asarray(image)
        mask = np.asarray(mask) > 0
        if mask.shape != image.shape[:2]:
            raise ValueError(f"{name}: mask shape {mask.shape} != image shape {image.shape[:2]}")
        overlaid = image.astype(np.float64).copy()
        red = np.array([255.0, 0.0, 0.0])
        overlaid[mask] = (1.0 - alpha) * overlaid[mask] + alpha * red
        side_by_side = np.concatenate([image, np.floor(overlaid + 0.5).astype(np.uint8)], axis=1)
        path = out_dir / f"{name}.png"
        try:
            save_image(path, side_by_side)
            written.append(path)
        except OSError as exc:
            failures.append(f"{path}: {exc}")
    if failures:
        raise OSError("failed to write overlays: " + "; ".join(failures))
    return written


def compare_reports(reports: list[RunReport | dict]) -> dict:
    """Merge reports and compute per-seed / median deltas between variants,
    plus whether the expected quality ordering holds strictly:
    C_SR_plus > SR_plus > S > S_plus.
    """
    if len(reports) < 2:
        raise ValueError("compare_reports needs at least two reports")
    dicts = [r.to_dict() if isinstance(r, RunReport) else r for r in reports]
    variant_sets = [set(d["results"]) for d in dicts]
    common = set.intersection(*variant_sets)
    if not common:
        raise ValueError("reports share no variants; nothing to compare")

    merged: dict[str, dict[str, float]] = {}
    for d in dicts:
        for variant, runs in d["results"].items():
            for seed, run in runs.items():
                if "miou" in run:
                    merged.setdefault(variant, {})[seed] = run["miou"]

    medians = {v: float(np.median(list(runs.values()))) for v, runs in merged.items() if runs}
    deltas = {}
    variants = sorted(merged)
    for i, a in enumerate(variants):
        for b in variants[i + 1:]:
            shared = sorted(set(merged[a]) & set(merged[b]))
            deltas[f"{a}-{b}"] = {
                "median_delta": medians[a] - medians[b],
                "per_seed": {s: merged[a][s] - merged[b][s] for s in shared},
            }

    ordering_chain = ("C_SR_plus", "SR_plus", "S", "S_plus")
    ordering_holds = all(v in medians for v in ordering_chain) and all(
        medians[ordering_chain[i]] > medians[ordering_chain[i + 1]]
        for i in range(len(ordering_chain) - 1))

    return {
        "medians": medians,
        "deltas": deltas,
        "ordering_holds": bool(ordering_holds),
        "compared_variants": sorted(merged),
    }
