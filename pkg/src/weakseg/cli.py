"""Command-line entry points.

Six commands are installed: `pipeline` (crop / filter-entropy / patchify),
`cnet` (train / filter / eval), `snet` (train), `infer`, `evaluate` and
`experiment` (make-archive / run / compare / overlays).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _fail(message: str) -> "NoReturn":  # noqa: F821
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(2)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def pipeline_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pipeline",
                                     description="Archive query, cropping, entropy filtering, patchification")
    sub = parser.add_subparsers(dest="command", required=True)

    p_crop = sub.add_parser("crop", help="crop every colony from every matching scene")
    p_crop.add_argument("--archive", required=True, help="archive directory (with index.jsonl)")
    p_crop.add_argument("--polygons", required=True, help="GeoJSON FeatureCollection of colony outlines")
    p_crop.add_argument("--padding", type=int, default=100)
    p_crop.add_argument("--out", default="crops", help="output crop store directory")

    p_ent = sub.add_parser("filter-entropy", help="drop low-information crops")
    p_ent.add_argument("--crops", required=True, help="crop store directory or manifest")
    p_ent.add_argument("--threshold", type=float, default=5.0,
                       help="entropy in bits; crops at or below are discarded")
    p_ent.add_argument("--out", default=None, help="filtered manifest path")

    p_patch = sub.add_parser("patchify", help="cut crops into fixed-size training patches")
    p_patch.add_argument("--crops", required=True)
    p_patch.add_argument("--size", type=int, default=384)
    p_patch.add_argument("--step", type=int, default=192)
    p_patch.add_argument("--out", default="patches")

    args = parser.parse_args(argv)

    from . import pipeline as pl
    from .geo import load_polygons
    from .scenegen import ArchiveIndex

    if args.command == "crop":
        index = ArchiveIndex.load(Path(args.archive))
        polygons = load_polygons(args.polygons)
        matches = pl.query_archive(polygons, index)
        crops = []
        for poly, record in matches:
            raster = index.load_raster(record)
            crops.append(pl.crop_colony(raster, poly, args.padding, scene_id=record.scene_id))
        manifest = pl.save_crops(crops, args.out)
        print(f"wrote {len(crops)} crops -> {manifest}")

    elif args.command == "filter-entropy":
        manifest = Path(args.crops)
        if manifest.is_dir():
            manifest = manifest / pl.CROP_MANIFEST
        records = [json.loads(line) for line in manifest.read_text(encoding="utf-8").splitlines()
                   if line.strip()]
        kept = [r for r in records if r["entropy_bits"] > args.threshold]
        out = Path(args.out) if args.out else manifest.with_name("crops_filtered.jsonl")
        out.write_text("\n".join(json.dumps(r, sort_keys=True) for r in kept)
                       + ("\n" if kept else ""), encoding="utf-8")
        print(f"retained {len(kept)}/{len(records)} crops (threshold {args.threshold} bits) -> {out}")

    elif args.command == "patchify":
        crops = pl.load_crops(args.crops)
        patches = [p for crop in crops for p in pl.patchify(crop, args.size, args.step)]
        manifest = pl.save_patches(patches, args.out)
        print(f"wrote {len(patches)} patches from {len(crops)} crops -> {manifest}")

    return 0


# ---------------------------------------------------------------------------
# cnet
# ---------------------------------------------------------------------------

def cnet_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cnet", description="Guano-presence classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train")
    p_train.add_argument("--patches", required=True, help="hand-labelled patch manifest")
    p_train.add_argument("--epochs", type=int, default=10)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--arch", choices=("small_cnn", "residual_18"), default="small_cnn")
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--batch-size", type=int, default=32)
    p_train.add_argument("--balanced", action="store_true", help="sample classes evenly")
    p_train.add_argument("--out", default="cnet.ckpt")

    p_filter = sub.add_parser("filter")
    p_filter.add_argument("--model", required=True)
    p_filter.add_argument("--patches", required=True, help="weakly-annotated patch manifest")
    p_filter.add_argument("--out", required=True, help="output directory for the kept patches")

    p_eval = sub.add_parser("eval")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--patches", required=True)
    p_eval.add_argument("--out", default=None, help="optional JSON output path")

    args = parser.parse_args(argv)

    from . import classifier as cls
    from . import pipeline as pl
    from .metrics import precision_recall

    if args.command == "train":
        patches = pl.load_patches(args.patches)
        if not patches:
            _fail("patch manifest is empty")
        size = patches[0].image_tile.shape[0]
        config = cls.ClassifierConfig(input_size=size, architecture=args.arch,
                                      learning_rate=args.lr, batch_size=args.batch_size,
                                      epochs=args.epochs, seed=args.seed,
                                      balanced_sampling=args.balanced)
        model, history = cls.train_classifier(patches, config)
        cls.save_classifier(model, args.out)
        final = history[-1] if history else {"loss": float("nan"), "accuracy": float("nan")}
        print(f"trained on {len(patches)} patches; final loss {final['loss']:.4f} "
              f"accuracy {final['accuracy']:.3f} -> {args.out}")

    elif args.command == "filter":
        model = cls.load_classifier(args.model)
        patches = pl.load_patches(args.patches)
        kept, removed, stats = cls.filter_weak_positives(model, patches)
        manifest = pl.save_patches(kept, args.out)
        print(f"weak positives: {stats.total_weak_positive}, kept {stats.kept}, "
              f"removed {stats.removed} ({stats.removed_fraction:.1%}) -> {manifest}")

    elif args.command == "eval":
        model = cls.load_classifier(args.model)
        patches = pl.load_patches(args.patches)
        cm = cls.evaluate_classifier(model, patches)
        print(f"confusion matrix: TP={cm.tp} FP={cm.fp} FN={cm.fn} TN={cm.tn}")
        try:
            precision, recall = precision_recall(cm)
            print(f"precision {precision:.4f}  recall {recall:.4f}")
            metrics = {"precision": precision, "recall": recall}
        except ValueError as exc:
            print(f"precision/recall undefined: {exc}")
            metrics = {}
        if args.out:
            Path(args.out).write_text(json.dumps({**cm.to_dict(), **metrics}, indent=2,
                                                 sort_keys=True), encoding="utf-8")

    return 0


# ---------------------------------------------------------------------------
# snet
# ---------------------------------------------------------------------------

def snet_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="snet", description="Segmentation network training")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train")
    p_train.add_argument("--hand", required=True, help="hand-labelled patch manifest")
    p_train.add_argument("--weak", default=None, help="weakly-annotated patch manifest")
    p_train.add_argument("--lambda-seg", type=float, default=1.0)
    p_train.add_argument("--lambda-reg", type=float, default=5.0)
    p_train.add_argument("--epochs", type=int, default=5)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--batch-size", type=int, default=8)
    p_train.add_argument("--depth", type=int, default=4)
    p_train.add_argument("--base-channels", type=int, default=16)
    p_train.add_argument("--steps-per-epoch", type=int, default=None)
    p_train.add_argument("--hand-weight", type=float, default=1.0,
                         help="oversampling factor for hand patches")
    p_train.add_argument("--infer-size", type=int, default=256)
    p_train.add_argument("--unnormalized-l2", action="store_true",
                         help="use the plain Euclidean norm for the pixel loss")
    p_train.add_argument("--out", default="snet.ckpt")

    args = parser.parse_args(argv)

    from . import pipeline as pl
    from . import segmenter as seg

    hand = pl.load_patches(args.hand)
    weak = pl.load_patches(args.weak) if args.weak else []
    if not hand:
        _fail("hand patch manifest is empty")
    size = hand[0].image_tile.shape[0]
    config = seg.SegmenterConfig(
        train_size=size, infer_size=args.infer_size, depth=args.depth,
        base_channels=args.base_channels, learning_rate=args.lr,
        batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
        weights=seg.LossWeights(args.lambda_seg, args.lambda_reg),
        unnormalized_l2=args.unnormalized_l2, hand_weight=args.hand_weight,
        steps_per_epoch=args.steps_per_epoch)
    model, history = seg.train_segmenter(hand, weak, config)
    seg.save_segmenter(model, args.out)
    final = history[-1] if history else {"loss": float("nan")}
    print(f"trained on {len(hand)} hand + {len(weak)} weak patches; "
          f"final loss {final['loss']:.4f} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------

def infer_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="infer", description="Stitched whole-image prediction")
    parser.add_argument("--model", required=True)
    parser.add_argument("--image", required=True)
    parser.add_argument("--out-mask", required=True, help="binary mask PNG")
    parser.add_argument("--out-prob", required=True, help="float32 probability grid")
    parser.add_argument("--step", type=int, default=128)
    parser.add_argument("--threshold", type=float, default=0.5)
    args = parser.parse_args(argv)

    from .images import load_image, save_mask
    from .inference import StitchConfig, binarize, save_prob_grid, stitch_predict
    from .segmenter import load_segmenter

    model = load_segmenter(args.model)
    image = load_image(args.image)
    cfg = StitchConfig(patch_size=model.config.infer_size, step=args.step,
                       binarize_threshold=args.threshold)
    prob = stitch_predict(model, image, cfg)
    save_prob_grid(args.out_prob, prob)
    save_mask(args.out_mask, binarize(prob, args.threshold))
    print(f"stitched {image.shape[1]}x{image.shape[0]} image; "
          f"foreground fraction {float((prob > args.threshold).mean()):.4f}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def evaluate_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="evaluate",
                                     description="mIoU of predicted masks against ground truth")
    parser.add_argument("--pred-dir", required=True)
    parser.add_argument("--gt-dir", required=True)
    parser.add_argument("--out", required=True, help="report JSON path")
    args = parser.parse_args(argv)

    from .images import load_mask
    from .metrics import EvalReport
    from .report import save_per_image_iou_figure

    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    pairs = []
    for pred_path in sorted(pred_dir.glob("*.png")):
        gt_path = gt_dir / pred_path.name
        if not gt_path.exists():
            _fail(f"no ground-truth mask for {pred_path.name} in {gt_dir}")
        pairs.append((pred_path.stem, load_mask(pred_path), load_mask(gt_path)))
    if not pairs:
        _fail(f"no PNG masks found in {pred_dir}")

    report = EvalReport.from_pairs(pairs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save_json(out)
    report.save_csv(out.with_suffix(".csv"))
    save_per_image_iou_figure(report.per_image_iou, out.with_name(out.stem + "_iou.png"))
    print(f"mIoU {report.miou:.4f} over {len(pairs)} images -> {out}")
    return 0


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

def experiment_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="experiment",
                                     description="Ablation orchestration on a synthetic archive")
    sub = parser.add_subparsers(dest="command", required=True)

    p_arch = sub.add_parser("make-archive", help="generate the desk-scale synthetic archive")
    p_arch.add_argument("--out", required=True)
    p_arch.add_argument("--colonies", type=int, default=40)
    p_arch.add_argument("--scenes", type=int, default=8)
    p_arch.add_argument("--size", type=int, default=512)
    p_arch.add_argument("--seed", type=int, default=1234)
    p_arch.add_argument("--corrupt-fraction", type=float, default=0.3)
    p_arch.add_argument("--shift-min", type=float, default=8.0)
    p_arch.add_argument("--shift-max", type=float, default=15.0)

    p_run = sub.add_parser("run")
    p_run.add_argument("--config", required=True, help="experiment config JSON")

    p_cmp = sub.add_parser("compare")
    p_cmp.add_argument("--reports", nargs="+", required=True)
    p_cmp.add_argument("--out", default=None)

    p_ovl = sub.add_parser("overlays")
    p_ovl.add_argument("--run", required=True, help="run output directory (with report.json)")
    p_ovl.add_argument("--variant", default=None)
    p_ovl.add_argument("--seed", default=None)

    args = parser.parse_args(argv)

    from . import harness

    if args.command == "make-archive":
        index = harness.build_default_archive(
            args.out, colonies=args.colonies, scenes_per_colony=args.scenes,
            size=args.size, master_seed=args.seed,
            corrupt_fraction=args.corrupt_fraction,
            shift_min=args.shift_min, shift_max=args.shift_max)
        print(f"wrote {len(index.records)} scenes -> {args.out}")

    elif args.command == "run":
        config = harness.ExperimentConfig.load(args.config)
        report = harness.run_experiment(config)
        for variant, median in sorted(report.medians.items()):
            print(f"{variant}: median test mIoU {median:.4f}")
        failures = [(v, s, r["error"]) for v, runs in report.results.items()
                    for s, r in runs.items() if "error" in r]
        for variant, seed, error in failures:
            print(f"FAILED {variant} seed {seed}: {error}")
        print(f"report -> {Path(config.output_dir) / 'report.json'}")
        return 1 if failures else 0

    elif args.command == "compare":
        reports = [harness.RunReport.load(p) for p in args.reports]
        summary = harness.compare_reports(reports)
        text = json.dumps(summary, indent=2, sort_keys=True)
        print(text)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")

    elif args.command == "overlays":
        _emit_run_overlays(Path(args.run), args.variant, args.seed)

    return 0


def _emit_run_overlays(run_dir: Path, variant: str | None, seed: str | None) -> None:
    from .harness import RunReport, emit_overlays
    from .images import load_image, load_mask
    from .scenegen import ArchiveIndex

    report = RunReport.load(run_dir / "report.json")
    index = ArchiveIndex.load(Path(report.config["archive_dir"]))
    by_id = {f"{r.colony_id}__{r.scene_id}": r for r in index.records}

    pred_root = run_dir / "predictions"
    total = 0
    for variant_dir in sorted(pred_root.iterdir()):
        if variant and variant_dir.name != variant:
            continue
        for seed_dir in sorted(variant_dir.iterdir()):
            if seed and seed_dir.name != f"seed_{seed}":
                continue
            images, masks, names = [], [], []
            for pred_path in sorted(seed_dir.glob("*.png")):
                record = by_id.get(pred_path.stem)
                if record is None:
                    continue
                images.append(load_image(index.root / record.image_path))
                masks.append(load_mask(pred_path))
                names.append(pred_path.stem)
            out_dir = run_dir / "overlays" / variant_dir.name / seed_dir.name
            written = emit_overlays(images, masks, out_dir, names)
            total += len(written)
    print(f"wrote {total} overlays under {run_dir / 'overlays'}")


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(experiment_main())
