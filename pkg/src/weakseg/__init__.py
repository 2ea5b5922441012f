"""Weakly-supervised guano segmentation on synthetic georeferenced scenes."""

__version__ = "0.1.0"

from .geo import ColonyPolygon, GeoRaster, GeoTransform, load_polygons, rasterize_polygon
from .scenegen import (ArchiveIndex, CorruptionParams, CorruptionSchedule,
                       MisregistrationParams, MisregistrationSchedule, SceneSpec,
                       SyntheticScene, apply_corruption, build_archive,
                       generate_scene, misregister)
from .pipeline import (CropRecord, Patch, crop_colony, entropy_filter,
                       patch_label, patchify, query_archive, shannon_entropy)
from .classifier import (ClassifierConfig, ClassifierModel, FilterStats, classify,
                         evaluate_classifier, filter_weak_positives, train_classifier)
from .segmenter import (LossWeights, SegmenterConfig, SegmenterModel, combined_loss,
                        predict_patch, train_segmenter)
from .inference import StitchConfig, binarize, stitch_predict
from .metrics import ConfusionMatrix, EvalReport, iou, miou, precision_recall
from .harness import (ExperimentConfig, RunReport, build_default_archive,
                      compare_reports, emit_overlays, run_experiment)
