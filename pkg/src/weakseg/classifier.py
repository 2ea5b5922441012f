"""Binary guano-presence classifier used to purge weak-positive patches
whose stain is not actually visible (snow, cloud, off-season imagery)."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import ConfusionMatrix
from .nets import make_classifier_net, tiles_to_tensor
from .pipeline import HAND, WEAK, Patch

ARCHITECTURES = ("small_cnn", "residual_18")


@dataclass(frozen=True)
class ClassifierConfig:
    input_size: int = 256
    architecture: str = "small_cnn"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    augment_flips: bool = True
    balanced_sampling: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.input_size < 16:
            raise ValueError("input_size too small")


@dataclass
class ClassifierModel:
    net: nn.Module
    config: ClassifierConfig
    fingerprint: str = ""


@dataclass(frozen=True)
class FilterStats:
    total_weak_positive: int
    kept: int
    removed: int

    def __post_init__(self) -> None:
        if self.kept + self.removed != self.total_weak_positive:
            raise ValueError("kept + removed must equal total_weak_positive")

    @property
    def removed_fraction(self) -> float:
        if self.total_weak_positive == 0:
            return 0.0
        return self.removed / self.total_weak_positive


def _fingerprint(patches: list[Patch]) -> str:
    digest = hashlib.sha256()
    digest.update(str(len(patches)).encode())
    for patch in patches:
        digest.update(np.ascontiguousarray(patch.image_tile).tobytes())
        digest.update(bytes([patch.image_level_label]))
    return digest.hexdigest()[:16]


def _check_tile(tile: np.ndarray, size: int) -> None:
    if tile.shape != (size, size, 3):
        raise ValueError(f"patch shape {tile.shape} does not match configured input size {size}")


def _maybe_flip(tile: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if rng.random() < 0.5:
        tile = tile[:, ::-1]
    if rng.random() < 0.5:
        tile = tile[::-1, :]
    return tile


def train_classifier(hand_patches: list[Patch],
                     config: ClassifierConfig) -> tuple[ClassifierModel, list[dict]]:
    """Train on hand-labelled patches with binary cross-entropy and Adam.

    Deterministic for a fixed seed in single-threaded mode. Raises if the
    training set does not contain both classes.
    """
    if not hand_patches:
        raise ValueError("classifier training requires hand-labelled patches")
    if any(p.provenance != HAND for p in hand_patches):
        raise ValueError("classifier training patches must have provenance='hand'")
    labels = np.array([p.image_level_label for p in hand_patches])
    if labels.min() == labels.max():
        raise ValueError("classifier training set contains a single class; need both labels")
    for patch in hand_patches:
        _check_tile(patch.image_tile, config.input_size)

    torch.set_num_threads(config.threads)
    torch.manual_seed(config.seed)
    net = make_classifier_net(config.architecture)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()
    rng = np.random.default_rng([config.seed, 101])

    n = len(hand_patches)
    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == 0)
    history: list[dict] = []

    net.train()
    for epoch in range(config.epochs):
        if config.balanced_sampling:
            half = rng.random(n) < 0.5
            order = np.where(half, rng.choice(pos_idx, n), rng.choice(neg_idx, n))
        else:
            order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            tiles = [_maybe_flip(hand_patches[i].image_tile, rng) if config.augment_flips
                     else hand_patches[i].image_tile for i in batch]
            x = tiles_to_tensor(tiles)
            y = torch.tensor([float(labels[i]) for i in batch])
            optimizer.zero_grad()
            logits = net(x)
            loss = loss_fn(logits, y)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.item()) * len(batch)
            correct += int(((logits > 0).float() == y).sum().item())
        history.append({
            "epoch": epoch,
            "loss": epoch_loss / n,
            "accuracy": correct / n,
        })

    net.eval()
    return ClassifierModel(net, config, _fingerprint(hand_patches)), history


def _scores(model: ClassifierModel, tiles: list[np.ndarray], chunk: int = 64) -> np.ndarray:
    model.net.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(tiles), chunk):
            x = tiles_to_tensor(tiles[start:start + chunk])
            out.append(model.net(x).numpy())
    return np.concatenate(out) if out else np.empty(0, dtype=np.float32)


def classify(model: ClassifierModel, patch_image: np.ndarray) -> float:
    """Signed logit; the decision rule everywhere is score > 0."""
    _check_tile(np.asarray(patch_image), model.config.input_size)
    return float(_scores(model, [np.asarray(patch_image)])[0])


def filter_weak_positives(model: ClassifierModel, weak_patches: list[Patch]
                          ) -> tuple[list[Patch], list[Patch], FilterStats]:
    """Drop weak patches labelled positive that the classifier scores <= 0.

    Weak negatives are never tested and pass through unchanged; order is
    preserved.
    """
    if any(p.provenance != WEAK for p in weak_patches):
        raise ValueError("filter input patches must have provenance='weak'")
    positives = [p for p in weak_patches if p.image_level_label == 1]
    scores = _scores(model, [p.image_tile for p in positives])
    keep_positive = dict(zip(map(id, positives), scores > 0))

    kept = [p for p in weak_patches if p.image_level_label != 1 or keep_positive[id(p)]]
    removed = [p for p in weak_patches if p.image_level_label == 1 and not keep_positive[id(p)]]
    kept_pos = sum(1 for p in kept if p.image_level_label == 1)
    stats = FilterStats(total_weak_positive=len(positives), kept=kept_pos, removed=len(removed))
    return kept, removed, stats


def evaluate_classifier(model: ClassifierModel, labelled_patches: list[Patch]) -> ConfusionMatrix:
    if not labelled_patches:
        raise ValueError("evaluation requires labelled patches")
    scores = _scores(model, [p.image_tile for p in labelled_patches])
    labels = np.array([p.image_level_label for p in labelled_patches])
    pred = scores > 0
    return ConfusionMatrix(
        tp=int(np.sum(pred & (labels == 1))),
        fp=int(np.sum(pred & (labels == 0))),
        fn=int(np.sum(~pred & (labels == 1))),
        tn=int(np.sum(~pred & (labels == 0))),
    )


def save_classifier(model: ClassifierModel, path: Path | str) -> None:
    save_checkpoint(path, "classifier", asdict(model.config),
                    model.net.state_dict(), model.fingerprint)


def load_classifier(path: Path | str) -> ClassifierModel:
    header, state_dict = load_checkpoint(path)
    if header["kind"] != "classifier":
        raise ValueError(f"{path}: checkpoint holds a {header['kind']!r}, not a classifier")
    config = ClassifierConfig(**header["config"])
    net = make_classifier_net(config.architecture)
    net.load_state_dict(state_dict)
    net.eval()
    return ClassifierModel(net, config, header.get("fingerprint", ""))
