"""Segmentation network trained with a provenance-switched loss: pixel-wise
on hand-labelled patches, mean-activation regression on weakly-annotated
ones. The regression branch depends on the mask only through its mean, which
is what makes it robust to misregistered outlines.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .nets import EncoderDecoder, tiles_to_tensor
from .pipeline import HAND, Patch

_SQRT_FLOOR = 1e-24  # keeps the gradient finite when the pixel residual hits zero


@dataclass(frozen=True)
class LossWeights:
    lambda_seg: float = 1.0
    lambda_reg: float = 5.0

    def __post_init__(self) -> None:
        if self.lambda_seg < 0 or self.lambda_reg < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class SegmenterConfig:
    train_size: int = 384
    infer_size: int = 256
    depth: int = 4
    base_channels: int = 16
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 5
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    unnormalized_l2: bool = False
    hand_weight: float = 1.0
    steps_per_epoch: int | None = None
    threads: int = 1

    def __post_init__(self) -> None:
        div = 2**self.depth
        for name in ("train_size", "infer_size"):
            size = getattr(self, name)
            if size % div:
                raise ValueError(f"{name}={size} must be divisible by 2**depth={div}")
        if self.hand_weight <= 0:
            raise ValueError("hand_weight must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SegmenterConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        if d.get("steps_per_epoch") is not None:
            d["steps_per_epoch"] = int(d["steps_per_epoch"])
        return cls(**d)


@dataclass
class SegmenterModel:
    net: EncoderDecoder
    config: SegmenterConfig
    fingerprint: str = ""


def combined_loss(pred, mask, provenance: str, weights: LossWeights,
                  unnormalized: bool = False) -> torch.Tensor:
    """Per-sample training loss, selected by provenance.

    hand: lambda_seg * sqrt(mean((pred - mask)^2))   (root-mean-square residual)
    weak: lambda_reg * |mean(pred) - mean(mask)|

    With `unnormalized` the hand branch is the plain Euclidean norm
    sqrt(sum((pred - mask)^2)) instead of its per-pixel normalization.
    """
    pred_t = torch.as_tensor(pred)
    mask_t = torch.as_tensor(mask, dtype=pred_t.dtype)
    if pred_t.shape != mask_t.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred_t.shape)} vs mask {tuple(mask_t.shape)}")
    if provenance == HAND:
        sq = (pred_t - mask_t) ** 2
        residual = sq.sum() if unnormalized else sq.mean()
        return weights.lambda_seg * torch.sqrt(torch.clamp_min(residual, _SQRT_FLOOR))
    return weights.lambda_reg * torch.abs(pred_t.mean() - mask_t.mean())


def combined_loss_batch(preds: torch.Tensor, masks: torch.Tensor,
                        is_hand: torch.Tensor, weights: LossWeights,
                        unnormalized: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
    """Vectorized per-sample losses over a (B, H, W) batch.

    Returns (loss_vector, is_hand) with loss_vector[i] equal to
    `combined_loss` applied to sample i.
    """
    sq = (preds - masks) ** 2
    residual = sq.sum(dim=(1, 2)) if unnormalized else sq.mean(dim=(1, 2))
    hand_loss = weights.lambda_seg * torch.sqrt(torch.clamp_min(residual, _SQRT_FLOOR))
    mean_gap = (preds.mean(dim=(1, 2)) - masks.mean(dim=(1, 2))).abs()
    weak_loss = weights.lambda_reg * mean_gap
    return torch.where(is_hand, hand_loss, weak_loss), is_hand


def _fingerprint(patches: list[Patch]) -> str:
    digest = hashlib.sha256()
    digest.update(str(len(patches)).encode())
    for patch in patches:
        digest.update(np.ascontiguousarray(patch.image_tile).tobytes())
        digest.update(patch.provenance.encode())
    return digest.hexdigest()[:16]


def train_segmenter(hand_patches: list[Patch], weak_patches: list[Patch],
                    config: SegmenterConfig) -> tuple[SegmenterModel, list[dict]]:
    """Mixed-batch training over the hand and weak pools.

    Samples are drawn at the pool's natural ratio (optionally reweighted by
    `hand_weight`); each sample contributes the loss branch matching its
    provenance. The history records the two loss components separately.
    """
    if not hand_patches:
        raise ValueError("segmenter training requires a non-empty hand-labelled pool")
    size = config.train_size
    for patch in hand_patches + weak_patches:
        if patch.image_tile.shape != (size, size, 3):
            raise ValueError(
                f"patch shape {patch.image_tile.shape} does not match train_size {size}")

    torch.set_num_threads(config.threads)
    torch.manual_seed(config.seed)
    net = EncoderDecoder(config.depth, config.base_channels)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng([config.seed, 211])

    pool = list(hand_patches) + list(weak_patches)
    n_hand = len(hand_patches)
    n = len(pool)
    probs = np.ones(n)
    probs[:n_hand] = config.hand_weight
    probs /= probs.sum()

    history: list[dict] = []
    net.train()
    for epoch in range(config.epochs):
        if config.steps_per_epoch is not None:
            draws = config.steps_per_epoch * config.batch_size
            order = rng.choice(n, size=draws, p=probs)
        elif config.hand_weight != 1.0:
            order = rng.choice(n, size=n, p=probs)
        else:
            order = rng.permutation(n)

        totals = {"loss": 0.0, "seg": 0.0, "reg": 0.0, "hand": 0, "weak": 0}
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            x = tiles_to_tensor([pool[i].image_tile for i in batch])
            masks = torch.from_numpy(
                np.stack([pool[i].mask_tile for i in batch]).astype("float32"))
            is_hand = torch.tensor([pool[i].provenance == HAND for i in batch])

            optimizer.zero_grad()
            preds = torch.sigmoid(net(x))
            loss_vec, _ = combined_loss_batch(preds, masks, is_hand, config.weights,
                                              config.unnormalized_l2)
            loss = loss_vec.mean()
            loss.backward()
            optimizer.step()

            with torch.no_grad():
                totals["loss"] += float(loss_vec.sum().item())
                totals["seg"] += float(loss_vec[is_hand].sum().item())
                totals["reg"] += float(loss_vec[~is_hand].sum().item())
                totals["hand"] += int(is_hand.sum().item())
                totals["weak"] += int((~is_hand).sum().item())

        seen = totals["hand"] + totals["weak"]
        history.append({
            "epoch": epoch,
            "loss": totals["loss"] / max(1, seen),
            "seg_loss": totals["seg"] / max(1, totals["hand"]),
            "reg_loss": totals["reg"] / max(1, totals["weak"]),
            "hand_samples": totals["hand"],
            "weak_samples": totals["weak"],
        })

    net.eval()
    return SegmenterModel(net, config, _fingerprint(pool)), history


def predict_patch(model: SegmenterModel, image_tile: np.ndarray) -> np.ndarray:
    """Per-pixel activations in [0, 1] for one inference-sized tile."""
    tile = np.asarray(image_tile)
    size = model.config.infer_size
    if tile.shape != (size, size, 3):
        raise ValueError(f"tile shape {tile.shape} does not match inference size {size}")
    return predict_batch(model, [tile])[0]


def predict_batch(model: SegmenterModel, tiles: list[np.ndarray]) -> np.ndarray:
    model.net.eval()
    with torch.no_grad():
        x = tiles_to_tensor(tiles)
        return torch.sigmoid(model.net(x)).numpy().astype(np.float32)


def save_segmenter(model: SegmenterModel, path: Path | str) -> None:
    save_checkpoint(path, "segmenter", model.config.to_dict(),
                    model.net.state_dict(), model.fingerprint)


def load_segmenter(path: Path | str) -> SegmenterModel:
    header, state_dict = load_checkpoint(path)
    if header["kind"] != "segmenter":
        raise ValueError(f"{path}: checkpoint holds a {header['kind']!r}, not a segmenter")
    config = SegmenterConfig.from_dict(header["config"])
    net = EncoderDecoder(config.depth, config.base_channels)
    net.load_state_dict(state_dict)
    net.eval()
    return SegmenterModel(net, config, header.get("fingerprint", ""))
