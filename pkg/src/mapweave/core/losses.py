"""Frame losses: track variant, segmentation and future prediction."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mapweave.config import LossConfig
from mapweave.core.decoder import DecodedMap
from mapweave.core.geometry import BevWindow
from mapweave.core.saqg import MASK_CLAMP, seg_loss
from mapweave.core.stfg import pred_loss
from mapweave.core.tensor import Tensor, absolute, as_tensor, clip, index, log, softmax
from mapweave.models.map_instance import MapInstance


@dataclass
class Match:
    """A query supervised by a ground-truth instance."""

    query_index: int
    gt: MapInstance
    ordering: np.ndarray  # gt.polyline.points[ordering] aligns with the prediction
    gt_mask: np.ndarray


@dataclass
class FrameSupervision:
    """Everything needed to score one frame."""

    decoded: DecodedMap
    masks: Tensor  # [N, H, W], rows aligned with decoded queries
    window: BevWindow
    matches: list[Match] = field(default_factory=list)
    futures: list[tuple[Tensor, np.ndarray]] = field(default_factory=list)  # (P_hat, next-frame GT)


@dataclass
class LossBreakdown:
    """Loss terms of one frame."""

    track: Tensor
    seg: Tensor
    pred: Tensor

    @property
    def total(self) -> Tensor:
        return self.track + self.seg + self.pred

    def values(self) -> dict[str, float]:
        return {
            "track": self.track.item(),
            "seg": self.seg.item(),
            "pred": self.pred.item(),
            "total": self.total.item(),
        }


def binary_cross_entropy(p: Tensor, target: np.ndarray) -> Tensor:
    """Summed BCE with probabilities clamped to [1e-7, 1 - 1e-7]."""
    target = np.asarray(target, dtype=np.float64)
    pc = clip(p, MASK_CLAMP, 1.0 - MASK_CLAMP)
    return -(as_tensor(target) * log(pc) + as_tensor(1.0 - target) * log(1.0 - pc)).sum()


def track_loss(
    decoded: DecodedMap, matches: list[Match], window: BevWindow, weights: LossConfig
) -> Tensor:
    """``w_cls * CE + w_pts * L1 + w_score * BCE``.

    Class and point terms sum over matched queries; the point term is the
    mean per-point L1 in window-normalized units under the matched
    ordering. The score term sums over every query with target 1 for
    matched queries and 0 otherwise.
    """
    targets = np.zeros(len(decoded))
    for m in matches:
        targets[m.query_index] = 1.0
    loss = weights.w_score * binary_cross_entropy(decoded.scores, targets)
    if not matches:
        return loss

    rows = np.array([m.query_index for m in matches])
    classes = np.array([m.gt.map_class.index for m in matches])
    probs = softmax(index(decoded.class_logits, rows))
    picked = clip(index(probs, (np.arange(len(rows)), classes)), MASK_CLAMP, 1.0)
    loss = loss + weights.w_cls * -(log(picked).sum())

    aligned = np.stack([m.gt.polyline.points[m.ordering] for m in matches])
    n_points = aligned.shape[1]
    residual = absolute(index(decoded.points, rows) - aligned) * (1.0 / window.half_extent)
    return loss + (weights.w_pts / n_points) * residual.sum()


def future_loss(futures: list[tuple[Tensor, np.ndarray]]) -> Tensor:
    """Mean Chamfer distance over tracks with a next-frame target."""
    if not futures:
        return Tensor(0.0)
    total: Optional[Tensor] = None
    for p_hat, gt_next in futures:
        term = pred_loss(p_hat, gt_next)
        total = term if total is None else total + term
    return total * (1.0 / len(futures))


def total_loss(bundle: FrameSupervision, weights: Optional[LossConfig] = None) -> LossBreakdown:
    """Track variant + segmentation + future prediction for one frame."""
    weights = weights or LossConfig()
    track = track_loss(bundle.decoded, bundle.matches, bundle.window, weights)
    if bundle.matches:
        rows = np.array([m.query_index for m in bundle.matches])
        gt_masks = np.stack([m.gt_mask for m in bundle.matches])
        seg = seg_loss(index(bundle.masks, rows), gt_masks, weights.lambda_dice, weights.lambda_bce)
    else:
        seg = Tensor(0.0)
    return LossBreakdown(track, seg, future_loss(bundle.futures))
