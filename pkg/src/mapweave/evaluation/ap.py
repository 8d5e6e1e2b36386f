"""Average precision over Chamfer distance and rasterized IoU."""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from mapweave.core.geometry import BevWindow, Polyline, chamfer, rasterize
from mapweave.errors import ContractError
from mapweave.models.map_instance import MapClass
from mapweave.models.records import EvalRecord, InstanceRecord
from mapweave.utils.logger import get_logger

logger = get_logger(__name__)

CHAMFER_THRESHOLDS = (0.5, 1.0, 1.5)
CROSSING_IOU_THRESHOLDS = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75)
LINE_IOU_THRESHOLDS = (0.25, 0.30, 0.35, 0.40, 0.45, 0.50)


def iou_thresholds(map_class: MapClass) -> tuple[float, ...]:
    return CROSSING_IOU_THRESHOLDS if map_class.closed else LINE_IOU_THRESHOLDS


@dataclass
class RankedPrediction:
    """A prediction in score order with its greedy-match outcome."""

    record: InstanceRecord
    sequence_index: int
    gt_id: Optional[int]  # Matched GT instance id; None for a false positive

    @property
    def is_tp(self) -> bool:
        return self.gt_id is not None


@dataclass
class MatchOutcome:
    ranked: list[RankedPrediction]
    num_gt: int


def average_precision(tp_flags: Sequence[bool], num_gt: int) -> float:
    """Area under the precision envelope over recall (all-point interpolation)."""
    if num_gt == 0 or len(tp_flags) == 0:
        return 0.0
    flags = np.asarray(tp_flags, dtype=bool)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def greedy_match(
    records: Sequence[EvalRecord],
    map_class: MapClass,
    metric: Callable[[InstanceRecord, InstanceRecord], float],
    accept: Callable[[float], bool],
    higher_is_better: bool = False,
) -> MatchOutcome:
    """Score-ordered greedy assignment of predictions to same-frame GT.

    Predictions of ``map_class`` are ranked by descending score (ties by
    sequence, frame, then insertion order). Each takes the best-scoring
    unmatched GT of its frame under ``metric`` (ties to the earlier GT) and
    is a true positive iff ``accept`` holds for that value.
    """
    pool = []
    num_gt = 0
    for si, rec in enumerate(records):
        for frame in rec.frames:
            num_gt += sum(1 for g in frame.ground_truth if g.map_class == map_class)
            for order, pred in enumerate(p for p in frame.predictions if p.map_class == map_class):
                pool.append((-pred.score, si, frame.frame_index, order, pred))
    pool.sort(key=lambda item: item[:4])

    gts_by_frame = {
        (si, frame.frame_index): [g for g in frame.ground_truth if g.map_class == map_class]
        for si, rec in enumerate(records)
        for frame in rec.frames
    }
    taken: set[tuple[int, int, int]] = set()
    ranked: list[RankedPrediction] = []
    for _, si, frame_index, _, pred in pool:
        best_value, best_gt = None, None
        for pos, gt in enumerate(gts_by_frame[(si, frame_index)]):
            if (si, frame_index, pos) in taken:
                continue
            value = metric(pred, gt)
            better = best_value is None or (value > best_value if higher_is_better else value < best_value)
            if better:
                best_value, best_gt = value, (pos, gt)
        gt_id = None
        if best_gt is not None and accept(best_value):
            taken.add((si, frame_index, best_gt[0]))
            gt_id = best_gt[1].track_id
        ranked.append(RankedPrediction(pred, si, gt_id))
    return MatchOutcome(ranked, num_gt)


def chamfer_metric(pred: InstanceRecord, gt: InstanceRecord) -> float:
    return chamfer(np.asarray(pred.points), np.asarray(gt.points))


def chamfer_matches(records: Sequence[EvalRecord], map_class: MapClass, threshold_m: float) -> MatchOutcome:
    if threshold_m <= 0:
        raise ContractError(f"threshold must be positive, got {threshold_m}")
    return greedy_match(records, map_class, chamfer_metric, lambda d: d <= threshold_m)


def chamfer_ap(records: Sequence[EvalRecord], map_class: MapClass, threshold_m: float) -> float:
    """Chamfer-distance AP of one class at one threshold (0 when there is no GT)."""
    outcome = chamfer_matches(records, map_class, threshold_m)
    if outcome.num_gt == 0:
        logger.warning("No ground truth for class", map_class=map_class.value, metric="chamfer_ap")
    return average_precision([r.is_tp for r in outcome.ranked], outcome.num_gt)


class RasterCache:
    """Memoized rasterization of record polylines."""

    def __init__(self, window: BevWindow, thickness: float = 1.0):
        self.window = window
        self.thickness = thickness
        self._cache: dict[int, np.ndarray] = {}

    def __call__(self, rec: InstanceRecord) -> np.ndarray:
        key = id(rec)
        if key not in self._cache:
            polyline = Polyline(np.asarray(rec.points), closed=rec.map_class.closed)
            self._cache[key] = rasterize(polyline, self.window, self.thickness).grid > 0.5
        return self._cache[key]


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def raster_ap(
    records: Sequence[EvalRecord],
    map_class: MapClass,
    window: Optional[BevWindow] = None,
    thickness: float = 1.0,
    thresholds: Optional[Sequence[float]] = None,
    cache: Optional[RasterCache] = None,
) -> dict[float, float]:
    """Rasterized-IoU AP at each threshold of the class schedule."""
    cache = cache or RasterCache(window or BevWindow(), thickness)
    thresholds = thresholds or iou_thresholds(map_class)

    def metric(pred: InstanceRecord, gt: InstanceRecord) -> float:
        return mask_iou(cache(pred), cache(gt))

    results = {}
    for thr in thresholds:
        outcome = greedy_match(records, map_class, metric, lambda v, thr=thr: v >= thr, higher_is_better=True)
        results[thr] = average_precision([r.is_tp for r in outcome.ranked], outcome.num_gt)
    return results
