"""Consistency-aware AP: Chamfer AP with identity switches demoted.

Variant rule, applied to the Chamfer greedy matches of one class:

* each predicted track keeps only matches to its majority GT instance;
* each GT instance keeps only matches from its majority track.

Majority ties go to the candidate matched at the earliest frame.
Demoted matches count as false positives; the ranking is unchanged.
"""

from collections import Counter
from typing import Sequence

from mapweave.evaluation.ap import RankedPrediction, average_precision, chamfer_matches
from mapweave.models.map_instance import MapClass
from mapweave.models.records import EvalRecord

METRIC_NAME = "C-mAP (variant)"


def _majority(candidates: list[tuple[int, int]]) -> int:
    """Most frequent key among (key, frame) pairs; ties to the earliest frame."""
    counts = Counter(key for key, _ in candidates)
    first_seen: dict[int, int] = {}
    for key, frame in candidates:
        first_seen[key] = min(frame, first_seen.get(key, frame))
    return min(counts, key=lambda key: (-counts[key], first_seen[key], key))


def demote_inconsistent(ranked: Sequence[RankedPrediction]) -> list[bool]:
    """True-positive flags after both majority rules."""
    flags = [r.is_tp for r in ranked]

    by_track: dict[tuple[int, int], list[int]] = {}
    for i, r in enumerate(ranked):
        if flags[i]:
            by_track.setdefault((r.sequence_index, r.record.track_id), []).append(i)
    for members in by_track.values():
        keep = _majority([(ranked[i].gt_id, ranked[i].record.frame_index) for i in members])
        for i in members:
            if ranked[i].gt_id != keep:
                flags[i] = False

    by_gt: dict[tuple[int, int], list[int]] = {}
    for i, r in enumerate(ranked):
        if flags[i]:
            by_gt.setdefault((r.sequence_index, r.gt_id), []).append(i)
    for members in by_gt.values():
        keep = _majority([(ranked[i].record.track_id, ranked[i].record.frame_index) for i in members])
        for i in members:
            if ranked[i].record.track_id != keep:
                flags[i] = False
    return flags


def consistency_map(records: Sequence[EvalRecord], map_class: MapClass, threshold_m: float) -> float:
    """Consistency-aware AP of one class at one Chamfer threshold."""
    outcome = chamfer_matches(records, map_class, threshold_m)
    return average_precision(demote_inconsistent(outcome.ranked), outcome.num_gt)
