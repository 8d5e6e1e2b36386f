"""Full metric suite and the results CSV."""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mapweave.core.geometry import BevWindow
from mapweave.evaluation.ap import CHAMFER_THRESHOLDS, RasterCache, chamfer_ap, raster_ap
from mapweave.evaluation.consistency import METRIC_NAME, consistency_map
from mapweave.models.map_instance import MapClass
from mapweave.models.records import EvalRecord
from mapweave.utils.logger import get_logger

logger = get_logger(__name__)

CSV_HEADER = ("class", "metric", "threshold", "value")


@dataclass
class APResult:
    """Per-class AP tables keyed by threshold."""

    chamfer: dict[MapClass, dict[float, float]] = field(default_factory=dict)
    raster: dict[MapClass, dict[float, float]] = field(default_factory=dict)
    consistency: dict[MapClass, dict[float, float]] = field(default_factory=dict)
    num_predictions: dict[MapClass, int] = field(default_factory=dict)
    num_ground_truth: dict[MapClass, int] = field(default_factory=dict)

    @staticmethod
    def _mean_of_means(table: dict[MapClass, dict[float, float]]) -> float:
        if not table:
            return 0.0
        return float(np.mean([np.mean(list(per.values())) for per in table.values()]))

    @property
    def mAP(self) -> float:
        return self._mean_of_means(self.chamfer)

    @property
    def mAP_raster(self) -> float:
        return self._mean_of_means(self.raster)

    @property
    def c_mAP(self) -> float:
        return self._mean_of_means(self.consistency)

    @property
    def warnings(self) -> list[str]:
        return [
            f"no ground truth for {cls.value}; its AP is reported as 0"
            for cls, n in self.num_ground_truth.items()
            if n == 0
        ]


def evaluate(
    records: Sequence[EvalRecord],
    window: Optional[BevWindow] = None,
    thickness: float = 1.0,
    thresholds: Sequence[float] = CHAMFER_THRESHOLDS,
) -> APResult:
    """Chamfer AP, raster AP and the consistency variant for every class."""
    window = window or BevWindow()
    cache = RasterCache(window, thickness)
    result = APResult()
    for cls in MapClass:
        result.num_ground_truth[cls] = sum(
            1 for rec in records for f in rec.frames for g in f.ground_truth if g.map_class == cls
        )
        result.num_predictions[cls] = sum(
            1 for rec in records for f in rec.frames for p in f.predictions if p.map_class == cls
        )
        result.chamfer[cls] = {thr: chamfer_ap(records, cls, thr) for thr in thresholds}
        result.consistency[cls] = {thr: consistency_map(records, cls, thr) for thr in thresholds}
        result.raster[cls] = raster_ap(records, cls, cache=cache)
    logger.info(
        "Evaluation complete",
        mAP=round(result.mAP, 6),
        mAP_raster=round(result.mAP_raster, 6),
        c_mAP=round(result.c_mAP, 6),
    )
    return result


def result_rows(result: APResult) -> list[tuple[str, str, str, str]]:
    rows = []
    tables = (
        ("chamfer_ap", result.chamfer),
        ("raster_ap", result.raster),
        ("consistency_ap", result.consistency),
    )
    for metric, table in tables:
        for cls, per in table.items():
            for thr, value in per.items():
                rows.append((cls.value, metric, repr(float(thr)), repr(float(value))))
    rows.append(("all", "mAP", "", repr(result.mAP)))
    rows.append(("all", "mAP_raster", "", repr(result.mAP_raster)))
    rows.append(("all", METRIC_NAME, "", repr(result.c_mAP)))
    return rows


def write_csv(result: APResult, path: str | Path) -> Path:
    """Write the results table with header ``class,metric,threshold,value``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(result_rows(result))
    return path
