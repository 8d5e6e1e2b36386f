"""Prediction-log records and evaluation groupings."""

import math
from dataclasses import dataclass, field

from pydantic import BaseModel, ConfigDict, Field, field_validator

from mapweave.models.map_instance import MapClass


class InstanceRecord(BaseModel):
    """One line of a prediction or ground-truth log.

    Ground-truth logs reuse this schema with ``track_id`` holding the
    instance id and ``score`` fixed at 1.
    """

    model_config = ConfigDict(populate_by_name=True)

    sequence_id: str = Field(..., description="Scenario identifier")
    frame_index: int = Field(..., ge=0)
    track_id: int = Field(..., description="Track id (instance id for GT)")
    map_class: MapClass = Field(..., alias="class")
    score: float = Field(default=1.0, ge=0.0, le=1.0)
    points: list[tuple[float, float]] = Field(..., min_length=2)

    @field_validator("points")
    @classmethod
    def validate_points(cls, v: list[tuple[float, float]]) -> list[tuple[float, float]]:
        """Validate coordinates are finite."""
        for x, y in v:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError("points must be finite")
        return v

    def to_line_dict(self) -> dict:
        data = self.model_dump(by_alias=True, mode="json")
        data["points"] = [list(p) for p in self.points]
        return data


@dataclass
class EvalFrame:
    """Predictions and ground truth of one frame."""

    frame_index: int
    predictions: list[InstanceRecord] = field(default_factory=list)
    ground_truth: list[InstanceRecord] = field(default_factory=list)


@dataclass
class EvalRecord:
    """All evaluated frames of one sequence."""

    sequence_id: str
    frames: list[EvalFrame] = field(default_factory=list)


def group_records(
    predictions: list[InstanceRecord], ground_truth: list[InstanceRecord]
) -> list[EvalRecord]:
    """Group flat log records by sequence and frame (sorted, insertion order kept)."""
    table: dict[str, dict[int, EvalFrame]] = {}
    for rec in ground_truth:
        frames = table.setdefault(rec.sequence_id, {})
        frames.setdefault(rec.frame_index, EvalFrame(rec.frame_index)).ground_truth.append(rec)
    for rec in predictions:
        frames = table.setdefault(rec.sequence_id, {})
        frames.setdefault(rec.frame_index, EvalFrame(rec.frame_index)).predictions.append(rec)
    return [
        EvalRecord(seq, [frames[i] for i in sorted(frames)])
        for seq, frames in sorted(table.items())
    ]
