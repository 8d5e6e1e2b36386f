"""Per-frame data models: observations and pipeline outputs."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mapweave.core.geometry import BevWindow, RasterMask, Se2Pose
from mapweave.errors import ShapeError
from mapweave.models.map_instance import MapClass, MapInstance


@dataclass
class BevGrid:
    """H x W x C feature grid over the ego window."""

    features: np.ndarray
    window: BevWindow
    occlusion: Optional[np.ndarray] = None  # True where a dropout patch removed signal

    def __post_init__(self):
        if self.features.ndim != 3 or self.features.shape[:2] != self.window.shape:
            raise ShapeError("feature grid does not match window", self.features.shape, self.window.shape)

    @property
    def channels(self) -> int:
        return self.features.shape[2]

    def flat(self) -> np.ndarray:
        """Features as [H*W, C] in row-major cell order."""
        return self.features.reshape(-1, self.channels)


@dataclass
class FrameObservation:
    """Everything the pipeline sees (and is supervised with) at one frame."""

    frame_index: int
    bev_features: BevGrid
    gt_instances: list[MapInstance]
    gt_masks: dict[int, RasterMask]  # Keyed by instance_id
    ego_motion_to_next: Se2Pose = field(default_factory=Se2Pose.identity)

    def instance(self, instance_id: int) -> Optional[MapInstance]:
        for inst in self.gt_instances:
            if inst.instance_id == instance_id:
                return inst
        return None


@dataclass
class DecodedInstance:
    """A retained prediction."""

    track_id: int
    map_class: MapClass
    score: float
    points: np.ndarray  # [N_p, 2] ego-frame meters
    mask: np.ndarray  # [H, W] in [0, 1]


@dataclass
class FrameOutput:
    """Retained instances of one frame plus lifecycle counts."""

    frame_index: int
    instances: list[DecodedInstance] = field(default_factory=list)
    born: int = 0
    killed: int = 0
    propagated: int = 0

    @property
    def track_ids(self) -> list[int]:
        return [inst.track_id for inst in self.instances]

    def __str__(self) -> str:
        """Human-readable representation."""
        return (
            f"frame {self.frame_index}: {len(self.instances)} instances "
            f"(+{self.born} / -{self.killed} / ={self.propagated})"
        )
