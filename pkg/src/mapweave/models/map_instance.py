"""Map element data models."""

from dataclasses import dataclass
from enum import Enum

from mapweave.core.geometry import Polyline


class MapClass(str, Enum):
    """Map element categories, in class-logit order."""

    CROSSING = "crossing"  # Closed polygon
    DIVIDER = "divider"
    BOUNDARY = "boundary"

    @property
    def index(self) -> int:
        return _ORDER.index(self)

    @property
    def closed(self) -> bool:
        return self is MapClass.CROSSING

    @classmethod
    def from_index(cls, index: int) -> "MapClass":
        return _ORDER[int(index)]


_ORDER = (MapClass.CROSSING, MapClass.DIVIDER, MapClass.BOUNDARY)
NUM_CLASSES = len(_ORDER)


@dataclass
class MapInstance:
    """One ground-truth map element."""

    instance_id: int
    map_class: MapClass
    polyline: Polyline

    def __str__(self) -> str:
        """Human-readable representation."""
        return f"{self.map_class.value}#{self.instance_id} ({len(self.polyline)} points)"
