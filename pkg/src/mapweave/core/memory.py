"""Per-track rasterized history memory.

Each live track owns a soft mask in the current ego frame. Masks are
created from the first confident prediction, blended with later
predictions by exponential decay, carried into the next ego frame by a
bilinear warp, and dropped when their track dies.
"""

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np
from scipy.ndimage import map_coordinates

from mapweave.core.geometry import BevWindow, RasterMask, Se2Pose
from mapweave.errors import ContractError, ShapeError
from mapweave.models.map_instance import MapClass
from mapweave.utils.logger import get_logger

logger = get_logger(__name__)


def warp_grid(grid: np.ndarray, window: BevWindow, motion: Se2Pose) -> np.ndarray:
    """Resample ``grid`` from ego frame t into ego frame t+1.

    ``motion`` is the pose of frame t+1 expressed in frame t. Each
    destination cell center is mapped through ``motion`` into frame t and
    the source is sampled bilinearly; samples beyond the window read 0.
    Coordinates are handled in cell-index units about the window center so
    whole-cell translations are exact.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape != window.shape:
        raise ShapeError("grid does not match window", grid.shape, window.shape)
    if motion.is_identity():
        return grid.copy()

    H, W = window.shape
    rows, cols = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    center = np.array([(W - 1) / 2.0, (H - 1) / 2.0])
    rel = np.stack([cols - center[0], rows - center[1]], axis=-1)

    R = motion.rotation
    # Shift of the window center under the motion, in cells
    metric_center = window.center
    shift = (R @ metric_center + motion.translation - metric_center) / window.resolution
    src = rel @ R.T + center + shift

    warped = map_coordinates(
        grid,
        [src[..., 1], src[..., 0]],
        order=1,
        mode="grid-constant",
        cval=0.0,
        prefilter=False,
    )
    return np.clip(warped, 0.0, 1.0)


@dataclass
class MemoryEntry:
    """History mask of one track."""

    mask: RasterMask
    map_class: MapClass
    last_update_frame: int


class HistoryMapMemory:
    """Track-id keyed soft masks sharing one window."""

    def __init__(self, window: BevWindow):
        """Initialize an empty memory.

        Args:
            window: BEV window shared with the feature grid
        """
        self.window = window
        self.entries: dict[int, MemoryEntry] = {}

    def __contains__(self, track_id: int) -> bool:
        return track_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self.entries))

    @property
    def track_ids(self) -> set[int]:
        return set(self.entries)

    def get(self, track_id: int) -> Optional[MemoryEntry]:
        return self.entries.get(track_id)

    def _check_inputs(self, pred_mask: np.ndarray, score: float) -> np.ndarray:
        pred_mask = np.asarray(pred_mask, dtype=np.float64)
        if pred_mask.shape != self.window.shape:
            raise ShapeError("mask does not match memory window", pred_mask.shape, self.window.shape)
        if not 0.0 <= score <= 1.0:
            raise ContractError(f"score must lie in [0, 1], got {score}")
        return pred_mask

    def init_entry(
        self,
        track_id: int,
        pred_mask: np.ndarray,
        score: float,
        map_class: MapClass = MapClass.DIVIDER,
        frame_index: int = 0,
    ) -> None:
        """Create the entry of a newborn track as ``pred_mask * score``.

        Raises:
            ContractError: If ``track_id`` already has an entry
        """
        if track_id in self.entries:
            raise ContractError(f"memory already holds track {track_id}")
        pred_mask = self._check_inputs(pred_mask, score)
        self.entries[track_id] = MemoryEntry(
            RasterMask(pred_mask * score, self.window), map_class, frame_index
        )

    def update_entry(
        self,
        track_id: int,
        pred_mask: np.ndarray,
        score: float,
        beta: float,
        frame_index: Optional[int] = None,
    ) -> None:
        """Blend a new prediction in: ``(1 - beta) * old + beta * pred * score``.

        Raises:
            ContractError: If the track has no entry or beta is outside [0, 1]
        """
        entry = self.entries.get(track_id)
        if entry is None:
            raise ContractError(f"memory has no track {track_id}")
        if not 0.0 <= beta <= 1.0:
            raise ContractError(f"beta must lie in [0, 1], got {beta}")
        pred_mask = self._check_inputs(pred_mask, score)
        blended = (1.0 - beta) * entry.mask.grid + beta * (pred_mask * score)
        entry.mask = RasterMask(np.clip(blended, 0.0, 1.0), self.window)
        if frame_index is not None:
            entry.last_update_frame = frame_index

    def warp(self, motion: Se2Pose) -> None:
        """Carry every mask into the next ego frame."""
        if motion.is_identity():
            return
        for entry in self.entries.values():
            entry.mask = RasterMask(warp_grid(entry.mask.grid, self.window, motion), self.window)

    def prune(self, live_track_ids: Iterable[int]) -> int:
        """Drop entries of dead tracks.

        Returns:
            Number of entries removed
        """
        live = set(live_track_ids)
        dead = [tid for tid in self.entries if tid not in live]
        for tid in dead:
            del self.entries[tid]
        if dead:
            logger.debug("Pruned memory entries", removed=len(dead), remaining=len(self.entries))
        return len(dead)


def init_entry(mem: HistoryMapMemory, track_id: int, pred_mask: np.ndarray, score: float) -> None:
    mem.init_entry(track_id, pred_mask, score)


def update_entry(
    mem: HistoryMapMemory, track_id: int, pred_mask: np.ndarray, score: float, beta: float
) -> None:
    mem.update_entry(track_id, pred_mask, score, beta)


def warp_memory(mem: HistoryMapMemory, ego_motion: Se2Pose) -> None:
    mem.warp(ego_motion)


def prune(mem: HistoryMapMemory, live_track_ids: Iterable[int]) -> int:
    return mem.prune(live_track_ids)
