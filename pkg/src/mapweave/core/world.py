"""Synthetic driving scenarios standing in for a camera/BEV backbone.

A scenario is a road of parallel lane lines following the ego arc plus
rectangular pedestrian crossings across it. Each frame crops the world
into the ego window and synthesizes BEV features whose class channel
groups carry the rasterized ground truth.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from mapweave.config import GridConfig, WorldConfig
from mapweave.core.geometry import (
    BevWindow,
    Polyline,
    RasterMask,
    Se2Pose,
    clip_polygon,
    clip_polyline,
    polyline_length,
    rasterize,
    resample,
)
from mapweave.errors import ConfigurationError, ContractError
from mapweave.models.frame import BevGrid, FrameObservation
from mapweave.models.map_instance import NUM_CLASSES, MapClass, MapInstance
from mapweave.utils.logger import get_logger

logger = get_logger(__name__)

# Arc-length spacing of generated lane lines (m)
LINE_STEP = 1.0


@dataclass
class Scenario:
    """A world-frame map, an ego trajectory and the settings to observe it."""

    scenario_id: str
    seed: int
    window: BevWindow
    instances: list[MapInstance]
    ego_poses: list[Se2Pose]
    world: WorldConfig = field(default_factory=WorldConfig)
    n_points: int = 20
    channels: int = 32

    def __post_init__(self):
        ids = [inst.instance_id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ContractError(f"scenario {self.scenario_id}: duplicate instance ids")
        if not self.ego_poses:
            raise ContractError(f"scenario {self.scenario_id}: needs at least one frame")

    @property
    def num_frames(self) -> int:
        return len(self.ego_poses)


def _arc_pose(s: float, curvature: float) -> Se2Pose:
    """Pose after travelling arc length ``s`` from the origin along x."""
    if curvature == 0.0:
        return Se2Pose(s, 0.0, 0.0)
    heading = curvature * s
    return Se2Pose(math.sin(heading) / curvature, (1.0 - math.cos(heading)) / curvature, heading)


def _offset_point(s: float, offset: float, curvature: float) -> np.ndarray:
    pose = _arc_pose(s, curvature)
    return pose.apply(np.array([0.0, offset]))


def _offset_curve(s_start: float, s_end: float, offset: float, curvature: float) -> np.ndarray:
    steps = max(2, int(math.ceil((s_end - s_start) / LINE_STEP)) + 1)
    return np.array(
        [_offset_point(s, offset, curvature) for s in np.linspace(s_start, s_end, steps)]
    )


def generate_scenario(
    world: WorldConfig,
    grid: Optional[GridConfig] = None,
    seed: int = 0,
    n_points: int = 20,
    channels: int = 32,
    scenario_id: Optional[str] = None,
) -> Scenario:
    """Generate a deterministic scenario.

    The ego drives along the rightmost lane. Lane lines sit at lateral
    offsets ``lane_width * (k - 0.5)`` for k = 0..n_lanes from the ego arc;
    the outermost two are road boundaries and the rest dividers.

    Raises:
        ConfigurationError: If the road cannot be laid out in the window
    """
    grid = grid or GridConfig()
    window = BevWindow.from_config(grid)
    if world.lane_width <= 0:
        raise ConfigurationError("lane width must be positive")

    offsets = [world.lane_width * (k - 0.5) for k in range(world.n_lanes + 1)]
    if max(abs(o) for o in offsets) >= min(window.half_extent):
        raise ConfigurationError("road is wider than the BEV window")
    curvature = world.yaw_rate / world.speed if world.speed > 0 else 0.0
    if abs(curvature) * max(abs(o) for o in offsets) >= 1.0:
        raise ConfigurationError("turn rate too tight for the road width")
    if channels < NUM_CLASSES * world.signal_channels_per_class:
        raise ConfigurationError(
            f"{channels} channels cannot hold {NUM_CLASSES} x "
            f"{world.signal_channels_per_class} signal channels"
        )

    rng = np.random.default_rng(seed)
    step = world.speed * world.frame_period
    travel = step * (world.frames - 1)
    margin = float(np.hypot(*window.half_extent)) + 2.0 * LINE_STEP
    s_start, s_end = -margin, travel + margin

    instances: list[MapInstance] = []
    for k, offset in enumerate(offsets):
        map_class = MapClass.BOUNDARY if k in (0, world.n_lanes) else MapClass.DIVIDER
        points = _offset_curve(s_start, s_end, offset, curvature)
        instances.append(MapInstance(len(instances), map_class, Polyline(points)))

    lookahead = window.x_max / 2.0
    # Short runs on small windows pin crossings to the far end of reach
    s_high = travel + lookahead
    s_low = min(world.crossing_depth, s_high)
    for _ in range(world.n_crossings):
        s = float(rng.uniform(s_low, s_high))
        near, far = offsets[0], offsets[-1]
        half = world.crossing_depth / 2.0
        corners = [
            _offset_point(s - half, near, curvature),
            _offset_point(s + half, near, curvature),
            _offset_point(s + half, far, curvature),
            _offset_point(s - half, far, curvature),
        ]
        instances.append(
            MapInstance(len(instances), MapClass.CROSSING, Polyline(np.array(corners), closed=True))
        )

    ego_poses = [_arc_pose(step * t, curvature) for t in range(world.frames)]
    scenario = Scenario(
        scenario_id=scenario_id or f"scenario-{seed:06d}",
        seed=int(seed),
        window=window,
        instances=instances,
        ego_poses=ego_poses,
        world=world.model_copy(),
        n_points=n_points,
        channels=channels,
    )
    logger.debug(
        "Generated scenario",
        scenario=scenario.scenario_id,
        instances=len(instances),
        frames=world.frames,
    )
    return scenario


def _crop_instance(
    inst: MapInstance, pose_inverse: Se2Pose, window: BevWindow, world: WorldConfig, n_points: int
) -> Optional[Polyline]:
    """Ego-frame, window-clipped, resampled geometry (None when too short)."""
    ego_points = pose_inverse.apply(inst.polyline.points)
    if inst.polyline.closed:
        clipped = clip_polygon(ego_points, window)
        if clipped is None or polyline_length(clipped, closed=True) < world.min_clip_length:
            return None
        return resample(Polyline(clipped, closed=True), n_points)

    runs = clip_polyline(ego_points, window)
    if not runs:
        return None
    longest = max(runs, key=polyline_length)
    if polyline_length(longest) < world.min_clip_length:
        return None
    return resample(Polyline(longest), n_points)


def observe_frame(s: Scenario, t: int) -> FrameObservation:
    """Crop the scenario into ego frame ``t`` and synthesize its features.

    Raises:
        ContractError: If ``t`` is out of range
    """
    if not 0 <= t < s.num_frames:
        raise ContractError(f"frame {t} outside scenario of {s.num_frames} frames")
    pose = s.ego_poses[t]
    inverse = pose.inverse()

    gt_instances: list[MapInstance] = []
    gt_masks: dict[int, RasterMask] = {}
    for inst in s.instances:
        polyline = _crop_instance(inst, inverse, s.window, s.world, s.n_points)
        if polyline is None:
            continue
        gt_instances.append(MapInstance(inst.instance_id, inst.map_class, polyline))
        gt_masks[inst.instance_id] = rasterize(polyline, s.window, s.world.line_thickness)

    if t + 1 < s.num_frames:
        motion = s.ego_poses[t + 1].relative_to(pose)
    else:
        motion = Se2Pose.identity()

    features = synth_bev_features(
        gt_instances,
        gt_masks,
        s.window,
        channels=s.channels,
        signal_channels_per_class=s.world.signal_channels_per_class,
        noise=s.world.noise,
        dropout=s.world.dropout,
        patch_cells=s.world.patch_cells,
        seed=(s.seed, t),
    )
    return FrameObservation(t, features, gt_instances, gt_masks, motion)


def synth_bev_features(
    instances: Sequence[MapInstance],
    masks: dict[int, RasterMask],
    window: BevWindow,
    channels: int = 32,
    signal_channels_per_class: int = 4,
    noise: float = 0.1,
    dropout: float = 0.1,
    patch_cells: int = 8,
    seed: Union[int, Sequence[int]] = 0,
) -> BevGrid:
    """Build a feature grid from ground-truth rasters.

    Channel group ``k`` (``signal_channels_per_class`` wide) holds the union
    of class-``k`` masks; remaining channels start at zero. Square
    ``patch_cells`` blocks are dropped with probability ``dropout`` (their
    signal zeroed), then Gaussian noise of std ``noise`` is added to every
    channel.

    Raises:
        ConfigurationError: On negative noise, dropout outside [0, 1) or too few channels
    """
    if noise < 0 or not 0 <= dropout < 1:
        raise ConfigurationError(f"invalid noise={noise} / dropout={dropout}")
    if channels < NUM_CLASSES * signal_channels_per_class:
        raise ConfigurationError("not enough channels for the class signal groups")

    H, W = window.shape
    features = np.zeros((H, W, channels))
    for inst in instances:
        start = inst.map_class.index * signal_channels_per_class
        group = features[:, :, start : start + signal_channels_per_class]
        np.maximum(group, masks[inst.instance_id].grid[:, :, None], out=group)

    rng = np.random.default_rng(list(np.atleast_1d(seed)))
    occlusion = np.zeros((H, W), dtype=bool)
    if dropout > 0:
        blocks = rng.random((-(-H // patch_cells), -(-W // patch_cells))) < dropout
        occlusion = blocks.repeat(patch_cells, axis=0).repeat(patch_cells, axis=1)[:H, :W]
        features[occlusion, : NUM_CLASSES * signal_channels_per_class] = 0.0
    if noise > 0:
        features += rng.normal(0.0, noise, size=features.shape)
    return BevGrid(features, window, occlusion)
