"""Planar geometry: polylines, SE(2) poses, Chamfer distance, rasterization.

Grid convention used throughout: row ``i`` covers y in
``[y_min + i*res, y_min + (i+1)*res)`` and column ``j`` covers x in
``[x_min + j*res, x_min + (j+1)*res)``; the value of a cell refers to its
center.
"""

import math
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from mapweave.config import GridConfig
from mapweave.errors import ContractError, DegenerateGeometryError, ShapeError


@dataclass(frozen=True)
class BevWindow:
    """Axis-aligned ego-frame window with a square cell size."""

    x_min: float = -16.0
    x_max: float = 16.0
    y_min: float = -16.0
    y_max: float = 16.0
    resolution: float = 0.5

    def __post_init__(self):
        for lo, hi in ((self.x_min, self.x_max), (self.y_min, self.y_max)):
            cells = (hi - lo) / self.resolution
            if hi <= lo or abs(cells - round(cells)) > 1e-9:
                raise ShapeError("window extent must be a positive multiple of the resolution")

    @classmethod
    def from_config(cls, grid: GridConfig) -> "BevWindow":
        return cls(grid.x_min, grid.x_max, grid.y_min, grid.y_max, grid.resolution)

    @property
    def height(self) -> int:
        return int(round((self.y_max - self.y_min) / self.resolution))

    @property
    def width(self) -> int:
        return int(round((self.x_max - self.x_min) / self.resolution))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0])

    @property
    def half_extent(self) -> np.ndarray:
        return np.array([(self.x_max - self.x_min) / 2.0, (self.y_max - self.y_min) / 2.0])

    def cell_centers(self) -> np.ndarray:
        """Cell-center coordinates as an array [H, W, 2] of (x, y)."""
        xs = self.x_min + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.y_min + (np.arange(self.height) + 0.5) * self.resolution
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def normalize(self, points: np.ndarray) -> np.ndarray:
        """Map window coordinates to [-1, 1]."""
        return (np.asarray(points) - self.center) / self.half_extent

    def denormalize(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) * self.half_extent + self.center

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        points = np.asarray(points)
        return (
            (points[..., 0] >= self.x_min - tol)
            & (points[..., 0] <= self.x_max + tol)
            & (points[..., 1] >= self.y_min - tol)
            & (points[..., 1] <= self.y_max + tol)
        )


@dataclass
class Polyline:
    """Ordered 2-D points in meters; ``closed`` marks polygon outlines."""

    points: np.ndarray
    closed: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) < 2:
            raise ContractError("a polyline needs at least 2 points")
        if not np.all(np.isfinite(self.points)):
            raise ContractError("polyline coordinates must be finite")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        return polyline_length(self.points, self.closed)


@dataclass(frozen=True)
class Se2Pose:
    """Rigid planar transform ``p' = R(theta) p + (x, y)``; theta in (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        theta = float(self.theta)
        if not -math.pi < theta <= math.pi:
            theta = math.remainder(theta, 2.0 * math.pi)
            if theta <= -math.pi:
                theta = math.pi
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", theta)

    @classmethod
    def identity(cls) -> "Se2Pose":
        return cls(0.0, 0.0, 0.0)

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def is_identity(self) -> bool:
        return self.x == 0.0 and self.y == 0.0 and self.theta == 0.0

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "Se2Pose") -> "Se2Pose":
        """Return ``self o other`` (apply ``other`` first)."""
        tx, ty = self.apply(other.translation)
        return Se2Pose(tx, ty, self.theta + other.theta)

    def inverse(self) -> "Se2Pose":
        tx, ty = -(self.rotation.T @ self.translation)
        return Se2Pose(tx, ty, -self.theta)

    def relative_to(self, reference: "Se2Pose") -> "Se2Pose":
        """Pose of ``self`` expressed in the frame of ``reference``."""
        return reference.inverse().compose(self)


@dataclass
class RasterMask:
    """Per-cell values in [0, 1] over a window."""

    grid: np.ndarray
    window: BevWindow = field(default_factory=BevWindow)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.shape != self.window.shape:
            raise ShapeError("raster grid does not match window", self.grid.shape, self.window.shape)


def polyline_length(points: np.ndarray, closed: bool = False) -> float:
    points = np.asarray(points, dtype=np.float64)
    if closed:
        points = np.vstack([points, points[:1]])
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def resample(p: Polyline, n_points: int) -> Polyline:
    """Resample at uniform arc-length fractions.

    Open curves use fractions 0, 1/(n-1), ..., 1 (endpoints kept); closed
    curves use 0, 1/n, ..., (n-1)/n of the perimeter starting at the first
    vertex.

    Raises:
        ContractError: If n_points < 2
        DegenerateGeometryError: If the polyline has zero length
    """
    if n_points < 2:
        raise ContractError(f"n_points must be >= 2, got {n_points}")
    points = p.points
    if p.closed:
        if np.array_equal(points[0], points[-1]):
            points = points[:-1]
        points = np.vstack([points, points[:1]])

    steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    keep = np.concatenate([[True], steps > 0])
    points = points[keep]
    cumulative = np.concatenate([[0.0], np.cumsum(steps[steps > 0])])
    total = cumulative[-1]
    if total <= 0:
        raise DegenerateGeometryError("cannot resample a zero-length polyline")

    if p.closed:
        targets = total * np.arange(n_points) / n_points
    else:
        targets = np.linspace(0.0, total, n_points)
    xs = np.interp(targets, cumulative, points[:, 0])
    ys = np.interp(targets, cumulative, points[:, 1])
    return Polyline(np.stack([xs, ys], axis=1), closed=p.closed)


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-neighbor Euclidean distance between point sets.

    Raises:
        ContractError: If either set is empty
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise ContractError("chamfer needs two nonempty point sets")
    d = cdist(a, b)
    return 0.5 * (float(d.min(axis=1).mean()) + float(d.min(axis=0).mean()))


@singledispatch
def se2_apply(obj, pose: Se2Pose):
    """Apply a rigid transform to points, a polyline, or a window-sized mask.

    Masks are resampled with :func:`mapweave.core.memory.warp_grid`.
    """
    raise TypeError(f"se2_apply does not support {type(obj).__name__}")


@se2_apply.register
def _(obj: np.ndarray, pose: Se2Pose) -> np.ndarray:
    return pose.apply(obj)


@se2_apply.register
def _(obj: tuple, pose: Se2Pose) -> tuple:
    x, y = pose.apply(np.asarray(obj, dtype=np.float64))
    return (float(x), float(y))


@se2_apply.register
def _(obj: Polyline, pose: Se2Pose) -> Polyline:
    return Polyline(pose.apply(obj.points), closed=obj.closed)


@se2_apply.register
def _(obj: RasterMask, pose: Se2Pose) -> RasterMask:
    from mapweave.core.memory import warp_grid

    return RasterMask(warp_grid(obj.grid, obj.window, pose), obj.window)


def _segment_distances(points: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest of the given segments."""
    direction = ends - starts
    length_sq = np.sum(direction * direction, axis=1)
    rel = points[:, None, :] - starts[None, :, :]
    safe = np.where(length_sq > 0, length_sq, 1.0)
    t = np.clip(np.sum(rel * direction[None], axis=2) / safe, 0.0, 1.0)
    t = np.where(length_sq > 0, t, 0.0)
    nearest = starts[None] + t[..., None] * direction[None]
    return np.min(np.linalg.norm(points[:, None, :] - nearest, axis=2), axis=1)


def _inside_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test."""
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    px, py = points[:, 0:1], points[:, 1:2]
    straddles = (a[None, :, 1] > py) != (b[None, :, 1] > py)
    dy = np.where(b[:, 1] != a[:, 1], b[:, 1] - a[:, 1], 1.0)
    x_cross = a[None, :, 0] + (py - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / dy[None]
    crossings = straddles & (px < x_cross)
    return (np.sum(crossings, axis=1) % 2) == 1


def rasterize(p: Polyline, window: BevWindow, thickness: float = 1.0) -> RasterMask:
    """Binary mask of cells within ``thickness/2`` of the polyline.

    Closed polylines are also filled. Geometry outside the window yields
    an all-zero mask.

    Raises:
        ContractError: If thickness is not positive
    """
    if thickness <= 0:
        raise ContractError(f"thickness must be positive, got {thickness}")
    centers = window.cell_centers().reshape(-1, 2)
    points = p.points
    starts, ends = points[:-1], points[1:]
    if p.closed:
        starts = np.vstack([starts, points[-1:]])
        ends = np.vstack([ends, points[:1]])
    hit = _segment_distances(centers, starts, ends) <= thickness / 2.0
    if p.closed and len(points) >= 3:
        hit |= _inside_polygon(centers, points)
    return RasterMask(hit.reshape(window.shape).astype(np.float64), window)


# -- clipping ----------------------------------------------------------


def _clip_segment(
    p0: np.ndarray, p1: np.ndarray, window: BevWindow
) -> Optional[tuple[float, float]]:
    """Liang-Barsky clip; returns the kept parameter interval or None."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-d[0], p0[0] - window.x_min),
        (d[0], window.x_max - p0[0]),
        (-d[1], p0[1] - window.y_min),
        (d[1], window.y_max - p0[1]),
    ):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return t0, t1


def clip_polyline(points: np.ndarray, window: BevWindow) -> list[np.ndarray]:
    """Split an open polyline into the runs lying inside the window."""
    points = np.asarray(points, dtype=np.float64)
    runs: list[list[np.ndarray]] = []
    continuing = False
    for p0, p1 in zip(points[:-1], points[1:]):
        interval = _clip_segment(p0, p1, window)
        if interval is None:
            continuing = False
            continue
        t0, t1 = interval
        a = p0 + t0 * (p1 - p0)
        b = p0 + t1 * (p1 - p0)
        if continuing and t0 == 0.0:
            runs[-1].append(b)
        else:
            runs.append([a, b])
        continuing = t1 == 1.0
    return [np.array(run) for run in runs]


def clip_polygon(vertices: np.ndarray, window: BevWindow) -> Optional[np.ndarray]:
    """Sutherland-Hodgman clip of a polygon to the window."""
    output = [np.asarray(v, dtype=np.float64) for v in vertices]
    edges = (
        (lambda v: v[0] >= window.x_min, 0, window.x_min),
        (lambda v: v[0] <= window.x_max, 0, window.x_max),
        (lambda v: v[1] >= window.y_min, 1, window.y_min),
        (lambda v: v[1] <= window.y_max, 1, window.y_max),
    )
    for inside, axis, bound in edges:
        if not output:
            break
        source, output = output, []
        prev = source[-1]
        for cur in source:
            if inside(cur):
                if not inside(prev):
                    output.append(_intersect(prev, cur, axis, bound))
                output.append(cur)
            elif inside(prev):
                output.append(_intersect(prev, cur, axis, bound))
            prev = cur
    if len(output) < 3:
        return None
    return np.array(output)


def _intersect(a: np.ndarray, b: np.ndarray, axis: int, bound: float) -> np.ndarray:
    t = (bound - a[axis]) / (b[axis] - a[axis])
    point = a + t * (b - a)
    point[axis] = bound
    return point
