"""Prediction-to-ground-truth assignment."""

from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from mapweave.core.geometry import BevWindow
from mapweave.errors import ContractError
from mapweave.models.map_instance import MapInstance


def admissible_orderings(num_points: int, closed: bool) -> np.ndarray:
    """Index permutations of a GT polyline that describe the same shape.

    Open polylines may run either way; closed ones may start at any vertex.

    Returns:
        Integer array [num_orderings, num_points]
    """
    base = np.arange(num_points)
    if closed:
        return np.stack([np.roll(base, -k) for k in range(num_points)])
    return np.stack([base, base[::-1]])


def point_cost(
    pred: np.ndarray, gt: np.ndarray, closed: bool, scale: np.ndarray | float = 1.0
) -> tuple[float, np.ndarray]:
    """Mean per-point L1 distance under the best admissible GT ordering.

    Args:
        pred: [N_p, 2] predicted points
        gt: [N_p, 2] ground-truth points
        closed: Whether the GT is a polygon
        scale: Per-axis divisor applied to both point sets

    Returns:
        (cost, ordering) where ``gt[ordering]`` is the aligned target
    """
    pred = np.asarray(pred, dtype=np.float64) / scale
    gt = np.asarray(gt, dtype=np.float64) / scale
    if pred.shape != gt.shape:
        raise ContractError(f"point sets differ in shape: {pred.shape} vs {gt.shape}")
    orderings = admissible_orderings(len(gt), closed)
    costs = np.abs(pred[None] - gt[orderings]).sum(axis=2).mean(axis=1)
    best = int(np.argmin(costs))
    return float(costs[best]), orderings[best]


def cost_matrix(
    class_probs: np.ndarray,
    points: np.ndarray,
    gts: Sequence[MapInstance],
    window: BevWindow,
    w_cls: float = 2.0,
    w_pts: float = 5.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Matching cost ``w_cls * (1 - p(gt class)) + w_pts * point_cost``.

    Point costs are measured in window-normalized units.

    Returns:
        (cost [N, G], orderings [N, G, N_p])
    """
    N, G = len(points), len(gts)
    n_points = points.shape[1] if N else 0
    costs = np.zeros((N, G))
    orderings = np.zeros((N, G, n_points), dtype=int)
    for j, gt in enumerate(gts):
        for i in range(N):
            pc, order = point_cost(points[i], gt.polyline.points, gt.map_class.closed, window.half_extent)
            costs[i, j] = w_cls * (1.0 - class_probs[i, gt.map_class.index]) + w_pts * pc
            orderings[i, j] = order
    return costs, orderings


def hungarian_match(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment; extra rows or columns stay unmatched.

    Raises:
        ContractError: If the cost matrix has non-finite entries
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ContractError("matching cost must be finite")
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]
