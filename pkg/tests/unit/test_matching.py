"""Unit tests for prediction-to-ground-truth matching."""

import numpy as np
import pytest

from mapweave.core.geometry import BevWindow, Polyline
from mapweave.core.matching import admissible_orderings, cost_matrix, hungarian_match, point_cost
from mapweave.errors import ContractError
from mapweave.models.map_instance import MapClass, MapInstance

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class TestOrderings:
    """Test admissible point orderings."""

    def test_open_polyline(self):
        """Open polylines run forwards or backwards."""
        np.testing.assert_array_equal(admissible_orderings(3, False), [[0, 1, 2], [2, 1, 0]])

    def test_closed_polygon(self):
        """Closed polygons may start at any vertex."""
        orderings = admissible_orderings(4, True)
        assert orderings.shape == (4, 4)
        np.testing.assert_array_equal(orderings[1], [1, 2, 3, 0])


class TestPointCost:
    """Test ordering-aware point costs."""

    def test_reversed_open_polyline_is_free(self):
        """A reversed prediction matches through the backward ordering."""
        gt = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        cost, ordering = point_cost(gt[::-1], gt, closed=False)
        assert cost == 0.0
        np.testing.assert_array_equal(ordering, [2, 1, 0])

    def test_rotated_polygon_is_free(self):
        """Starting a polygon elsewhere costs nothing."""
        cost, ordering = point_cost(np.roll(SQUARE, -2, axis=0), SQUARE, closed=True)
        assert cost == 0.0
        np.testing.assert_array_equal(SQUARE[ordering], np.roll(SQUARE, -2, axis=0))

    def test_mean_l1(self):
        """Cost is the mean per-point L1 distance."""
        gt = np.array([[0.0, 0.0], [4.0, 0.0]])
        pred = gt + [[1.0, 1.0], [0.0, 0.0]]
        cost, _ = point_cost(pred, gt, closed=False)
        assert cost == pytest.approx(1.0)

    def test_scale(self):
        """Scaling divides both point sets per axis."""
        gt = np.array([[0.0, 0.0], [4.0, 0.0]])
        pred = gt + [[2.0, 0.0], [2.0, 0.0]]
        cost, _ = point_cost(pred, gt, closed=False, scale=np.array([2.0, 1.0]))
        assert cost == pytest.approx(1.0)

    def test_shape_mismatch(self):
        """Point counts must agree."""
        with pytest.raises(ContractError):
            point_cost(np.zeros((3, 2)), np.zeros((4, 2)), closed=False)


class TestAssignment:
    """Test the cost matrix and Hungarian matching."""

    def test_cost_matrix_prefers_right_class(self):
        """A confident wrong class costs more than the right one."""
        window = BevWindow(-2.0, 2.0, -2.0, 2.0, 0.5)
        gt_points = np.array([[-1.0, 1.0], [1.0, 1.0]])
        gts = [MapInstance(0, MapClass.BOUNDARY, Polyline(gt_points))]
        probs = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        points = np.stack([gt_points, gt_points])
        costs, orderings = cost_matrix(probs, points, gts, window)
        assert costs.shape == (2, 1)
        assert costs[0, 0] == pytest.approx(0.0)
        assert costs[1, 0] == pytest.approx(2.0)
        assert orderings.shape == (2, 1, 2)

    def test_hungarian_minimum(self):
        """The assignment minimizes total cost."""
        cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
        assert sorted(hungarian_match(cost)) == [(0, 1), (1, 0), (2, 2)]

    def test_rectangular(self):
        """Extra predictions stay unmatched."""
        cost = np.array([[5.0], [1.0], [3.0]])
        assert hungarian_match(cost) == [(1, 0)]

    def test_empty(self):
        """No ground truth means no matches."""
        assert hungarian_match(np.zeros((4, 0))) == []

    def test_non_finite(self):
        """NaN costs are refused."""
        with pytest.raises(ContractError):
            hungarian_match(np.array([[np.nan]]))
