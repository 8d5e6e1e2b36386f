"""Unit tests for frame losses."""

import numpy as np
import pytest

from mapweave.config import LossConfig
from mapweave.core.decoder import DecodedMap
from mapweave.core.geometry import BevWindow, Polyline
from mapweave.core.losses import FrameSupervision, Match, future_loss, total_loss, track_loss
from mapweave.core.tensor import Tensor, finite_diff_check
from mapweave.models.map_instance import MapClass, MapInstance

WINDOW = BevWindow(-2.0, 2.0, -2.0, 2.0, 0.5)


def decoded_map(rng, n: int = 3) -> DecodedMap:
    return DecodedMap(
        embeddings=Tensor(rng.normal(size=(n, 4))),
        points=Tensor(rng.uniform(-1.5, 1.5, size=(n, 2, 2)), requires_grad=True),
        class_logits=Tensor(rng.normal(size=(n, 3)), requires_grad=True),
        scores=Tensor(rng.uniform(0.2, 0.8, size=n), requires_grad=True),
    )


def boundary(instance_id: int = 0) -> MapInstance:
    return MapInstance(instance_id, MapClass.BOUNDARY, Polyline([[-1.0, 1.0], [1.0, 1.0]]))


class TestTrackLoss:
    """Test the track loss terms."""

    def test_score_only_without_matches(self, rng):
        """With no matches every score is pushed to zero."""
        decoded = decoded_map(rng)
        weights = LossConfig(w_score=1.0)
        expected = -np.log(1.0 - decoded.scores.data).sum()
        assert track_loss(decoded, [], WINDOW, weights).item() == pytest.approx(expected)

    def test_perfect_match_leaves_score_terms(self, rng):
        """Exact points leave only classification and score costs."""
        decoded = decoded_map(rng, 1)
        gt = boundary()
        decoded.points.data[0] = gt.polyline.points
        match = Match(0, gt, np.array([0, 1]), np.zeros(WINDOW.shape))
        loss = track_loss(decoded, [match], WINDOW, LossConfig(w_cls=0.0, w_score=0.0))
        assert loss.item() == pytest.approx(0.0)

    def test_point_term_in_normalized_units(self, rng):
        """Point residuals are divided by the window half extent."""
        decoded = decoded_map(rng, 1)
        gt = boundary()
        decoded.points.data[0] = gt.polyline.points + [2.0, 0.0]
        match = Match(0, gt, np.array([0, 1]), np.zeros(WINDOW.shape))
        loss = track_loss(decoded, [match], WINDOW, LossConfig(w_cls=0.0, w_score=0.0, w_pts=1.0))
        assert loss.item() == pytest.approx(1.0)

    def test_gradients(self, rng):
        """All decoded outputs receive correct gradients."""
        decoded = decoded_map(rng)
        matches = [
            Match(0, boundary(0), np.array([1, 0]), np.zeros(WINDOW.shape)),
            Match(2, boundary(1), np.array([0, 1]), np.zeros(WINDOW.shape)),
        ]

        def loss():
            return track_loss(decoded, matches, WINDOW, LossConfig())

        assert finite_diff_check(loss, [decoded.points, decoded.class_logits, decoded.scores]) <= 1e-4


class TestTotalLoss:
    """Test the per-frame loss bundle."""

    def test_empty_frame(self, rng):
        """No matches and no futures leave only the score term."""
        decoded = decoded_map(rng)
        masks = Tensor(np.full((3, *WINDOW.shape), 0.5))
        losses = total_loss(FrameSupervision(decoded, masks, WINDOW))
        values = losses.values()
        assert values["seg"] == 0.0
        assert values["pred"] == 0.0
        assert values["total"] == pytest.approx(values["track"])

    def test_components_add_up(self, rng):
        """The total is the sum of the three terms."""
        decoded = decoded_map(rng)
        gt_mask = np.zeros(WINDOW.shape)
        gt_mask[1, :] = 1.0
        masks = Tensor(rng.uniform(0.1, 0.9, size=(3, *WINDOW.shape)))
        futures = [(Tensor([[0.0, 0.0], [1.0, 0.0]]), np.array([[0.0, 1.0], [1.0, 1.0]]))]
        bundle = FrameSupervision(decoded, masks, WINDOW, [Match(1, boundary(), np.array([0, 1]), gt_mask)], futures)
        values = total_loss(bundle).values()
        assert values["seg"] > 0
        assert values["pred"] == pytest.approx(1.0)
        assert values["total"] == pytest.approx(values["track"] + values["seg"] + values["pred"])

    def test_future_loss_is_mean(self):
        """Future loss averages over tracks."""
        futures = [
            (Tensor([[0.0, 0.0]]), np.array([[0.0, 1.0]])),
            (Tensor([[0.0, 0.0]]), np.array([[0.0, 3.0]])),
        ]
        assert future_loss(futures).item() == pytest.approx(2.0)
        assert future_loss([]).item() == 0.0

    def test_total_loss_gradients(self, rng):
        """Track, segmentation and prediction terms pass the check together."""
        decoded = decoded_map(rng)
        masks = Tensor(rng.uniform(0.1, 0.9, size=(3, *WINDOW.shape)), requires_grad=True)
        divider = MapInstance(1, MapClass.DIVIDER, Polyline([[-1.0, -1.0], [1.0, -0.5]]))
        gt_a = (rng.random(WINDOW.shape) > 0.6).astype(float)
        gt_b = (rng.random(WINDOW.shape) > 0.6).astype(float)
        matches = [
            Match(0, boundary(), np.array([1, 0]), gt_a),
            Match(2, divider, np.array([0, 1]), gt_b),
        ]
        p_hats = [Tensor(rng.uniform(-1.5, 1.5, size=(3, 2)), requires_grad=True) for _ in range(2)]
        futures = [(p, rng.uniform(-1.5, 1.5, size=(3, 2))) for p in p_hats]

        def loss():
            bundle = FrameSupervision(decoded, masks, WINDOW, matches, futures)
            return total_loss(bundle).total

        values = total_loss(FrameSupervision(decoded, masks, WINDOW, matches, futures)).values()
        assert values["seg"] > 0 and values["pred"] > 0
        leaves = [decoded.points, decoded.class_logits, decoded.scores, masks, *p_hats]
        assert finite_diff_check(loss, leaves) <= 1e-4
