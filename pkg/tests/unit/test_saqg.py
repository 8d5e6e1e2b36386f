"""Unit tests for semantic-aware query generation."""

import numpy as np
import pytest

from mapweave.core import saqg
from mapweave.core.params import ParameterStore
from mapweave.core.saqg import MaskSet, QuerySet, decoder_layer, predict_masks, run_generator, seg_loss
from mapweave.core.tensor import Tensor, finite_diff_check
from mapweave.errors import ConfigurationError, ContractError, ShapeError

SHAPE = (8, 8)


@pytest.fixture
def inputs(tiny_params, rng):
    """Random flattened features and position codes for the tiny grid."""
    C = tiny_params["saqg.queries"].shape[1]
    features = Tensor(rng.normal(size=(64, C)))
    position = Tensor(rng.normal(scale=0.1, size=(64, C)))
    return features, position


class TestQuerySet:
    """Test query containers."""

    def test_defaults_to_detections(self):
        """Without ids every slot is a detection."""
        qs = QuerySet(Tensor(np.zeros((3, 4))))
        assert qs.track_ids == [None, None, None]

    def test_duplicate_track_ids(self):
        """Track ids must be unique."""
        with pytest.raises(ContractError):
            QuerySet(Tensor(np.zeros((2, 4))), [5, 5])

    def test_id_count(self):
        """One id slot per query."""
        with pytest.raises(ShapeError):
            QuerySet(Tensor(np.zeros((2, 4))), [1])


class TestMasks:
    """Test mask prediction and masked refinement."""

    def test_predict_masks_shape_and_range(self, tiny_params, inputs):
        """Masks should be [N, H, W] probabilities."""
        features, _ = inputs
        masks = predict_masks(QuerySet(tiny_params["saqg.queries"]), features, tiny_params, SHAPE)
        assert masks.masks.shape == (4, 8, 8)
        assert masks.flat.shape == (4, 64)
        assert np.all((masks.masks.data > 0) & (masks.masks.data < 1))

    def test_empty_foreground_attends_everywhere(self, tiny_params, inputs):
        """All-background and all-foreground previous masks should agree."""
        features, position = inputs
        queries = QuerySet(tiny_params["saqg.queries"])
        empty = MaskSet(Tensor(np.zeros((4, *SHAPE))))
        full = MaskSet(Tensor(np.ones((4, *SHAPE))))
        a, _ = decoder_layer(queries, features, position, empty, tiny_params, 0, 0.5, SHAPE)
        b, _ = decoder_layer(queries, features, position, full, tiny_params, 0, 0.5, SHAPE)
        np.testing.assert_allclose(a.embeddings.data, b.embeddings.data)

    def test_background_cells_do_not_influence_queries(self, tiny_params, inputs, rng):
        """Changing features at masked-out cells should leave queries unchanged."""
        features, position = inputs
        queries = QuerySet(tiny_params["saqg.queries"])
        prev = np.zeros((4, *SHAPE))
        prev[:, :4, :] = 0.9
        masks = MaskSet(Tensor(prev))
        altered = features.data.copy()
        altered[32:] = rng.normal(size=altered[32:].shape)
        a, _ = decoder_layer(queries, features, position, masks, tiny_params, 0, 0.5, SHAPE)
        b, _ = decoder_layer(queries, Tensor(altered), position, masks, tiny_params, 0, 0.5, SHAPE)
        np.testing.assert_array_equal(a.embeddings.data, b.embeddings.data)

    def test_track_ids_carried(self, tiny_params, inputs):
        """Refinement should keep the query identities."""
        features, position = inputs
        queries = QuerySet(tiny_params["saqg.queries"], [None, 7, None, 2])
        out, _ = run_generator(queries, features, position, tiny_params, 1, 0.5, SHAPE)
        assert out.track_ids == [None, 7, None, 2]

    def test_invalid_tau(self, tiny_params, inputs):
        """tau_l must lie strictly inside (0, 1)."""
        features, position = inputs
        masks = MaskSet(Tensor(np.zeros((4, *SHAPE))))
        with pytest.raises(ConfigurationError):
            decoder_layer(QuerySet(tiny_params["saqg.queries"]), features, position, masks, tiny_params, 0, 1.0, SHAPE)

    def test_zero_layers(self, tiny_params, inputs):
        """The generator needs at least one layer."""
        features, position = inputs
        with pytest.raises(ConfigurationError):
            run_generator(QuerySet(tiny_params["saqg.queries"]), features, position, tiny_params, 0, 0.5, SHAPE)

    def test_gradients_through_layer(self, tiny_params, inputs, rng):
        """Query, projection and attention weights should pass the check."""
        features, position = inputs
        prev = MaskSet(Tensor(rng.random((4, *SHAPE))))
        gt = (rng.random((4, *SHAPE)) > 0.5).astype(float)
        names = ["saqg.queries", "saqg.mask_proj.weight", "saqg.mask_proj.bias"] + [
            f"saqg.layer0.{p}" for p in ("wq", "wk", "wv", "wo")
        ]

        def loss():
            queries = QuerySet(tiny_params["saqg.queries"])
            _, masks = decoder_layer(queries, features, position, prev, tiny_params, 0, 0.5, SHAPE)
            return seg_loss(masks.masks, gt)

        assert finite_diff_check(loss, [tiny_params[n] for n in names]) <= 1e-4


class TestSegLoss:
    """Test the segmentation loss."""

    def test_perfect_prediction_near_zero(self, rng):
        """Predicting the target exactly should cost almost nothing."""
        gt = (rng.random((2, *SHAPE)) > 0.5).astype(float)
        assert seg_loss(Tensor(gt), gt).item() < 1e-5

    def test_empty(self):
        """No pairs means zero loss."""
        assert seg_loss(Tensor(np.zeros((0, *SHAPE))), np.zeros((0, *SHAPE))).item() == 0.0

    def test_shape_mismatch(self):
        """Prediction and target shapes must agree."""
        with pytest.raises(ShapeError):
            seg_loss(Tensor(np.zeros((1, *SHAPE))), np.zeros((2, *SHAPE)))

    def test_weights(self, rng):
        """Loss should be lambda_dice * dice + lambda_bce * bce."""
        p = Tensor(rng.uniform(0.1, 0.9, size=(1, *SHAPE)))
        gt = (rng.random((1, *SHAPE)) > 0.5).astype(float)
        dice_only = seg_loss(p, gt, 1.0, 0.0).item()
        bce_only = seg_loss(p, gt, 0.0, 1.0).item()
        assert seg_loss(p, gt, 2.0, 3.0).item() == pytest.approx(2 * dice_only + 3 * bce_only)

    def test_registered_parameters(self, tiny_config):
        """Every layer should get its four projections."""
        from mapweave.core.params import ParameterStore

        store = ParameterStore()
        saqg.register_parameters(store, tiny_config.model)
        assert "saqg.layer0.wo" in store
        assert store["saqg.queries"].shape == (4, 4)


def thresholded_probabilities(params, features, position, layers, tau_l):
    """Mask probabilities the generator compares against ``tau_l``."""
    queries = QuerySet(params["saqg.queries"])
    masks = predict_masks(queries, features, params, SHAPE)
    seen = []
    for layer in range(layers):
        seen.append(masks.flat.ravel())
        queries, masks = decoder_layer(queries, features, position, masks, params, layer, tau_l, SHAPE)
    return np.concatenate(seen)


class TestGeneratorGradients:
    """Gradient checks through the stacked generator."""

    def test_gradients_through_two_layers(self, tiny_config, inputs, rng):
        """Initial queries and every layer's weights pass the check with L=2."""
        features, position = inputs
        model = tiny_config.model.model_copy(update={"saqg_layers": 2})
        params = ParameterStore(seed=7)
        saqg.register_parameters(params, model)
        gt = (rng.random((4, *SHAPE)) > 0.5).astype(float)
        direction = rng.normal(size=params["saqg.queries"].shape)

        # A threshold away from every compared probability keeps the masks fixed under perturbation
        tau_l = next(
            tau
            for tau in (0.5, 0.45, 0.55, 0.4, 0.6, 0.35, 0.65, 0.3, 0.7)
            if np.min(np.abs(thresholded_probabilities(params, features, position, 2, tau) - tau)) > 1e-4
        )
        names = ["saqg.queries"] + [f"saqg.layer{layer}.{p}" for layer in (0, 1) for p in ("wq", "wk", "wv", "wo")]

        def loss():
            queries, masks = run_generator(
                QuerySet(params["saqg.queries"]), features, position, params, 2, tau_l, SHAPE
            )
            return seg_loss(masks.masks, gt) + (queries.embeddings * direction).sum()

        assert finite_diff_check(loss, [params[n] for n in names]) <= 1e-4
