"""Unit tests for the map decoder heads."""

import numpy as np

from mapweave.core.decoder import decode_map
from mapweave.core.tensor import Tensor, finite_diff_check


def decode(tiny_params, tiny_window, rng):
    features = Tensor(rng.normal(size=(64, 4)))
    position = Tensor(rng.normal(scale=0.1, size=(64, 4)))
    return decode_map(tiny_params["saqg.queries"], features, position, tiny_params, tiny_window, 1, 6)


class TestDecodeMap:
    """Test decoded map outputs."""

    def test_shapes(self, tiny_params, tiny_window, rng):
        """One polyline, class row and score per query."""
        out = decode(tiny_params, tiny_window, rng)
        assert len(out) == 4
        assert out.points.shape == (4, 6, 2)
        assert out.class_logits.shape == (4, 3)
        assert out.scores.shape == (4,)

    def test_points_inside_window(self, tiny_params, tiny_window, rng):
        """Points are squashed into the window."""
        out = decode(tiny_params, tiny_window, rng)
        assert tiny_window.contains(out.points.data).all()

    def test_probabilities(self, tiny_params, tiny_window, rng):
        """Class probabilities are a distribution and scores lie in (0, 1)."""
        out = decode(tiny_params, tiny_window, rng)
        np.testing.assert_allclose(out.class_probabilities().data.sum(axis=1), 1.0)
        assert np.all((out.scores.data > 0) & (out.scores.data < 1))

    def test_gradients(self, tiny_params, tiny_window, rng):
        """Every decoder parameter should pass a sampled gradient check."""
        features = Tensor(rng.normal(size=(64, 4)))
        position = Tensor(rng.normal(scale=0.1, size=(64, 4)))
        target = rng.uniform(-1, 1, size=(4, 6, 2))
        names = [n for n in tiny_params if n.startswith("decoder.")]

        def loss():
            out = decode_map(tiny_params["saqg.queries"], features, position, tiny_params, tiny_window, 1, 6)
            diff = out.points - target
            return (diff * diff).mean() + out.scores.sum() + out.class_probabilities()[:, 0].sum()

        checked = [tiny_params[n] for n in names]
        assert finite_diff_check(loss, checked, max_coords_per_param=6) <= 1e-4
