"""Unit tests for linear, attention and MLP blocks."""

import numpy as np
import pytest

from mapweave.core.layers import (
    additive_mask_to_allowed,
    linear,
    masked_attention,
    mlp,
    sinusoidal_features,
)
from mapweave.core.tensor import Tensor, finite_diff_check
from mapweave.errors import ConfigurationError, ContractError, ShapeError


class TestLinear:
    """Test linear layers."""

    def test_batched_input_keeps_leading_axes(self, rng):
        """Should map [2, 3, 4] through [4, 5] to [2, 3, 5]."""
        x = Tensor(rng.normal(size=(2, 3, 4)))
        W = Tensor(rng.normal(size=(4, 5)))
        b = Tensor(rng.normal(size=5))
        y = linear(x, W, b)
        assert y.shape == (2, 3, 5)
        np.testing.assert_allclose(y.data, x.data @ W.data + b.data)

    def test_mismatch(self, rng):
        """Should raise ShapeError on wrong input width."""
        with pytest.raises(ShapeError):
            linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_bias_mismatch(self):
        """Should raise ShapeError on wrong bias width."""
        with pytest.raises(ShapeError):
            linear(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 5))), Tensor(np.ones(4)))


class TestMaskedAttention:
    """Test single-head masked attention."""

    def test_additive_mask_translation(self):
        """0 should map to allowed and -inf to blocked."""
        allowed = additive_mask_to_allowed(np.array([[0.0, -np.inf]]))
        np.testing.assert_array_equal(allowed, [[True, False]])

    def test_additive_mask_rejects_other_values(self):
        """Finite nonzero entries are not a valid mask."""
        with pytest.raises(ContractError):
            additive_mask_to_allowed(np.array([[0.0, -1.0]]))

    def test_blocked_keys_get_no_weight(self, rng):
        """Output should be the single allowed value row."""
        Q = Tensor(rng.normal(size=(1, 4)))
        K = Tensor(rng.normal(size=(3, 4)))
        V = Tensor(np.eye(3))
        out = masked_attention(Q, K, V, np.array([[-np.inf, 0.0, -np.inf]]))
        np.testing.assert_allclose(out.data, [[0.0, 1.0, 0.0]])

    def test_fully_masked_row_attends_everywhere(self, rng):
        """A row masked entirely should equal unmasked attention."""
        Q = Tensor(rng.normal(size=(2, 4)))
        K = Tensor(rng.normal(size=(3, 4)))
        V = Tensor(rng.normal(size=(3, 2)))
        mask = np.full((2, 3), -np.inf)
        np.testing.assert_allclose(
            masked_attention(Q, K, V, mask).data, masked_attention(Q, K, V).data
        )

    def test_gradients(self, rng):
        """Attention should pass the finite-difference check."""
        Q = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        K = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        V = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        mask = np.where(rng.random((2, 5)) < 0.5, -np.inf, 0.0)
        err = finite_diff_check(lambda: masked_attention(Q, K, V, mask).sum(), [Q, K, V])
        assert err <= 1e-4

    def test_mask_shape(self, rng):
        """Should reject a mask of the wrong shape."""
        Q = Tensor(np.ones((2, 4)))
        K = Tensor(np.ones((3, 4)))
        with pytest.raises(ShapeError):
            masked_attention(Q, K, K, np.zeros((3, 2)))


class TestMlp:
    """Test the MLP helper."""

    def test_empty_layers(self):
        """Should refuse an MLP without layers."""
        with pytest.raises(ConfigurationError):
            mlp(Tensor(np.ones((1, 2))), [])

    def test_no_activation_after_last_layer(self):
        """Negative outputs of the final layer must survive."""
        W = Tensor(-np.eye(2))
        out = mlp(Tensor([[1.0, 2.0]]), [(Tensor(np.eye(2)), None), (W, None)])
        np.testing.assert_allclose(out.data, [[-1.0, -2.0]])


class TestSinusoidalFeatures:
    """Test the fixed position encoding."""

    def test_shape_and_leftover_channels(self):
        """Channels beyond the last full band should be zero."""
        out = sinusoidal_features(np.zeros((3, 2)), 6)
        assert out.shape == (3, 6)
        np.testing.assert_allclose(out[:, 4:], 0.0)
        np.testing.assert_allclose(out[:, :4], [[0.0, 1.0, 0.0, 1.0]] * 3)
