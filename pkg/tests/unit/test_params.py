"""Unit tests for the parameter store and optimizer."""

import numpy as np
import pytest

from mapweave.core.params import MomentumSGD, ParameterStore
from mapweave.errors import ContractError, ShapeError


class TestParameterStore:
    """Test parameter creation and state handling."""

    def test_initialization_independent_of_creation_order(self):
        """Same seed and name should give the same values in any order."""
        a = ParameterStore(seed=5)
        a.create("x", (3, 2))
        a.create("y", (4,))
        b = ParameterStore(seed=5)
        b.create("y", (4,))
        b.create("x", (3, 2))
        np.testing.assert_array_equal(a["x"].data, b["x"].data)
        np.testing.assert_array_equal(a["y"].data, b["y"].data)

    def test_uniform_bound(self):
        """Uniform init should stay within 1/sqrt(fan_in)."""
        store = ParameterStore()
        p = store.create("w", (16, 8))
        assert np.all(np.abs(p.data) <= 0.25)

    def test_zeros_and_identity(self):
        """Named initializers should produce exact values."""
        store = ParameterStore()
        np.testing.assert_array_equal(store.create("z", (2, 3), init="zeros").data, 0.0)
        np.testing.assert_array_equal(store.create("i", (2, 3), init="identity").data, np.eye(2, 3))

    def test_recreate_with_other_shape(self):
        """Should raise ShapeError when a name is reused with a new shape."""
        store = ParameterStore()
        store.create("w", (2, 2))
        with pytest.raises(ShapeError):
            store.create("w", (3, 2))

    def test_unknown_name(self):
        """Should raise ContractError for unknown names."""
        with pytest.raises(ContractError):
            ParameterStore()["missing"]

    def test_state_dict_round_trip(self):
        """Loading a state should restore exact values."""
        store = ParameterStore(seed=1)
        store.create("w", (2, 2))
        state = store.state_dict()
        store["w"].data = np.zeros((2, 2))
        store.load_state_dict(state)
        np.testing.assert_array_equal(store["w"].data, state["w"])

    def test_load_state_mismatch(self):
        """Missing names and wrong shapes should be refused."""
        store = ParameterStore()
        store.create("w", (2, 2))
        with pytest.raises(ContractError):
            store.load_state_dict({})
        with pytest.raises(ShapeError):
            store.load_state_dict({"w": np.zeros(3)})

    def test_reinitialize(self):
        """Should restore the creation-time values."""
        store = ParameterStore(seed=2)
        initial = store.create("w", (3,)).data.copy()
        store["w"].data = np.ones(3)
        store.reinitialize()
        np.testing.assert_array_equal(store["w"].data, initial)


class TestMomentumSGD:
    """Test the optimizer update."""

    def test_plain_step(self):
        """First step should move by -lr * grad."""
        store = ParameterStore()
        p = store.create("w", (2,), init="zeros")
        p.grad = np.array([1.0, -2.0])
        MomentumSGD(store, learning_rate=0.1, momentum=0.9).step()
        np.testing.assert_allclose(p.data, [-0.1, 0.2])

    def test_momentum_accumulates(self):
        """Second step should use momentum * v + g."""
        store = ParameterStore()
        p = store.create("w", (1,), init="zeros")
        opt = MomentumSGD(store, learning_rate=1.0, momentum=0.5)
        p.grad = np.array([1.0])
        opt.step()
        opt.step()
        np.testing.assert_allclose(p.data, [-2.5])

    def test_clipping(self):
        """Gradient norm above the clip should be rescaled."""
        store = ParameterStore()
        p = store.create("w", (2,), init="zeros")
        p.grad = np.array([3.0, 4.0])
        norm = MomentumSGD(store, learning_rate=1.0, grad_clip=1.0).step()
        assert norm == pytest.approx(5.0)
        np.testing.assert_allclose(p.data, [-0.6, -0.8])

    def test_rebinds_arrays(self):
        """The previous array object must remain untouched."""
        store = ParameterStore()
        p = store.create("w", (1,), init="zeros")
        old = p.data
        p.grad = np.array([1.0])
        MomentumSGD(store, learning_rate=1.0).step()
        assert old[0] == 0.0
        assert p.data is not old
