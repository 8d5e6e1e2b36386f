"""Unit tests for the history map memory."""

import math

import numpy as np
import pytest

from mapweave.core.geometry import BevWindow, Se2Pose
from mapweave.core.memory import HistoryMapMemory, init_entry, prune, update_entry, warp_grid, warp_memory
from mapweave.errors import ContractError, ShapeError
from mapweave.models.map_instance import MapClass


@pytest.fixture
def memory(tiny_window):
    """Empty memory over the tiny window."""
    return HistoryMapMemory(tiny_window)


class TestMemoryAlgebra:
    """Test init/update arithmetic."""

    def test_init_scales_by_score(self, memory, rng):
        """A new entry should be exactly mask * score."""
        mask = rng.random((8, 8))
        init_entry(memory, 1, mask, 0.8)
        np.testing.assert_array_equal(memory.get(1).mask.grid, mask * 0.8)

    @pytest.mark.parametrize("beta", [0.0, 0.5, 0.9, 1.0])
    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_geometric_convergence(self, memory, rng, beta, k):
        """k updates from zero should give (1 - (1-beta)^k) * pred."""
        pred = rng.random((8, 8))
        memory.init_entry(1, pred, 0.0)
        for _ in range(k):
            update_entry(memory, 1, pred, 1.0, beta)
        expected = (1.0 - (1.0 - beta) ** k) * pred
        np.testing.assert_allclose(memory.get(1).mask.grid, expected, rtol=0, atol=1e-12)

    def test_update_records_frame(self, memory):
        """update_entry should move last_update_frame when given."""
        memory.init_entry(3, np.ones((8, 8)), 1.0, MapClass.CROSSING, frame_index=2)
        memory.update_entry(3, np.zeros((8, 8)), 0.5, 0.5, frame_index=5)
        entry = memory.get(3)
        assert entry.last_update_frame == 5
        assert entry.map_class == MapClass.CROSSING
        np.testing.assert_allclose(entry.mask.grid, 0.5)

    def test_duplicate_init(self, memory):
        """Initializing a live track twice should raise ContractError."""
        memory.init_entry(1, np.zeros((8, 8)), 0.5)
        with pytest.raises(ContractError):
            memory.init_entry(1, np.zeros((8, 8)), 0.5)

    def test_update_missing(self, memory):
        """Updating an unknown track should raise ContractError."""
        with pytest.raises(ContractError):
            memory.update_entry(9, np.zeros((8, 8)), 0.5, 0.5)

    @pytest.mark.parametrize("score,beta", [(1.5, 0.5), (-0.1, 0.5), (0.5, 1.1)])
    def test_ranges(self, memory, score, beta):
        """Scores and beta outside [0, 1] should be refused."""
        memory.init_entry(1, np.zeros((8, 8)), 0.5)
        with pytest.raises(ContractError):
            memory.update_entry(1, np.zeros((8, 8)), score, beta)

    def test_shape_mismatch(self, memory):
        """A mask of the wrong size should raise ShapeError."""
        with pytest.raises(ShapeError):
            memory.init_entry(1, np.zeros((4, 4)), 0.5)

    def test_values_stay_in_unit_interval(self, memory, rng):
        """Random operation sequences should keep every cell in [0, 1]."""
        next_id = 0
        for _ in range(1000):
            op = rng.integers(4)
            ids = sorted(memory.track_ids)
            if op == 0 or not ids:
                memory.init_entry(next_id, rng.random((8, 8)), float(rng.random()))
                next_id += 1
            elif op == 1:
                tid = int(rng.choice(ids))
                memory.update_entry(tid, rng.random((8, 8)), float(rng.random()), float(rng.random()))
            elif op == 2:
                memory.warp(Se2Pose(*rng.normal(scale=0.5, size=2), float(rng.normal(scale=0.3))))
            else:
                memory.prune(ids[: len(ids) // 2 + 1])
            for tid in memory:
                grid = memory.get(tid).mask.grid
                assert grid.min() >= 0.0 and grid.max() <= 1.0


class TestWarp:
    """Test ego-motion warping."""

    def test_identity_is_exact_copy(self, tiny_window, rng):
        """The identity motion should return an equal, distinct array."""
        grid = rng.random((8, 8))
        out = warp_grid(grid, tiny_window, Se2Pose.identity())
        np.testing.assert_array_equal(out, grid)
        assert out is not grid

    def test_one_cell_forward_shift(self, tiny_window, rng):
        """Moving one cell along +x should shift columns left with zero fill."""
        grid = rng.random((8, 8))
        out = warp_grid(grid, tiny_window, Se2Pose(tiny_window.resolution, 0.0, 0.0))
        np.testing.assert_array_equal(out[:, :-1], grid[:, 1:])
        np.testing.assert_array_equal(out[:, -1], 0.0)

    def test_two_cell_lateral_shift(self, tiny_window, rng):
        """Moving two cells along -y should shift rows up with zero fill."""
        grid = rng.random((8, 8))
        out = warp_grid(grid, tiny_window, Se2Pose(0.0, -2 * tiny_window.resolution, 0.0))
        np.testing.assert_array_equal(out[2:], grid[:-2])
        np.testing.assert_array_equal(out[:2], 0.0)

    def test_half_turn_on_symmetric_mask(self, tiny_window, rng):
        """A pi rotation should leave a centrally symmetric mask unchanged."""
        half = rng.random((8, 8))
        grid = 0.5 * (half + half[::-1, ::-1])
        out = warp_grid(grid, tiny_window, Se2Pose(0.0, 0.0, math.pi))
        np.testing.assert_allclose(out, grid, atol=1e-9)

    def test_warp_memory_moves_every_entry(self, memory, rng):
        """warp_memory should update all masks."""
        memory.init_entry(1, rng.random((8, 8)), 1.0)
        memory.init_entry(2, rng.random((8, 8)), 1.0)
        before = {tid: memory.get(tid).mask.grid.copy() for tid in memory}
        warp_memory(memory, Se2Pose(0.5, 0.0, 0.0))
        for tid, grid in before.items():
            np.testing.assert_array_equal(memory.get(tid).mask.grid[:, :-1], grid[:, 1:])

    def test_shape_mismatch(self, tiny_window):
        """Grids must match the window."""
        with pytest.raises(ShapeError):
            warp_grid(np.zeros((3, 3)), tiny_window, Se2Pose(1.0, 0.0, 0.0))


WIDE_WINDOW = BevWindow(-12.0, 12.0, -12.0, 12.0, 0.5)


def smooth_blob(window: BevWindow, sigma: float = 3.0) -> np.ndarray:
    """Centered Gaussian mask with peak 1, negligible at the border."""
    centers = window.cell_centers()
    return np.exp(-(centers[..., 0] ** 2 + centers[..., 1] ** 2) / (2.0 * sigma**2))


def small_motion(rng) -> Se2Pose:
    return Se2Pose(float(rng.uniform(-0.4, 0.4)), float(rng.uniform(-0.4, 0.4)), float(rng.uniform(-0.05, 0.05)))


class TestWarpAccuracy:
    """Bilinear warping of smooth interior masks."""

    @pytest.mark.parametrize("seed", range(10))
    def test_mass_conserved_under_small_motion(self, seed):
        """Total mask mass changes by at most 5%."""
        grid = smooth_blob(WIDE_WINDOW)
        out = warp_grid(grid, WIDE_WINDOW, small_motion(np.random.default_rng(seed)))
        assert abs(out.sum() - grid.sum()) <= 0.05 * grid.sum()

    @pytest.mark.parametrize("seed", range(10))
    def test_round_trip_close_to_identity(self, seed):
        """Warping by a motion and then by its inverse restores interior cells within 0.02."""
        grid = smooth_blob(WIDE_WINDOW)
        motion = small_motion(np.random.default_rng(seed))
        back = warp_grid(warp_grid(grid, WIDE_WINDOW, motion), WIDE_WINDOW, motion.inverse())
        np.testing.assert_allclose(back[4:-4, 4:-4], grid[4:-4, 4:-4], rtol=0, atol=0.02)


class TestPrune:
    """Test pruning."""

    def test_prune_returns_removed_count(self, memory):
        """Only entries outside the live set should be dropped."""
        for tid in range(4):
            memory.init_entry(tid, np.zeros((8, 8)), 0.1)
        assert prune(memory, {1, 3}) == 2
        assert memory.track_ids == {1, 3}

    def test_prune_nothing(self, memory):
        """Pruning with every id live removes nothing."""
        memory.init_entry(0, np.zeros((8, 8)), 0.1)
        assert memory.prune([0]) == 0
        assert len(memory) == 1
