"""Short-term future guidance.

Every live track keeps its last ``n`` decoded polylines expressed in the
current ego frame. A small MLP reads that history and predicts where the
polyline will sit in the next ego frame; the prediction is embedded and
fused into the query the track carries forward.
"""

from collections import deque
from typing import Iterable, Optional

import numpy as np

from mapweave.config import ModelConfig
from mapweave.core.geometry import BevWindow, Se2Pose
from mapweave.core.layers import linear, mlp, sinusoidal_features
from mapweave.core.params import ParameterStore
from mapweave.core.tensor import Tensor, as_tensor, concat, index, reshape, row_norm
from mapweave.errors import ContractError, ShapeError


class TrajectoryHistory:
    """Per-track ring buffers of recent polylines in the current ego frame."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractError("history capacity must be at least 1")
        self.capacity = capacity
        self._buffers: dict[int, deque[tuple[int, np.ndarray]]] = {}

    def __contains__(self, track_id: int) -> bool:
        return track_id in self._buffers

    def __len__(self) -> int:
        return len(self._buffers)

    @property
    def track_ids(self) -> set[int]:
        return set(self._buffers)

    def frames(self, track_id: int) -> list[int]:
        return [frame for frame, _ in self._buffers.get(track_id, ())]

    def push(self, track_id: int, frame_index: int, points: np.ndarray) -> None:
        """Append the polyline decoded at ``frame_index``.

        A gap in frame indices restarts the buffer so stored frames stay
        contiguous.
        """
        buffer = self._buffers.setdefault(track_id, deque(maxlen=self.capacity))
        if buffer and buffer[-1][0] != frame_index - 1:
            buffer.clear()
        buffer.append((frame_index, np.array(points, dtype=np.float64)))

    def reframe(self, motion: Se2Pose) -> None:
        """Re-express every stored polyline in the next ego frame."""
        if motion.is_identity():
            return
        inverse = motion.inverse()
        for buffer in self._buffers.values():
            for i, (frame, points) in enumerate(buffer):
                buffer[i] = (frame, inverse.apply(points))

    def prune(self, live_track_ids: Iterable[int]) -> int:
        live = set(live_track_ids)
        dead = [tid for tid in self._buffers if tid not in live]
        for tid in dead:
            del self._buffers[tid]
        return len(dead)

    def latest(self, track_id: int) -> np.ndarray:
        return self.stacked(track_id)[-1]

    def stacked(self, track_id: int) -> np.ndarray:
        """History as [capacity, N_p, 2], oldest first, left-padded with the oldest entry.

        Raises:
            ContractError: If the track has no history
        """
        buffer = self._buffers.get(track_id)
        if not buffer:
            raise ContractError(f"no trajectory history for track {track_id}")
        polylines = [points for _, points in buffer]
        padding = [polylines[0]] * (self.capacity - len(polylines))
        return np.stack(padding + polylines)


def register_parameters(store: ParameterStore, cfg: ModelConfig) -> None:
    C = cfg.channels
    width = cfg.history_frames * cfg.num_points * 2
    for layer in range(cfg.stfg_hidden_layers):
        store.create(f"stfg.mlp.{layer}.weight", (width, cfg.stfg_hidden))
        store.create(f"stfg.mlp.{layer}.bias", (cfg.stfg_hidden,), init="zeros")
        width = cfg.stfg_hidden
    out = cfg.stfg_hidden_layers
    store.create(f"stfg.mlp.{out}.weight", (width, cfg.num_points * 2), init="zeros")
    store.create(f"stfg.mlp.{out}.bias", (cfg.num_points * 2,), init="zeros")
    store.create("stfg.phi.weight", (C, C))
    store.create("stfg.phi.bias", (C,), init="zeros")
    store.create("stfg.fuse.weight", (2 * C, C), init="identity")
    store.create("stfg.fuse.bias", (C,), init="zeros")


def _mlp_layers(params: ParameterStore) -> list[tuple[Tensor, Tensor]]:
    layers = []
    while f"stfg.mlp.{len(layers)}.weight" in params:
        i = len(layers)
        layers.append((params[f"stfg.mlp.{i}.weight"], params[f"stfg.mlp.{i}.bias"]))
    return layers


def predict_future(
    history: np.ndarray, window: BevWindow, params: ParameterStore
) -> tuple[Tensor, Tensor]:
    """Predict next-frame point offsets from a padded history.

    Args:
        history: [n, N_p, 2] polylines in the current ego frame, oldest first
        window: Window used to normalize coordinates
        params: Parameter store

    Returns:
        (offsets [N_p, 2] in meters, future polyline [N_p, 2])
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 3 or history.shape[0] == 0:
        raise ContractError("predict_future needs a nonempty [n, N_p, 2] history")
    n_points = history.shape[1]
    x = window.normalize(history).reshape(1, -1)
    layers = _mlp_layers(params)
    if layers[0][0].shape[0] != x.shape[1]:
        raise ShapeError("history does not match the predictor input", x.shape, layers[0][0].shape)
    out = reshape(mlp(x, layers), (n_points, 2))
    offsets = out * window.half_extent
    return offsets, offsets + history[-1]


def future_embedding(p_hat: np.ndarray, window: BevWindow, params: ParameterStore) -> Tensor:
    """Mean over points of a learnable map of each point's sinusoidal code, [C]."""
    C = params["stfg.phi.weight"].shape[0]
    codes = sinusoidal_features(window.normalize(np.asarray(p_hat)), C)
    return linear(codes, params["stfg.phi.weight"], params["stfg.phi.bias"]).mean(axis=0)


def fuse_future_guidance(
    q_track: Tensor, p_hat: np.ndarray, window: BevWindow, params: ParameterStore
) -> Tensor:
    """Linear fusion of ``[q; PE_future]`` back to width C.

    ``p_hat`` enters as plain coordinates; the predictor is trained by
    its own loss.
    """
    C = q_track.shape[-1]
    pe_future = future_embedding(p_hat, window, params)
    joined = reshape(concat([as_tensor(q_track), pe_future]), (1, 2 * C))
    fused = linear(joined, params["stfg.fuse.weight"], params["stfg.fuse.bias"])
    return reshape(fused, (C,))


def pred_loss(p_hat: Tensor, gt_next: np.ndarray) -> Tensor:
    """Chamfer distance between the predicted and true next-frame points.

    Nearest-neighbor ties go to the lowest index.
    """
    p_hat = as_tensor(p_hat)
    gt_next = np.asarray(gt_next, dtype=np.float64)
    if p_hat.ndim != 2 or gt_next.ndim != 2 or p_hat.shape[1] != 2 or gt_next.shape[1] != 2:
        raise ShapeError("pred_loss expects two [N, 2] point sets", p_hat.shape, gt_next.shape)
    diff = p_hat.data[:, None, :] - gt_next[None, :, :]
    distances = np.sqrt(np.sum(diff * diff, axis=2))
    to_gt = np.argmin(distances, axis=1)
    to_pred = np.argmin(distances, axis=0)
    forward = row_norm(p_hat - gt_next[to_gt]).mean()
    backward = row_norm(index(p_hat, to_pred) - gt_next).mean()
    return 0.5 * (forward + backward)
