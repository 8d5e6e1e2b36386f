"""History-map guidance for propagated track queries."""

from typing import Optional

import numpy as np

from mapweave.config import ModelConfig
from mapweave.core.geometry import BevWindow
from mapweave.core.layers import linear, masked_attention, sinusoidal_features
from mapweave.core.params import ParameterStore
from mapweave.core.tensor import Tensor, reshape
from mapweave.errors import ShapeError
from mapweave.models.map_instance import NUM_CLASSES


def register_parameters(store: ParameterStore, cfg: ModelConfig) -> None:
    C = cfg.channels
    store.create("hmg.class_embedding", (NUM_CLASSES, C))
    for proj in ("wq", "wk", "wv", "wo"):
        store.create(f"hmg.{proj}", (C, C))


def position_embedding_grid(window: BevWindow, channels: int) -> np.ndarray:
    """Fixed sinusoidal embedding of normalized cell centers, [H, W, C]."""
    return sinusoidal_features(window.normalize(window.cell_centers()), channels)


def valid_mask(mask: np.ndarray, theta: float) -> np.ndarray:
    """Cells whose memory value strictly exceeds ``theta``."""
    return np.asarray(mask) > theta


def sample_guided_features(
    valid: np.ndarray,
    features: np.ndarray,
    position: np.ndarray,
    memory_values: Optional[np.ndarray] = None,
    k_max: Optional[int] = None,
) -> np.ndarray:
    """Gather ``feature + position`` at valid cells in row-major order.

    When more than ``k_max`` cells are valid, the ones with the highest
    memory value are kept (ties by cell order).

    Returns:
        Array [K, C]; K == 0 means there is nothing to attend to
    """
    if features.shape != position.shape or valid.shape != features.shape[:2]:
        raise ShapeError("guidance inputs disagree", valid.shape, features.shape, position.shape)
    cells = np.flatnonzero(valid)
    if k_max is not None and len(cells) > k_max:
        values = np.asarray(memory_values).reshape(-1)[cells]
        keep = np.argsort(-values, kind="stable")[:k_max]
        cells = np.sort(cells[keep])
    C = features.shape[2]
    return features.reshape(-1, C)[cells] + position.reshape(-1, C)[cells]


def refine_query(
    q_track: Tensor,
    class_id: int,
    sampled: np.ndarray,
    params: ParameterStore,
) -> Tensor:
    """Cross-attend ``q + CE[class]`` over the sampled cells, with a residual.

    The sampled rows are put in a canonical order first so the result
    does not depend on how they were gathered. With no rows the query is
    returned unchanged.
    """
    sampled = np.asarray(sampled, dtype=np.float64)
    if len(sampled) == 0:
        return q_track
    C = q_track.shape[-1]
    sampled = sampled[np.lexsort(sampled.T[::-1])]

    query = reshape(q_track + params["hmg.class_embedding"][class_id], (1, C))
    Q = linear(query, params["hmg.wq"])
    K = linear(sampled, params["hmg.wk"])
    V = linear(sampled, params["hmg.wv"])
    attended = linear(masked_attention(Q, K, V), params["hmg.wo"])
    return q_track + reshape(attended, (C,))
