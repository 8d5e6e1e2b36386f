"""Semantic-aware query generation.

Learnable detection queries are refined by ``L`` layers of masked
attention over the BEV features. Each layer only lets a query attend to
the cells its previous mask marked as foreground, then re-predicts the
masks from the updated queries.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from mapweave.config import ModelConfig
from mapweave.core.layers import linear, masked_attention
from mapweave.core.params import ParameterStore
from mapweave.core.tensor import Tensor, as_tensor, clip, log, matmul, reshape, sigmoid
from mapweave.errors import ConfigurationError, ContractError, ShapeError

MASK_CLAMP = 1e-7
DICE_EPS = 1e-6


@dataclass
class QuerySet:
    """Query embeddings with their kind and (for tracks) ids."""

    embeddings: Tensor  # [N, C]
    track_ids: Optional[list[Optional[int]]] = None  # None entries are detections

    def __post_init__(self):
        if self.embeddings.ndim != 2:
            raise ShapeError("query embeddings must be [N, C]", self.embeddings.shape)
        if self.track_ids is None:
            self.track_ids = [None] * len(self.embeddings)
        if len(self.track_ids) != len(self.embeddings):
            raise ShapeError("one track id slot per query", (len(self.track_ids),), self.embeddings.shape)
        ids = [i for i in self.track_ids if i is not None]
        if len(set(ids)) != len(ids):
            raise ContractError("track ids must be unique within a query set")

    def __len__(self) -> int:
        return len(self.embeddings)


@dataclass
class MaskSet:
    """Per-query soft masks [N, H, W] in [0, 1]."""

    masks: Tensor

    @property
    def flat(self) -> np.ndarray:
        return self.masks.data.reshape(self.masks.shape[0], -1)


def register_parameters(store: ParameterStore, cfg: ModelConfig) -> None:
    C = cfg.channels
    store.create("saqg.queries", (cfg.num_queries, C))
    store.create("saqg.mask_proj.weight", (C, C))
    store.create("saqg.mask_proj.bias", (C,), init="zeros")
    for layer in range(cfg.saqg_layers):
        for proj in ("wq", "wk", "wv", "wo"):
            store.create(f"saqg.layer{layer}.{proj}", (C, C))


def predict_masks(queries: QuerySet, features: Tensor, params: ParameterStore, shape: tuple[int, int]) -> MaskSet:
    """Masks as sigmoid of query / projected-feature dot products.

    Args:
        queries: N queries of width C
        features: BEV features flattened to [H*W, C]
        params: Parameter store
        shape: Grid (H, W)
    """
    projected = linear(features, params["saqg.mask_proj.weight"], params["saqg.mask_proj.bias"])
    if projected.shape[1] != queries.embeddings.shape[1]:
        raise ShapeError("query and feature widths disagree", queries.embeddings.shape, projected.shape)
    logits = matmul(queries.embeddings, projected.T)
    return MaskSet(reshape(sigmoid(logits), (len(queries), *shape)))


def decoder_layer(
    queries: QuerySet,
    features: Tensor,
    position: Tensor,
    prev_masks: MaskSet,
    params: ParameterStore,
    layer: int,
    tau_l: float,
    shape: tuple[int, int],
) -> tuple[QuerySet, MaskSet]:
    """One masked-attention refinement step.

    Keys see features plus position embeddings; values see raw features.
    Cells whose previous mask probability exceeds ``tau_l`` are attended.
    """
    if not 0 < tau_l < 1:
        raise ConfigurationError(f"tau_l must lie in (0, 1), got {tau_l}")
    prefix = f"saqg.layer{layer}"
    additive = np.where(prev_masks.flat > tau_l, 0.0, -np.inf)

    Q = linear(queries.embeddings, params[f"{prefix}.wq"])
    K = linear(features + position, params[f"{prefix}.wk"])
    V = linear(features, params[f"{prefix}.wv"])
    attended = masked_attention(Q, K, V, additive)
    updated = QuerySet(queries.embeddings + linear(attended, params[f"{prefix}.wo"]), queries.track_ids)
    return updated, predict_masks(updated, features, params, shape)


def run_generator(
    initial_queries: QuerySet,
    features: Tensor,
    position: Tensor,
    params: ParameterStore,
    num_layers: int,
    tau_l: float,
    shape: tuple[int, int],
) -> tuple[QuerySet, MaskSet]:
    """Seed masks from the initial queries, then apply ``num_layers`` layers."""
    if num_layers < 1:
        raise ConfigurationError("the generator needs at least one layer")
    queries = initial_queries
    masks = predict_masks(queries, features, params, shape)
    for layer in range(num_layers):
        queries, masks = decoder_layer(queries, features, position, masks, params, layer, tau_l, shape)
    return queries, masks


def seg_loss(
    pred: Tensor,
    gt: np.ndarray,
    lambda_dice: float = 2.0,
    lambda_bce: float = 1.0,
) -> Tensor:
    """Dice plus mean binary cross-entropy, summed over matched pairs.

    Args:
        pred: Matched predicted masks [M, H, W]
        gt: Matched ground-truth rasters [M, H, W]

    Returns:
        Scalar tensor (0 when M == 0)
    """
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError("predicted and target masks disagree", pred.shape, gt.shape)
    if pred.shape[0] == 0:
        return Tensor(0.0)

    p = reshape(pred, (pred.shape[0], -1))
    g = gt.reshape(gt.shape[0], -1)
    intersection = (p * g).sum(axis=1)
    denominator = p.sum(axis=1) + g.sum(axis=1) + DICE_EPS
    dice = 1.0 - 2.0 * intersection / denominator

    pc = clip(p, MASK_CLAMP, 1.0 - MASK_CLAMP)
    bce = -(as_tensor(g) * log(pc) + as_tensor(1.0 - g) * log(1.0 - pc)).mean(axis=1)
    return (lambda_dice * dice + lambda_bce * bce).sum()
