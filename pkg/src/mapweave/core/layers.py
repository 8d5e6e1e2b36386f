"""Differentiable building blocks: linear maps, masked attention, MLPs."""

import math
from typing import Callable, Optional, Sequence, Union

import numpy as np

from mapweave.core.tensor import Tensor, as_tensor, matmul, relu, reshape, softmax
from mapweave.errors import ConfigurationError, ContractError, ShapeError

Activation = Callable[[Tensor], Tensor]


def linear(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Compute ``x @ W + b`` over the last axis of ``x``.

    Args:
        x: Input of shape [*, in]
        W: Weights of shape [in, out]
        b: Optional bias of shape [out]

    Returns:
        Tensor of shape [*, out]

    Raises:
        ShapeError: If the inner dimensions disagree
    """
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.ndim == 0 or x.shape[-1] != W.shape[0]:
        raise ShapeError("linear input does not match weights", x.shape, W.shape)
    lead = x.shape[:-1]
    flat = x if x.ndim == 2 else reshape(x, (-1, x.shape[-1]))
    y = matmul(flat, W)
    if b is not None:
        if as_tensor(b).shape != (W.shape[1],):
            raise ShapeError("bias does not match weights", as_tensor(b).shape, W.shape)
        y = y + b
    if x.ndim != 2:
        y = reshape(y, (*lead, W.shape[1]))
    return y


def additive_mask_to_allowed(mask: Union[np.ndarray, Tensor]) -> np.ndarray:
    """Translate an additive {0, -inf} attention mask into a boolean mask.

    Raises:
        ContractError: If an entry is neither 0 nor -inf
    """
    values = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    allowed = values == 0.0
    if not np.all(allowed | np.isneginf(values)):
        raise ContractError("attention mask entries must be exactly 0 or -inf")
    return allowed


def masked_attention(
    Q: Tensor,
    K: Tensor,
    V: Tensor,
    mask: Union[np.ndarray, Tensor, None] = None,
) -> Tensor:
    """Single-head scaled dot-product attention with an additive mask.

    Logits are ``Q K^T / sqrt(d)`` plus ``mask``; a row whose mask is
    entirely -inf attends over every key.

    Args:
        Q: Queries [n, d]
        K: Keys [m, d]
        V: Values [m, d_v]
        mask: Optional additive mask [n, m] of 0 / -inf

    Returns:
        Tensor [n, d_v]
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if Q.ndim != 2 or K.ndim != 2 or Q.shape[1] != K.shape[1]:
        raise ShapeError("query/key widths disagree", Q.shape, K.shape)
    if V.ndim != 2 or V.shape[0] != K.shape[0]:
        raise ShapeError("keys and values disagree", K.shape, V.shape)

    allowed = None
    if mask is not None:
        allowed = additive_mask_to_allowed(mask)
        if allowed.shape != (Q.shape[0], K.shape[0]):
            raise ShapeError("attention mask shape", allowed.shape, (Q.shape[0], K.shape[0]))

    logits = matmul(Q, K.T) * (1.0 / math.sqrt(Q.shape[1]))
    return matmul(softmax(logits, allowed), V)


def mlp(
    x: Tensor,
    layers: Sequence[tuple[Tensor, Optional[Tensor]]],
    activation: Activation = relu,
) -> Tensor:
    """Alternate linear layers and ``activation``; no activation after the last.

    Raises:
        ConfigurationError: If ``layers`` is empty
    """
    if not layers:
        raise ConfigurationError("mlp needs at least one layer")
    h = x
    for i, (W, b) in enumerate(layers):
        h = linear(h, W, b)
        if i < len(layers) - 1:
            h = activation(h)
    return h


def sinusoidal_features(coords: np.ndarray, channels: int) -> np.ndarray:
    """Fixed sine/cosine encoding of 2-D coordinates normalized to [-1, 1].

    Channels are split into ``channels // 4`` frequency bands, each band
    contributing (sin x, cos x, sin y, cos y) at angular frequency
    ``pi * 2**k``; leftover channels are zero.

    Args:
        coords: Array [..., 2] of normalized (x, y)
        channels: Output width

    Returns:
        Array [..., channels]
    """
    coords = np.asarray(coords, dtype=np.float64)
    bands = channels // 4
    out = np.zeros((*coords.shape[:-1], channels))
    for k in range(bands):
        freq = math.pi * (2.0**k)
        ax = coords[..., 0] * freq
        ay = coords[..., 1] * freq
        out[..., 4 * k] = np.sin(ax)
        out[..., 4 * k + 1] = np.cos(ax)
        out[..., 4 * k + 2] = np.sin(ay)
        out[..., 4 * k + 3] = np.cos(ay)
    return out
