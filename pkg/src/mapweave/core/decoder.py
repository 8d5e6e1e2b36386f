"""Map decoder: queries to polylines, class logits and scores."""

from dataclasses import dataclass

from mapweave.config import ModelConfig
from mapweave.core.geometry import BevWindow
from mapweave.core.layers import linear, masked_attention, mlp
from mapweave.core.params import ParameterStore
from mapweave.core.tensor import Tensor, reshape, sigmoid, softmax, tanh
from mapweave.models.map_instance import NUM_CLASSES


@dataclass
class DecodedMap:
    """Head outputs for N queries."""

    embeddings: Tensor  # [N, C] after the decoder blocks
    points: Tensor  # [N, N_p, 2] meters
    class_logits: Tensor  # [N, 3]
    scores: Tensor  # [N] in (0, 1)

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    def class_probabilities(self) -> Tensor:
        return softmax(self.class_logits)


def register_parameters(store: ParameterStore, cfg: ModelConfig) -> None:
    C = cfg.channels
    for block in range(cfg.decoder_blocks):
        prefix = f"decoder.block{block}"
        for proj in ("wq", "wk", "wv", "wo"):
            store.create(f"{prefix}.{proj}", (C, C))
        store.create(f"{prefix}.ffn.0.weight", (C, cfg.ffn_hidden))
        store.create(f"{prefix}.ffn.0.bias", (cfg.ffn_hidden,), init="zeros")
        store.create(f"{prefix}.ffn.1.weight", (cfg.ffn_hidden, C))
        store.create(f"{prefix}.ffn.1.bias", (C,), init="zeros")
    store.create("decoder.points.weight", (C, cfg.num_points * 2))
    store.create("decoder.points.bias", (cfg.num_points * 2,), init="zeros")
    store.create("decoder.classes.weight", (C, NUM_CLASSES))
    store.create("decoder.classes.bias", (NUM_CLASSES,), init="zeros")
    store.create("decoder.score.weight", (C, 1))
    store.create("decoder.score.bias", (1,), init="zeros")


def decode_map(
    queries: Tensor,
    features: Tensor,
    position: Tensor,
    params: ParameterStore,
    window: BevWindow,
    num_blocks: int,
    num_points: int,
) -> DecodedMap:
    """Run the decoder blocks and the three prediction heads.

    Each block is cross-attention over every BEV cell followed by a
    feed-forward layer, both residual. Points come out of a tanh so they
    stay inside the window.
    """
    h = queries
    for block in range(num_blocks):
        prefix = f"decoder.block{block}"
        Q = linear(h, params[f"{prefix}.wq"])
        K = linear(features + position, params[f"{prefix}.wk"])
        V = linear(features, params[f"{prefix}.wv"])
        h = h + linear(masked_attention(Q, K, V), params[f"{prefix}.wo"])
        ffn = [
            (params[f"{prefix}.ffn.0.weight"], params[f"{prefix}.ffn.0.bias"]),
            (params[f"{prefix}.ffn.1.weight"], params[f"{prefix}.ffn.1.bias"]),
        ]
        h = h + mlp(h, ffn)

    n = h.shape[0]
    raw = linear(h, params["decoder.points.weight"], params["decoder.points.bias"])
    points = reshape(tanh(raw), (n, num_points, 2)) * window.half_extent + window.center
    logits = linear(h, params["decoder.classes.weight"], params["decoder.classes.bias"])
    scores = reshape(sigmoid(linear(h, params["decoder.score.weight"], params["decoder.score.bias"])), (n,))
    return DecodedMap(h, points, logits, scores)
