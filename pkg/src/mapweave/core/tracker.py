"""Per-frame detection, tracking and memory orchestration.

One call to :func:`step_frame` runs, in order:

1. warp the history memory by the previous ego motion and prune it
2. refine each track query with history-map guidance
3. generate semantic-aware detection queries and their masks
4. decode detections and tracks into polylines, classes and scores
5. apply the lifecycle thresholds (tau_t for tracks, tau_d for detections)
6. update memory for survivors, initialize it for births, drop the dead
7. re-frame trajectory histories and push the decoded polylines
8. predict each track's next polyline and fuse it into its next query
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from mapweave.config import Config
from mapweave.core.decoder import DecodedMap, decode_map
from mapweave.core.geometry import BevWindow, Se2Pose, chamfer
from mapweave.core.hmg import position_embedding_grid, refine_query, sample_guided_features, valid_mask
from mapweave.core.losses import FrameSupervision, LossBreakdown, Match, total_loss
from mapweave.core.matching import cost_matrix, hungarian_match, point_cost
from mapweave.core.memory import HistoryMapMemory
from mapweave.core.params import ParameterStore
from mapweave.core.saqg import QuerySet, predict_masks, run_generator
from mapweave.core.stfg import TrajectoryHistory, fuse_future_guidance, predict_future
from mapweave.core.tensor import Tensor, concat, stack
from mapweave.errors import ContractError, ShapeError
from mapweave.models.frame import DecodedInstance, FrameObservation, FrameOutput
from mapweave.models.map_instance import MapClass
from mapweave.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class TrackQuery:
    """Query a live track carries into the next frame."""

    embedding: Tensor  # [C]
    map_class: MapClass
    gt_instance_id: Optional[int] = None  # Training only: GT matched at birth
    born_frame: int = 0


@dataclass
class TrackState:
    """Propagation state of one sequence."""

    memory: HistoryMapMemory
    histories: TrajectoryHistory
    queries: dict[int, TrackQuery] = field(default_factory=dict)
    next_track_id: int = 0
    pending_motion: Optional[Se2Pose] = None  # Ego motion from the last processed frame
    frame_index: Optional[int] = None

    @classmethod
    def empty(cls, config: Config) -> "TrackState":
        window = BevWindow.from_config(config.grid)
        return cls(HistoryMapMemory(window), TrajectoryHistory(config.model.history_frames))

    @property
    def live_ids(self) -> set[int]:
        return set(self.queries)

    def check_consistent(self) -> None:
        """Raise if queries, memory and histories disagree on the live ids.

        Raises:
            ContractError: On any mismatch
        """
        ids = self.live_ids
        if ids != self.memory.track_ids or ids != self.histories.track_ids:
            raise ContractError(
                f"inconsistent track state: queries={sorted(ids)} "
                f"memory={sorted(self.memory.track_ids)} "
                f"histories={sorted(self.histories.track_ids)}"
            )
        if ids and max(ids) >= self.next_track_id:
            raise ContractError("track id counter is behind live ids")


@dataclass
class StepResult:
    """Outcome of one frame."""

    output: FrameOutput
    state: TrackState
    losses: Optional[LossBreakdown] = None
    future_errors: list[tuple[float, float]] = field(default_factory=list)  # (predicted, zero-offset) Chamfer


@lru_cache(maxsize=8)
def _position_grid(window: BevWindow, channels: int) -> np.ndarray:
    grid = position_embedding_grid(window, channels)
    grid.flags.writeable = False
    return grid


def _match_frame(
    state: TrackState,
    track_ids: list[int],
    decoded: DecodedMap,
    num_detections: int,
    obs: FrameObservation,
    config: Config,
) -> tuple[list[Match], dict[int, int]]:
    """Supervision targets: tracks keep their birth GT, detections are matched to the rest."""
    window = BevWindow.from_config(config.grid)
    points = decoded.points.data
    matches: list[Match] = []
    claimed: set[int] = set()
    for k, tid in enumerate(track_ids):
        gid = state.queries[tid].gt_instance_id
        gt = obs.instance(gid) if gid is not None else None
        if gt is None or gid in claimed:
            continue
        _, ordering = point_cost(
            points[num_detections + k], gt.polyline.points, gt.map_class.closed, window.half_extent
        )
        matches.append(Match(num_detections + k, gt, ordering, obs.gt_masks[gid].grid))
        claimed.add(gid)

    free = [gt for gt in obs.gt_instances if gt.instance_id not in claimed]
    probs = decoded.class_probabilities().data[:num_detections]
    costs, orderings = cost_matrix(
        probs, points[:num_detections], free, window, config.loss.w_cls, config.loss.w_pts
    )
    assignment: dict[int, int] = {}
    for i, j in hungarian_match(costs):
        gt = free[j]
        matches.append(Match(i, gt, orderings[i, j], obs.gt_masks[gt.instance_id].grid))
        assignment[i] = gt.instance_id
    return matches, assignment


def step_frame(
    state: TrackState,
    obs: FrameObservation,
    config: Config,
    params: ParameterStore,
    train: bool = False,
    next_obs: Optional[FrameObservation] = None,
) -> StepResult:
    """Process one frame and advance ``state`` in place.

    Args:
        state: Sequence state (mutated)
        obs: Current observation
        config: Pipeline configuration
        params: Parameters
        train: Also compute supervision and the frame loss
        next_obs: Next observation; supplies future-prediction targets

    Returns:
        StepResult with the retained instances and, in training, the loss

    Raises:
        ContractError: If the state is inconsistent (checked before mutation)
    """
    state.check_consistent()
    m = config.model
    window = state.memory.window
    if obs.bev_features.window != window:
        raise ShapeError("observation window differs from the state window")
    shape = window.shape
    pe_grid = _position_grid(window, m.channels)
    features = Tensor(obs.bev_features.flat())
    position = Tensor(pe_grid.reshape(-1, m.channels))

    # (1) align memory with this frame
    if state.pending_motion is not None:
        state.memory.warp(state.pending_motion)
    state.memory.prune(state.queries)

    # (2) history-map guidance
    track_ids = sorted(state.queries)
    track_embeddings = []
    for tid in track_ids:
        tq = state.queries[tid]
        q = tq.embedding
        entry = state.memory.get(tid)
        if m.use_hmg and entry is not None:
            valid = valid_mask(entry.mask.grid, m.theta)
            sampled = sample_guided_features(
                valid, obs.bev_features.features, pe_grid, entry.mask.grid, m.k_max
            )
            q = refine_query(q, tq.map_class.index, sampled, params)
        track_embeddings.append(q)

    # (3) detection queries
    initial = QuerySet(params["saqg.queries"])
    if m.use_saqg:
        detections, det_masks = run_generator(
            initial, features, position, params, m.saqg_layers, m.tau_l, shape
        )
    else:
        detections, det_masks = initial, predict_masks(initial, features, params, shape)
    n_det = len(detections)

    queries, masks = detections.embeddings, det_masks.masks
    if track_ids:
        tracks = QuerySet(stack(track_embeddings), list(track_ids))
        queries = concat([queries, tracks.embeddings])
        masks = concat([masks, predict_masks(tracks, features, params, shape).masks])

    # (4) decode
    decoded = decode_map(queries, features, position, params, window, m.decoder_blocks, m.num_points)
    scores = decoded.scores.data
    classes = np.argmax(decoded.class_logits.data, axis=1)

    matches: list[Match] = []
    assignment: dict[int, int] = {}
    if train:
        matches, assignment = _match_frame(state, track_ids, decoded, n_det, obs, config)

    # (5) lifecycle
    live: list[tuple[int, int]] = []  # (query index, track id)
    killed = 0
    for k, tid in enumerate(track_ids):
        if scores[n_det + k] >= m.tau_t:
            live.append((n_det + k, tid))
        else:
            killed += 1
    propagated = len(live)
    births: list[tuple[int, int]] = []
    for i in range(n_det):
        if scores[i] >= m.tau_d:
            births.append((i, state.next_track_id))
            state.next_track_id += 1
    live_ids = {tid for _, tid in live} | {tid for _, tid in births}

    # (6) memory
    mask_values = masks.data
    for qi, tid in live:
        state.memory.update_entry(tid, mask_values[qi], float(scores[qi]), m.beta, obs.frame_index)
    state.memory.prune(live_ids)
    for qi, tid in births:
        state.memory.init_entry(
            tid, mask_values[qi], float(scores[qi]), MapClass.from_index(classes[qi]), obs.frame_index
        )

    # (7) trajectory histories
    state.histories.prune(live_ids)
    if state.pending_motion is not None:
        state.histories.reframe(state.pending_motion)
    retained = sorted(live + births, key=lambda pair: pair[1])
    for qi, tid in retained:
        state.histories.push(tid, obs.frame_index, decoded.points.data[qi])

    # (8) short-term future guidance
    next_queries: dict[int, TrackQuery] = {}
    futures: list[tuple[Tensor, np.ndarray]] = []
    future_errors: list[tuple[float, float]] = []
    born = dict(births)
    for qi, tid in retained:
        previous = state.queries.get(tid)
        gid = assignment.get(qi) if qi in born else (previous.gt_instance_id if previous else None)
        q_decoded = Tensor(decoded.embeddings.data[qi])
        current = state.histories.latest(tid)
        gt_next = next_obs.instance(gid) if next_obs is not None and gid is not None else None

        if m.use_stfg:
            _, p_hat = predict_future(state.histories.stacked(tid), window, params)
            q_next = fuse_future_guidance(q_decoded, p_hat.data, window, params)
            if gt_next is not None:
                futures.append((p_hat, gt_next.polyline.points))
        else:
            p_hat = Tensor(current)
            q_next = q_decoded
        if gt_next is not None:
            future_errors.append(
                (chamfer(p_hat.data, gt_next.polyline.points), chamfer(current, gt_next.polyline.points))
            )
        next_queries[tid] = TrackQuery(
            q_next,
            MapClass.from_index(classes[qi]),
            gid,
            born_frame=previous.born_frame if previous else obs.frame_index,
        )

    state.queries = next_queries
    state.pending_motion = obs.ego_motion_to_next
    state.frame_index = obs.frame_index

    output = FrameOutput(
        frame_index=obs.frame_index,
        instances=[
            DecodedInstance(
                track_id=tid,
                map_class=MapClass.from_index(classes[qi]),
                score=float(scores[qi]),
                points=decoded.points.data[qi].copy(),
                mask=mask_values[qi].copy(),
            )
            for qi, tid in retained
        ],
        born=len(births),
        killed=killed,
        propagated=propagated,
    )
    logger.debug(
        "Frame processed",
        frame_index=obs.frame_index,
        born=output.born,
        killed=killed,
        propagated=propagated,
    )

    losses = None
    if train:
        bundle = FrameSupervision(decoded, masks, window, matches, futures)
        losses = total_loss(bundle, config.loss)
    return StepResult(output, state, losses, future_errors)
