"""Sequence-level orchestration: training, inference and log records."""

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from mapweave.config import Config
from mapweave.core import decoder, hmg, saqg, stfg
from mapweave.core.params import MomentumSGD, ParameterStore
from mapweave.core.tensor import backward, no_grad
from mapweave.core.tracker import TrackState, step_frame
from mapweave.core.world import Scenario, observe_frame
from mapweave.errors import NumericError
from mapweave.models.frame import FrameObservation, FrameOutput
from mapweave.models.records import InstanceRecord
from mapweave.utils.logger import get_logger

logger = get_logger(__name__)


def build_parameters(config: Config, seed: Optional[int] = None) -> ParameterStore:
    """Create every learnable parameter of the pipeline."""
    store = ParameterStore(config.training.seed if seed is None else seed)
    for module in (saqg, hmg, decoder, stfg):
        module.register_parameters(store, config.model)
    logger.debug("Parameters built", tensors=len(store), values=store.num_values())
    return store


@dataclass
class EpochStats:
    """Mean per-frame losses of one epoch."""

    epoch: int
    loss: float
    track: float
    seg: float
    pred: float
    frames: int


@dataclass
class FutureStats:
    """Mean next-frame Chamfer error of the predictor and of the zero-offset baseline."""

    predicted: float
    zero_offset: float
    count: int


class SequencePipeline:
    """Runs the per-frame tracker over whole scenarios."""

    def __init__(self, config: Config, params: ParameterStore):
        """Initialize the pipeline with configuration.

        Args:
            config: Pipeline configuration
            params: Learnable parameters (shared, read-only during inference)
        """
        self.config = config
        self.params = params

    @staticmethod
    def observations(scenario: Scenario) -> list[FrameObservation]:
        return [observe_frame(scenario, t) for t in range(scenario.num_frames)]

    def run_sequence(
        self,
        scenario: Scenario,
        on_frame: Optional[Callable[[int, TrackState], None]] = None,
    ) -> list[FrameOutput]:
        """Inference over every frame of ``scenario`` from an empty state.

        Args:
            scenario: Sequence to run
            on_frame: Optional hook called with (frame index, state) after each frame
        """
        start_time = time.time()
        state = TrackState.empty(self.config)
        outputs = []
        with no_grad():
            for t in range(scenario.num_frames):
                result = step_frame(state, observe_frame(scenario, t), self.config, self.params)
                outputs.append(result.output)
                if on_frame is not None:
                    on_frame(t, state)
        logger.info(
            "Sequence processed",
            scenario=scenario.scenario_id,
            frames=len(outputs),
            duration_s=round(time.time() - start_time, 3),
        )
        return outputs

    def train(self, scenarios: Sequence[Scenario], epochs: int) -> list[EpochStats]:
        """Single-stage training with seeded scenario shuffling.

        Each frame is one optimizer step: forward with supervision,
        backward on the frame loss, clipped momentum update.

        Raises:
            NumericError: If a frame loss or gradient is non-finite
        """
        opt = self.config.optimizer
        optimizer = MomentumSGD(self.params, opt.learning_rate, opt.momentum, opt.grad_clip)
        rng = np.random.default_rng(self.config.training.seed)
        observations = [self.observations(s) for s in scenarios]
        history: list[EpochStats] = []

        for epoch in range(epochs):
            sums = {"total": 0.0, "track": 0.0, "seg": 0.0, "pred": 0.0}
            frames = 0
            for si in rng.permutation(len(scenarios)):
                scenario, obs_list = scenarios[si], observations[si]
                state = TrackState.empty(self.config)
                for t, obs in enumerate(obs_list):
                    next_obs = obs_list[t + 1] if t + 1 < len(obs_list) else None
                    result = step_frame(state, obs, self.config, self.params, train=True, next_obs=next_obs)
                    values = result.losses.values()
                    diagnostic = {
                        "scenario": scenario.scenario_id,
                        "frame_index": t,
                        "epoch": epoch,
                        "losses": values,
                    }
                    if not all(math.isfinite(v) for v in values.values()):
                        raise NumericError(
                            f"non-finite loss in {scenario.scenario_id} frame {t}", diagnostic
                        )
                    self.params.zero_grad()
                    try:
                        backward(result.losses.total)
                    except NumericError as e:
                        raise NumericError(str(e), diagnostic) from e
                    optimizer.step()
                    for key in sums:
                        sums[key] += values[key]
                    frames += 1

            denom = max(frames, 1)
            stats = EpochStats(
                epoch=epoch,
                loss=sums["total"] / denom,
                track=sums["track"] / denom,
                seg=sums["seg"] / denom,
                pred=sums["pred"] / denom,
                frames=frames,
            )
            history.append(stats)
            logger.info(
                "Epoch complete",
                epoch=epoch,
                loss=round(stats.loss, 6),
                pred=round(stats.pred, 6),
                frames=frames,
            )
        return history

    def evaluate_futures(self, scenarios: Sequence[Scenario]) -> FutureStats:
        """Next-frame Chamfer error of tracked instances on ``scenarios``.

        Tracks are associated with ground truth exactly as in training; no
        parameters change.
        """
        predicted, baseline = [], []
        for scenario in scenarios:
            obs_list = self.observations(scenario)
            state = TrackState.empty(self.config)
            with no_grad():
                for t, obs in enumerate(obs_list):
                    next_obs = obs_list[t + 1] if t + 1 < len(obs_list) else None
                    result = step_frame(
                        state, obs, self.config, self.params, train=True, next_obs=next_obs
                    )
                    for pred_cd, zero_cd in result.future_errors:
                        predicted.append(pred_cd)
                        baseline.append(zero_cd)
        if not predicted:
            return FutureStats(0.0, 0.0, 0)
        return FutureStats(float(np.mean(predicted)), float(np.mean(baseline)), len(predicted))


def train(
    scenarios: Sequence[Scenario], config: Config, params: ParameterStore, epochs: Optional[int] = None
) -> list[EpochStats]:
    """Train ``params`` in place; returns per-epoch loss history."""
    epochs = config.training.epochs if epochs is None else epochs
    return SequencePipeline(config, params).train(scenarios, epochs)


def run_sequence(scenario: Scenario, config: Config, params: ParameterStore) -> list[FrameOutput]:
    return SequencePipeline(config, params).run_sequence(scenario)


def prediction_records(sequence_id: str, outputs: Sequence[FrameOutput]) -> list[InstanceRecord]:
    """Flatten frame outputs into prediction-log records."""
    return [
        InstanceRecord(
            sequence_id=sequence_id,
            frame_index=out.frame_index,
            track_id=inst.track_id,
            map_class=inst.map_class,
            score=inst.score,
            points=[tuple(p) for p in inst.points.tolist()],
        )
        for out in outputs
        for inst in out.instances
    ]


def ground_truth_records(scenario: Scenario) -> list[InstanceRecord]:
    """Ground-truth log records of every frame of ``scenario``."""
    records = []
    for t in range(scenario.num_frames):
        for inst in observe_frame(scenario, t).gt_instances:
            records.append(
                InstanceRecord(
                    sequence_id=scenario.scenario_id,
                    frame_index=t,
                    track_id=inst.instance_id,
                    map_class=inst.map_class,
                    score=1.0,
                    points=[tuple(p) for p in inst.polyline.points.tolist()],
                )
            )
    return records
