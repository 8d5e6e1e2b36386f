"""Worker pool for concurrent sequence inference."""

import asyncio
from typing import Callable, Optional, Sequence

from mapweave.config import Config
from mapweave.core.params import ParameterStore
from mapweave.core.pipeline import SequencePipeline
from mapweave.core.tracker import TrackState
from mapweave.core.world import Scenario
from mapweave.models.frame import FrameOutput
from mapweave.utils.logger import get_logger

logger = get_logger(__name__)

# Builds the per-frame callback of one scenario
FrameHook = Callable[[Scenario], Callable[[int, TrackState], None]]


class Worker:
    """Individual worker running whole sequences."""

    def __init__(self, worker_id: int, pipeline: SequencePipeline, frame_hook: Optional[FrameHook] = None):
        """Initialize worker.

        Args:
            worker_id: Worker identifier
            pipeline: Shared pipeline (parameters are only read)
            frame_hook: Optional factory of per-frame callbacks
        """
        self.worker_id = worker_id
        self.pipeline = pipeline
        self.frame_hook = frame_hook
        self.current_scenario: Optional[str] = None
        self.processed = 0

    async def start(
        self,
        queue: "asyncio.Queue[tuple[int, Scenario]]",
        results: dict[int, list[FrameOutput]],
    ) -> None:
        """Drain ``queue``, storing each sequence's outputs under its position."""
        logger.debug("Worker started", worker_id=self.worker_id)
        loop = asyncio.get_running_loop()
        while True:
            try:
                position, scenario = queue.get_nowait()
            except asyncio.QueueEmpty:
                break
            self.current_scenario = scenario.scenario_id
            on_frame = self.frame_hook(scenario) if self.frame_hook else None
            try:
                # Each sequence gets its own TrackState inside run_sequence
                results[position] = await loop.run_in_executor(
                    None, self.pipeline.run_sequence, scenario, on_frame
                )
                self.processed += 1
            finally:
                self.current_scenario = None
                queue.task_done()
        logger.debug("Worker stopped", worker_id=self.worker_id, processed=self.processed)

    @property
    def is_busy(self) -> bool:
        """Check if worker is currently processing a sequence."""
        return self.current_scenario is not None


class SequenceWorkerPool:
    """Pool of workers running independent sequences concurrently."""

    def __init__(
        self,
        config: Config,
        params: ParameterStore,
        worker_count: Optional[int] = None,
        frame_hook: Optional[FrameHook] = None,
    ):
        """Initialize worker pool.

        Args:
            config: Pipeline configuration
            params: Trained parameters
            worker_count: Overrides ``processing.worker_count``
            frame_hook: Called once per scenario for its per-frame callback
        """
        self.config = config
        self.pipeline = SequencePipeline(config, params)
        self.worker_count = worker_count or config.processing.worker_count
        self.frame_hook = frame_hook
        self.workers: list[Worker] = []

    async def run(self, scenarios: Sequence[Scenario]) -> list[list[FrameOutput]]:
        """Run every scenario; results come back in input order."""
        queue: asyncio.Queue[tuple[int, Scenario]] = asyncio.Queue()
        for position, scenario in enumerate(scenarios):
            queue.put_nowait((position, scenario))

        results: dict[int, list[FrameOutput]] = {}
        count = max(1, min(self.worker_count, len(scenarios)))
        self.workers = [Worker(i, self.pipeline, self.frame_hook) for i in range(count)]
        logger.info("Starting worker pool", worker_count=count, scenarios=len(scenarios))
        await asyncio.gather(*(w.start(queue, results) for w in self.workers))
        logger.info("Worker pool finished", scenarios=len(results))
        return [results[i] for i in range(len(scenarios))]

    def get_active_workers_count(self) -> int:
        """Get number of busy workers."""
        return sum(1 for worker in self.workers if worker.is_busy)


def run_sequences_parallel(
    scenarios: Sequence[Scenario],
    config: Config,
    params: ParameterStore,
    worker_count: Optional[int] = None,
    frame_hook: Optional[FrameHook] = None,
) -> list[list[FrameOutput]]:
    """Synchronous wrapper around :meth:`SequenceWorkerPool.run`."""
    return asyncio.run(SequenceWorkerPool(config, params, worker_count, frame_hook).run(scenarios))
