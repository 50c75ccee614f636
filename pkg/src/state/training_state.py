"""
Training-loop state schema for the LangGraph iteration graph.

One graph invocation runs one optimizer iteration:
- Minimal typed state
- Reducer for the append-only trace log
- Live objects (model, sampler, optimizer) travel in `context`
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Any, Callable, Optional

from typing_extensions import TypedDict

from src.network.model import Model
from src.training.losses import LossConfig
from src.training.optimizer import OptimizerState
from src.training.sampling import BatchSampler


LOSS_LOG_HEADER = "iteration,loss_s,loss_c,total\n"


def add_events(existing: list[dict[str, Any]] | None, new: list[dict[str, Any]] | None) -> list[dict[str, Any]]:
    """
    Reducer for trace/event logs.

    LangGraph uses typing.Annotated reducers to merge state updates across nodes.
    """
    return (existing or []) + (new or [])


@dataclass
class TrainingContext:
    """Everything an iteration needs that is not plain data."""
    model: Model
    sampler: BatchSampler
    optimizer: OptimizerState
    loss_config: LossConfig
    output_dir: Path
    total_iterations: int
    checkpoint_every: int = 100
    keep_checkpoints: int = 3
    checkpoint_dir: Optional[Path] = None
    history: list[dict[str, float]] = field(default_factory=list)

    @property
    def loss_log_path(self) -> Path:
        return self.output_dir / "loss_log.csv"

    @property
    def checkpoints_path(self) -> Path:
        return self.checkpoint_dir or self.output_dir / "checkpoints"


class TrainingState(TypedDict, total=False):
    """
    State of one training iteration.

    Fields:
    - context: Live training objects (shared across iterations)
    - iteration: 1-based iteration being run
    - batches: The B batches sampled for this iteration
    - gradients: Accumulated mean gradient
    - losses: Mean losses over the B batches
    - step: Optimizer step summary (grad norm, learning rate)
    - checkpoint_path: Written checkpoint, if any
    - events: Trace log (add_events reducer)
    - error / failure: Message and exception when the iteration aborts
    """

    context: TrainingContext
    iteration: int
    batches: list[Any]
    gradients: Any
    losses: dict[str, float]
    step: dict[str, float]
    checkpoint_path: Optional[str]

    # Trace / observability (append-only event log)
    events: Annotated[list[dict[str, Any]], add_events]

    # Error handling
    error: Optional[str]
    failure: Optional[BaseException]


def create_initial_state(context: TrainingContext, iteration: int) -> TrainingState:
    """
    Fresh state for one iteration.

    Args:
        context: Shared training objects
        iteration: 1-based iteration number

    Returns:
        Initial TrainingState
    """
    return {
        "context": context,
        "iteration": iteration,
        "batches": [],
        "gradients": None,
        "losses": {},
        "step": {},
        "checkpoint_path": None,
        "events": [],
        "error": None,
        "failure": None,
    }


EventSink = Callable[[dict[str, Any]], None]
