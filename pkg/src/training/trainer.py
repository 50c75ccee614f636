"""
Training driver: builds the model, sampler and optimizer for one run and
invokes the iteration graph once per iteration.

Standard mode trains segmentation only (a = 1, no weak slices).
Mixed mode trains the joint model on full, negative and weak slices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field

from src.graphs.training_graph import create_training_graph
from src.network.config import ModelConfig
from src.network.model import Model, build_model
from src.state.training_state import EventSink, TrainingContext, create_initial_state
from src.training.losses import LossConfig
from src.training.optimizer import OptimizerConfig, init_state
from src.training.sampling import BatchComposition, BatchSampler, SliceRecord, index_dataset


TrainMode = Literal["standard", "mixed"]


class TrainConfig(BaseModel):
    """Loop length and checkpoint cadence."""

    model_config = ConfigDict(frozen=True)

    iterations: int = Field(default=200, ge=1)
    checkpoint_every: int = Field(default=100, ge=1)
    keep_checkpoints: int = Field(default=3, ge=1)


@dataclass
class TrainingResult:
    model: Model
    iterations: int
    history: list[dict[str, float]] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    access_log: dict[str, int] = field(default_factory=dict)
    output_dir: Optional[Path] = None

    @property
    def loss_log_path(self) -> Optional[Path]:
        return None if self.output_dir is None else self.output_dir / "loss_log.csv"


def loss_config_for_mode(config: LossConfig, mode: TrainMode) -> LossConfig:
    """Standard training ignores the classification loss entirely."""
    if mode == "standard":
        return config.model_copy(update={"a": 1.0})
    return config


class Trainer:
    """
    Runs the iteration graph for a fixed number of iterations.

    Usage:
        trainer = Trainer(context, on_event=print)
        result = trainer.run()
    """

    def __init__(self, context: TrainingContext, on_event: Optional[EventSink] = None):
        self.context = context
        self.on_event = on_event
        self.graph = create_training_graph()

    def run(self) -> TrainingResult:
        """
        Raises:
            The library error that aborted an iteration (NonFiniteError,
            SamplingError, CheckpointError, ...)
        """
        ctx = self.context
        ctx.output_dir.mkdir(parents=True, exist_ok=True)
        if ctx.loss_log_path.exists():
            ctx.loss_log_path.unlink()

        last_checkpoint: Optional[Path] = None
        for iteration in range(1, ctx.total_iterations + 1):
            result = self.graph.invoke(create_initial_state(ctx, iteration))
            if self.on_event is not None:
                for evt in result.get("events", []):
                    self.on_event(evt)
            if result.get("error"):
                failure = result.get("failure")
                if isinstance(failure, BaseException):
                    raise failure
                raise RuntimeError(result["error"])
            if result.get("checkpoint_path"):
                last_checkpoint = Path(result["checkpoint_path"])

        return TrainingResult(
            model=ctx.model,
            iterations=ctx.total_iterations,
            history=list(ctx.history),
            checkpoint_path=last_checkpoint,
            access_log=dict(ctx.sampler.access_log),
            output_dir=ctx.output_dir,
        )


def train_model(
    records: Sequence[SliceRecord],
    store,
    *,
    model_config: ModelConfig,
    loss_config: LossConfig,
    composition: BatchComposition,
    optimizer_config: OptimizerConfig,
    train_config: TrainConfig,
    mode: TrainMode,
    sampler_seed: int,
    init_seed: int,
    output_dir: Path | str,
    on_event: Optional[EventSink] = None,
) -> TrainingResult:
    """
    Train one model on a set of manifest records.

    Args:
        records: Training slices (already re-labelled for the fold)
        store: Slice store the sampler reads from
        mode: "standard" (segmentation only) or "mixed"
        sampler_seed / init_seed: Seeds for batch sampling and parameter init
        output_dir: Receives loss_log.csv and checkpoints/

    Raises:
        SamplingError: If a pool required by the composition is empty
        NonFiniteError: If a loss or gradient becomes non-finite
    """
    num_classes = model_config.num_classes
    index = index_dataset(records)
    sampler = BatchSampler(
        index,
        composition,
        sampler_seed,
        store=store,
        num_classes=num_classes,
        target_region=model_config.target_region,
        mode=mode,
        dtype=model_config.dtype,
    )
    model = build_model(model_config, init_seed)
    context = TrainingContext(
        model=model,
        sampler=sampler,
        optimizer=init_state(model, optimizer_config),
        loss_config=loss_config_for_mode(loss_config, mode),
        output_dir=Path(output_dir),
        total_iterations=train_config.iterations,
        checkpoint_every=train_config.checkpoint_every,
        keep_checkpoints=train_config.keep_checkpoints,
    )
    return Trainer(context, on_event=on_event).run()
