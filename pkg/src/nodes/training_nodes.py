"""
LangGraph node implementations for one training iteration.

- Single responsibility per node
- Library errors are caught and stored in state; the trainer re-raises them
- Every node emits trace events for --watch
"""

from __future__ import annotations

from typing import Any

from src.errors import MixSupError
from src.network.checkpoint import checkpoint_name, prune_checkpoints, save_checkpoint
from src.state.training_state import LOSS_LOG_HEADER, TrainingState
from src.training.losses import compute_losses
from src.training.optimizer import accumulate, state_to_tensors, step


def _evt(kind: str, **fields: Any) -> dict[str, Any]:
    """Create a structured trace event for observability/watch mode."""
    evt: dict[str, Any] = {"kind": kind}
    evt.update(fields)
    return evt


def _fail(state: TrainingState, node: str, exc: Exception) -> dict[str, Any]:
    return {
        "error": f"{type(exc).__name__}: {exc}",
        "failure": exc,
        "events": [_evt("error", node=node, iteration=state["iteration"], error=str(exc))],
    }


def sample_batches_node(state: TrainingState) -> dict[str, Any]:
    """Draw B batches from the sampler's private stream."""
    ctx = state["context"]
    try:
        count = ctx.optimizer.batches_per_iteration
        batches = [ctx.sampler.sample() for _ in range(count)]
    except MixSupError as e:
        return _fail(state, "sample_batches", e)
    return {
        "batches": batches,
        "events": [
            _evt(
                "sample",
                iteration=state["iteration"],
                batches=len(batches),
                batch_size=batches[0].size,
                supervised=batches[0].num_supervised,
            )
        ],
    }


def accumulate_gradients_node(state: TrainingState) -> dict[str, Any]:
    """Mean gradient of the total loss over the sampled batches."""
    ctx = state["context"]
    model, config = ctx.model, ctx.loss_config

    def loss_fn(batch):
        output = model.forward(batch.images, mode="train")
        return compute_losses(output, batch, config)

    try:
        accumulated = accumulate(model, state["batches"], loss_fn)
    except MixSupError as e:
        return _fail(state, "accumulate_gradients", e)
    losses = accumulated.mean_losses()
    return {
        "gradients": accumulated,
        "losses": losses,
        "batches": [],
        "events": [_evt("accumulate", iteration=state["iteration"], **losses)],
    }


def apply_update_node(state: TrainingState) -> dict[str, Any]:
    """Normalized momentum step on the model parameters."""
    ctx = state["context"]
    try:
        result = step(ctx.optimizer, ctx.model, state["gradients"])
    except MixSupError as e:
        return _fail(state, "apply_update", e)
    summary = {"grad_norm": result.grad_norm, "lr": result.learning_rate}
    return {
        "gradients": None,
        "step": summary,
        "events": [_evt("update", iteration=state["iteration"], **summary)],
    }


def record_losses_node(state: TrainingState) -> dict[str, Any]:
    """Append the iteration's losses to loss_log.csv."""
    ctx = state["context"]
    losses = state["losses"]
    path = ctx.loss_log_path
    path.parent.mkdir(parents=True, exist_ok=True)
    if not path.exists():
        path.write_text(LOSS_LOG_HEADER, encoding="utf-8")
    line = "%d,%.10g,%.10g,%.10g\n" % (
        state["iteration"], losses["loss_s"], losses["loss_c"], losses["total"],
    )
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(line)
    ctx.history.append({"iteration": state["iteration"], **losses})
    return {"events": [_evt("loss", iteration=state["iteration"], **losses)]}


def checkpoint_node(state: TrainingState) -> dict[str, Any]:
    """Save every checkpoint_every iterations and after the last one; keep the newest few."""
    ctx = state["context"]
    iteration = state["iteration"]
    if iteration % ctx.checkpoint_every != 0 and iteration != ctx.total_iterations:
        return {}
    try:
        path = save_checkpoint(
            ctx.checkpoints_path / checkpoint_name(iteration),
            ctx.model,
            iteration=iteration,
            optimizer_tensors=state_to_tensors(ctx.optimizer),
        )
        removed = prune_checkpoints(ctx.checkpoints_path, ctx.keep_checkpoints)
    except (MixSupError, OSError) as e:
        return _fail(state, "checkpoint", e)
    return {
        "checkpoint_path": str(path),
        "events": [_evt("checkpoint", iteration=iteration, path=str(path), pruned=len(removed))],
    }


def route_after_accumulate(state: TrainingState) -> str:
    """Stop the iteration on an error, otherwise apply the update."""
    return "error" if state.get("error") else "update"


def route_on_error(state: TrainingState) -> str:
    return "error" if state.get("error") else "continue"
