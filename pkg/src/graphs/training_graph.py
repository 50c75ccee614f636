"""
LangGraph graph definition for one training iteration.

- Explicit routing (no implicit cycles); the trainer loops over iterations
- No checkpointer: model checkpoints are written by the checkpoint node
"""

from langgraph.graph import END, StateGraph

from src.nodes.training_nodes import (
    accumulate_gradients_node,
    apply_update_node,
    checkpoint_node,
    record_losses_node,
    route_after_accumulate,
    route_on_error,
    sample_batches_node,
)
from src.state.training_state import TrainingState


def create_training_graph():
    """
    Create the iteration graph.

    Flow:
    1. sample_batches: B batches from the sampler
    2. accumulate_gradients: mean gradient of the total loss
    3. apply_update: normalized momentum step
    4. record_losses: append to loss_log.csv
    5. checkpoint: periodic save + keep-last-N pruning

    Any node error ends the iteration with `error` set.

    Returns:
        Compiled graph
    """
    builder = StateGraph(TrainingState)

    builder.add_node("sample_batches", sample_batches_node)
    builder.add_node("accumulate_gradients", accumulate_gradients_node)
    builder.add_node("apply_update", apply_update_node)
    builder.add_node("record_losses", record_losses_node)
    builder.add_node("checkpoint", checkpoint_node)

    builder.set_entry_point("sample_batches")

    builder.add_conditional_edges(
        "sample_batches",
        route_on_error,
        {"continue": "accumulate_gradients", "error": END},
    )
    builder.add_conditional_edges(
        "accumulate_gradients",
        route_after_accumulate,
        {"update": "apply_update", "error": END},
    )
    builder.add_conditional_edges(
        "apply_update",
        route_on_error,
        {"continue": "record_losses", "error": END},
    )
    builder.add_edge("record_losses", "checkpoint")
    builder.add_edge("checkpoint", END)

    return builder.compile()
