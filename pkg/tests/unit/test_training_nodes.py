"""
Unit tests for the training-iteration nodes and routers.
"""

import pytest

from src.errors import NonFiniteError, SamplingError
from src.network.model import build_model
from src.nodes.training_nodes import (
    accumulate_gradients_node,
    apply_update_node,
    checkpoint_node,
    record_losses_node,
    route_after_accumulate,
    route_on_error,
    sample_batches_node,
)
from src.state.training_state import (
    LOSS_LOG_HEADER,
    TrainingContext,
    add_events,
    create_initial_state,
)
from src.training.losses import LossConfig
from src.training.optimizer import OptimizerConfig, init_state
from src.training.sampling import BatchSampler, index_dataset


@pytest.fixture
def context(tmp_path, small_fold, memory_dataset, small_model_config, small_composition):
    _, store = memory_dataset
    model = build_model(small_model_config, seed=0)
    sampler = BatchSampler(index_dataset(small_fold.training("mixed")), small_composition, seed=0,
                           store=store)
    return TrainingContext(
        model=model,
        sampler=sampler,
        optimizer=init_state(model, OptimizerConfig(batches_per_iteration=2)),
        loss_config=LossConfig(),
        output_dir=tmp_path / "run",
        total_iterations=3,
        checkpoint_every=2,
    )


class TestReducer:
    """Test the event reducer."""

    def test_add_events_appends(self):
        """Test events from several nodes concatenate in order."""
        assert add_events([{"kind": "a"}], [{"kind": "b"}]) == [{"kind": "a"}, {"kind": "b"}]
        assert add_events(None, None) == []


class TestRouters:
    """Test conditional edges."""

    def test_routes(self):
        """Test an error ends the iteration."""
        assert route_on_error({"error": None}) == "continue"
        assert route_on_error({"error": "boom"}) == "error"
        assert route_after_accumulate({"error": None}) == "update"
        assert route_after_accumulate({"error": "boom"}) == "error"


class TestNodes:
    """Test each node against a small live context."""

    def test_one_iteration_by_hand(self, context):
        """Test sample -> accumulate -> update -> record."""
        state = create_initial_state(context, 1)
        update = sample_batches_node(state)
        assert len(update["batches"]) == 2
        assert update["events"][0]["kind"] == "sample"
        state.update(update)

        update = accumulate_gradients_node(state)
        assert set(update["losses"]) == {"loss_s", "loss_c", "total"}
        state.update({k: v for k, v in update.items() if k != "events"})

        update = apply_update_node(state)
        assert update["step"]["grad_norm"] > 0
        assert context.optimizer.iteration == 1
        state.update({k: v for k, v in update.items() if k != "events"})

        record_losses_node(state)
        lines = context.loss_log_path.read_text().splitlines()
        assert lines[0] + "\n" == LOSS_LOG_HEADER
        assert lines[1].startswith("1,")
        assert context.history[0]["iteration"] == 1

    def test_sampling_error_stored(self, context, mocker):
        """Test library errors become state instead of escaping the node."""
        mocker.patch.object(context.sampler, "sample", side_effect=SamplingError("weak pool empty"))
        update = sample_batches_node(create_initial_state(context, 1))
        assert "weak pool empty" in update["error"]
        assert isinstance(update["failure"], SamplingError)
        assert update["events"][0]["kind"] == "error"

    def test_non_finite_gradient_stored(self, context, mocker):
        """Test a non-finite loss aborts before the update."""
        mocker.patch("src.nodes.training_nodes.accumulate", side_effect=NonFiniteError("nan loss"))
        state = create_initial_state(context, 1)
        update = accumulate_gradients_node(state)
        assert isinstance(update["failure"], NonFiniteError)
        assert route_after_accumulate(update) == "error"

    def test_checkpoint_cadence(self, context):
        """Test checkpoints at multiples of checkpoint_every and at the last iteration."""
        assert checkpoint_node(create_initial_state(context, 1)) == {}
        saved = checkpoint_node(create_initial_state(context, 2))
        assert saved["checkpoint_path"].endswith("ckpt_000002.msup")
        last = checkpoint_node(create_initial_state(context, 3))
        assert last["checkpoint_path"].endswith("ckpt_000003.msup")
