"""
Unit tests for finite-difference gradient checking.
"""

import numpy as np
import pytest

from src.engine import ops
from src.engine.gradcheck import grad_check, relative_error
from src.engine.tensor import Tensor
from src.training.gradcheck_suite import check_composite, check_primitives, primitive_cases


class TestRelativeError:
    """Test the relative error measure."""

    def test_symmetric_relative_error(self):
        """Test |a - n| / max(|a|, |n|)."""
        assert relative_error(2.0, 1.0) == pytest.approx(0.5)
        assert relative_error(1.0, 2.0) == pytest.approx(0.5)

    def test_both_zero(self):
        """Test two zero derivatives agree."""
        assert relative_error(0.0, 0.0) == 0.0


class TestGradCheck:
    """Test grad_check on simple functions."""

    def test_polynomial_passes(self):
        """Test sum(x^3) matches its central difference."""
        x = Tensor(np.array([0.5, -1.5, 2.0]), requires_grad=True, name="x")
        report = grad_check(lambda t: ops.sum_all(ops.mul(ops.mul(t, t), t)), [x], label="cube")
        assert report.passed
        assert report.inputs[0].checked == 3

    def test_restores_inputs(self):
        """Test the checked input keeps its values."""
        values = np.array([[0.3, -0.7], [1.1, 2.0]])
        x = Tensor(values.copy(), requires_grad=True)
        grad_check(lambda t: ops.sum_all(ops.relu(t)), [x])
        np.testing.assert_array_equal(x.data, values)

    def test_coordinate_subsampling(self):
        """Test max_checks_per_input limits the checked coordinates."""
        x = Tensor(np.linspace(-1, 1, 50), requires_grad=True)
        report = grad_check(ops.sum_all, [x], max_checks_per_input=7)
        assert report.inputs[0].checked == 7

    def test_report_dict(self):
        """Test the serialised report carries the verdict."""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True, name="x")
        payload = grad_check(ops.sum_all, [x], label="sum").to_dict()
        assert payload["label"] == "sum"
        assert payload["passed"] is True


class TestGradCheckSuite:
    """Test the primitive and composite checks."""

    def test_every_primitive_is_covered(self):
        """Test the suite has one case per differentiable primitive."""
        labels = {label for label, _, _ in primitive_cases()}
        for expected in ("relu", "conv2d_same", "conv2d_valid_strided", "max_pool2d",
                         "mean_pool2d", "batch_norm_train", "cross_entropy", "fully_connected"):
            assert expected in labels

    def test_all_primitives_pass(self):
        """Test analytic gradients of every primitive match finite differences."""
        reports = check_primitives(seed=0)
        failed = [(r.label, r.max_rel_error) for r in reports if not r.passed]
        assert failed == []

    def test_broken_backward_is_detected(self, mocker):
        """Test a corrupted ReLU backward makes the relu check fail."""
        mocker.patch.object(ops.ReLU, "backward", lambda self, ctx, grad: (grad * 2.0,))
        reports = {r.label: r for r in check_primitives(seed=0)}
        assert not reports["relu"].passed
        assert reports["add"].passed

    def test_composite_loss_passes(self):
        """Test the total loss of a tiny model w.r.t. its parameters."""
        report = check_composite(seed=0, max_checks_per_input=3)
        assert report.passed, report.to_dict()
        assert len(report.inputs) > 20
