"""
Finite-difference verification of autodiff gradients.

Central differences (f(x+eps) - f(x-eps)) / 2eps are compared element-wise
with the tape gradient; rel_error = |a - n| / max(|a|, |n|, 1e-8).
Failures are reported, never raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from src.engine.tensor import Tape, Tensor, backward, no_grad


REL_ERROR_FLOOR = 1e-8


@dataclass
class InputCheck:
    """Result for one checked input tensor."""
    name: str
    checked: int
    max_rel_error: float
    worst_index: Optional[tuple[int, ...]] = None


@dataclass
class GradCheckReport:
    """Aggregate finite-difference comparison."""
    label: str
    tolerance: float
    inputs: list[InputCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.inputs), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "inputs": [
                {
                    "name": c.name,
                    "checked": c.checked,
                    "max_rel_error": c.max_rel_error,
                    "worst_index": list(c.worst_index) if c.worst_index is not None else None,
                }
                for c in self.inputs
            ],
        }


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERROR_FLOOR)


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    epsilon: float = 1e-6,
    tolerance: float = 1e-4,
    *,
    label: str = "grad_check",
    names: Optional[Sequence[str]] = None,
    max_checks_per_input: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare tape gradients of a scalar function with central differences.

    Inputs are promoted to float64 in place. Only inputs with
    requires_grad=True are checked.

    Args:
        f: Deterministic function of `inputs` returning a scalar Tensor
        inputs: Tensors passed positionally to f
        epsilon: Finite-difference step (> 0)
        tolerance: Pass threshold on the max relative error
        label: Name used in the report
        names: Display names for inputs (defaults to tensor names / positions)
        max_checks_per_input: Check a seeded random subset of coordinates
        seed: Seed for coordinate subsampling

    Returns:
        GradCheckReport
    """
    for t in inputs:
        if t.dtype != np.float64:
            t.promote_(np.float64)
        t.zero_grad()

    with Tape() as tape:
        loss = f(*inputs)
    backward(loss, tape)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(label=label, tolerance=tolerance)

    for pos, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        name = names[pos] if names else (t.name or f"input{pos}")
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)

        coords = np.arange(t.size)
        if max_checks_per_input is not None and t.size > max_checks_per_input:
            coords = np.sort(rng.choice(t.size, size=max_checks_per_input, replace=False))

        worst, worst_index = 0.0, None
        buffer = t.data
        for flat in coords:
            index = np.unravel_index(flat, t.shape)
            original = buffer[index]
            with no_grad():
                buffer[index] = original + epsilon
                plus = f(*inputs).item()
                buffer[index] = original - epsilon
                minus = f(*inputs).item()
            buffer[index] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            err = relative_error(float(analytic[index]), numeric)
            if not np.isfinite(err) or err > worst:
                worst, worst_index = err, tuple(int(i) for i in index)
                if not np.isfinite(err):
                    break

        report.inputs.append(
            InputCheck(name=name, checked=len(coords), max_rel_error=worst, worst_index=worst_index)
        )

    return report
