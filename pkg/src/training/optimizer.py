"""
Normalized-gradient SGD with momentum and multi-batch accumulation.

Per iteration:
- g = mean of the B per-batch gradients, summed in batch order
- g~ = g / max(||g||, eps_norm), ||.|| the L2 norm over all parameters
- v <- mu * v + g~
- theta <- theta - lr * v

With normalize_after_momentum the order flips: v <- mu * v + g, then the
update uses v / max(||v||, eps_norm).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.engine.tensor import Tape, Tensor, backward
from src.errors import NonFiniteError


VELOCITY_PREFIX = "opt/velocity/"
ITERATION_KEY = "opt/iteration"


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    lr: float = Field(default=0.05, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    eps_norm: float = Field(default=1e-12, gt=0)
    batches_per_iteration: int = Field(default=2, ge=1)
    lr_decay_every: int = Field(default=1000, ge=1)
    lr_decay_factor: float = Field(default=0.5, gt=0, le=1)
    normalize_after_momentum: bool = False


@dataclass
class OptimizerState:
    """Velocity buffers mirroring the parameters, plus the iteration counter."""
    config: OptimizerConfig
    velocity: dict[str, np.ndarray]
    iteration: int = 0

    @property
    def learning_rate(self) -> float:
        return self.learning_rate_at(self.iteration)

    @property
    def momentum_coef(self) -> float:
        return self.config.momentum

    @property
    def batches_per_iteration(self) -> int:
        return self.config.batches_per_iteration

    def learning_rate_at(self, iteration: int) -> float:
        """Step decay: lr * factor^(iteration // every)."""
        cfg = self.config
        return cfg.lr * cfg.lr_decay_factor ** (iteration // cfg.lr_decay_every)


@dataclass
class AccumulatedGradient:
    gradients: dict[str, np.ndarray]
    losses: list[dict[str, float]] = field(default_factory=list)

    def mean_losses(self) -> dict[str, float]:
        if not self.losses:
            return {}
        keys = self.losses[0].keys()
        return {key: float(np.mean([entry[key] for entry in self.losses])) for key in keys}


@dataclass
class StepResult:
    grad_norm: float
    learning_rate: float
    update_norm: float


def _parameters(model_or_params: Any) -> Mapping[str, Tensor]:
    if hasattr(model_or_params, "parameters"):
        return model_or_params.parameters()
    return model_or_params


def init_state(model_or_params: Any, config: Optional[OptimizerConfig] = None) -> OptimizerState:
    config = config or OptimizerConfig()
    params = _parameters(model_or_params)
    return OptimizerState(
        config=config,
        velocity={name: np.zeros_like(p.data, dtype=np.float64) for name, p in params.items()},
    )


def accumulate(
    model_or_params: Any,
    batches: Sequence[Any],
    loss_fn: Callable[[Any], Any],
) -> AccumulatedGradient:
    """
    Mean gradient of the loss over several batches.

    Args:
        model_or_params: Model (or name -> Tensor mapping) whose gradients are collected
        batches: The B batches of this iteration, reduced in this order
        loss_fn: batch -> scalar Tensor, or an object with `.total` and `.values()`
            (a LossBreakdown); evaluated while a tape is recording

    Returns:
        AccumulatedGradient with float64 gradients per parameter name

    Raises:
        NonFiniteError: If any loss or gradient is NaN or infinite
    """
    if not batches:
        raise ValueError("accumulate needs at least one batch")
    params = _parameters(model_or_params)
    sums = {name: np.zeros(p.shape, dtype=np.float64) for name, p in params.items()}
    losses: list[dict[str, float]] = []

    for b, batch in enumerate(batches):
        for p in params.values():
            p.zero_grad()
        with Tape() as tape:
            result = loss_fn(batch)
        loss = result.total if hasattr(result, "total") else result
        values = result.values() if hasattr(result, "values") else {"total": loss.item()}
        if not all(np.isfinite(v) for v in values.values()):
            raise NonFiniteError(f"Non-finite loss in batch {b}: {values}")
        backward(loss, tape)
        for name, p in params.items():
            if p.grad is None:
                continue
            if not np.isfinite(p.grad).all():
                raise NonFiniteError(f"Non-finite gradient for '{name}' in batch {b}")
            sums[name] += p.grad
        losses.append(values)

    count = len(batches)
    gradients = {name: total / count for name, total in sums.items()}
    return AccumulatedGradient(gradients=gradients, losses=losses)


def global_norm(gradients: Mapping[str, np.ndarray]) -> float:
    """L2 norm of the concatenation of all gradient buffers."""
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in gradients.values())))


def normalize(gradients: Mapping[str, np.ndarray], eps_norm: float) -> dict[str, np.ndarray]:
    divisor = max(global_norm(gradients), eps_norm)
    return {name: g / divisor for name, g in gradients.items()}


def step(
    state: OptimizerState,
    model_or_params: Any,
    gradients: Union[AccumulatedGradient, Mapping[str, np.ndarray]],
) -> StepResult:
    """
    Apply one normalized momentum update in place.

    Raises:
        NonFiniteError: If the gradient is not finite
    """
    grads = gradients.gradients if isinstance(gradients, AccumulatedGradient) else gradients
    params = _parameters(model_or_params)
    missing = set(params) - set(grads)
    if missing:
        raise KeyError(f"No gradient for parameters: {sorted(missing)[:5]}")
    for name in params:
        if not np.isfinite(grads[name]).all():
            raise NonFiniteError(f"Non-finite gradient for '{name}'")

    cfg = state.config
    lr = state.learning_rate_at(state.iteration)
    grad_norm = global_norm({name: grads[name] for name in params})

    if cfg.normalize_after_momentum:
        for name in params:
            state.velocity[name] = cfg.momentum * state.velocity[name] + grads[name]
        direction = normalize({name: state.velocity[name] for name in params}, cfg.eps_norm)
    else:
        divisor = max(grad_norm, cfg.eps_norm)
        for name in params:
            state.velocity[name] = cfg.momentum * state.velocity[name] + grads[name] / divisor
        direction = {name: state.velocity[name] for name in params}

    for name, p in params.items():
        p.assign(p.data - lr * direction[name])

    state.iteration += 1
    return StepResult(
        grad_norm=grad_norm,
        learning_rate=lr,
        update_norm=lr * global_norm(direction),
    )


def state_to_tensors(state: OptimizerState) -> dict[str, np.ndarray]:
    """Optimizer state under the checkpoint's opt/ namespace."""
    tensors = {f"{VELOCITY_PREFIX}{name}": v for name, v in state.velocity.items()}
    tensors[ITERATION_KEY] = np.array([state.iteration], dtype=np.float64)
    return tensors


def state_from_tensors(
    tensors: Mapping[str, np.ndarray],
    config: OptimizerConfig,
    model_or_params: Any,
) -> OptimizerState:
    """Restore velocities; parameters without a stored buffer start at zero."""
    state = init_state(model_or_params, config)
    for name in state.velocity:
        key = f"{VELOCITY_PREFIX}{name}"
        if key in tensors:
            state.velocity[name] = np.array(tensors[key], dtype=np.float64).reshape(
                state.velocity[name].shape
            )
    if ITERATION_KEY in tensors:
        state.iteration = int(np.asarray(tensors[ITERATION_KEY]).reshape(-1)[0])
    return state
