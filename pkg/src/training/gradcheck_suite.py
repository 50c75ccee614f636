"""
Finite-difference checks for every primitive op and the composite training loss.

Each primitive is wrapped as f(x) = sum(op(x) * R) with a fixed random
projection R, so every output coordinate contributes a distinct weight.
Inputs to kinked ops (relu, max-pool) are kept well away from their kinks.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from src.engine import ops
from src.engine.gradcheck import GradCheckReport, grad_check
from src.engine.ops import ConvSpec, RunningStats
from src.engine.tensor import Tensor
from src.network.config import ModelConfig
from src.network.model import build_model
from src.training.losses import LossConfig, compute_losses
from src.training.sampling import Batch, BatchComposition


def _away_from_zero(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Values with pairwise gaps of 0.01, shuffled (no pooling ties)."""
    size = int(np.prod(shape))
    return (rng.permutation(size) * 0.01 - size * 0.005).reshape(shape)


def _projected(op: Callable[..., Tensor], out_shape: tuple[int, ...], rng) -> Callable[..., Tensor]:
    projection = rng.normal(size=out_shape)
    return lambda *xs: ops.weighted_sum(op(*xs), projection)


def _leaf(values: np.ndarray, name: str) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def primitive_cases(seed: int = 0) -> list[tuple[str, Callable[..., Tensor], list[Tensor]]]:
    """(label, scalar function, inputs) for every differentiable primitive."""
    rng = np.random.default_rng(seed)
    cases = []

    def add_case(label, op, inputs, out_shape):
        cases.append((label, _projected(op, out_shape, rng), inputs))

    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    add_case("add", ops.add, [_leaf(a, "a"), _leaf(b, "b")], (3, 4))
    add_case("mul", ops.mul, [_leaf(a, "a"), _leaf(b, "b")], (3, 4))
    add_case("scale", lambda x: ops.scale(x, -2.5), [_leaf(a, "x")], (3, 4))
    cases.append(("sum_all", ops.sum_all, [_leaf(a, "x")]))
    add_case("reshape", lambda x: ops.reshape(x, (4, 3)), [_leaf(a, "x")], (4, 3))
    add_case("relu", ops.relu, [_leaf(_away_from_zero(rng, (3, 4)), "x")], (3, 4))
    add_case("softmax", lambda x: ops.softmax(x, axis=1), [_leaf(a, "x")], (3, 4))
    add_case("log_softmax", lambda x: ops.log_softmax(x, axis=0), [_leaf(a, "x")], (3, 4))
    add_case(
        "concat",
        lambda x, y: ops.concat(x, y, axis=1),
        [_leaf(a, "a"), _leaf(rng.normal(size=(3, 2)), "b")],
        (3, 6),
    )
    add_case("slice_axis", lambda x: ops.slice_axis(x, 1, 1, 3), [_leaf(a, "x")], (3, 2))
    add_case(
        "center_crop2d",
        lambda x: ops.center_crop2d(x, 3, 2),
        [_leaf(rng.normal(size=(1, 2, 5, 4)), "x")],
        (1, 2, 3, 2),
    )
    add_case(
        "upsample2d",
        lambda x: ops.upsample2d(x, 2),
        [_leaf(rng.normal(size=(1, 2, 3, 3)), "x")],
        (1, 2, 6, 6),
    )
    index = rng.integers(0, 4, size=(3,))
    add_case("pick", lambda x: ops.pick(x, index, axis=1), [_leaf(a, "x")], (3,))
    weights = rng.uniform(size=(3, 4))
    cases.append(("weighted_sum", lambda x: ops.weighted_sum(x, weights), [_leaf(a, "x")]))
    targets = rng.integers(0, 4, size=(3,))
    cases.append(
        ("cross_entropy", lambda x: ops.cross_entropy_from_logits(x, targets), [_leaf(a, "logits")])
    )
    add_case(
        "fully_connected",
        ops.fully_connected,
        [_leaf(a, "x"), _leaf(rng.normal(size=(4, 5)), "W"), _leaf(rng.normal(size=(5,)), "b")],
        (3, 5),
    )

    x = rng.normal(size=(2, 2, 6, 6))
    same = ConvSpec(in_channels=2, out_channels=3, kernel_h=3, kernel_w=3, padding="same")
    add_case(
        "conv2d_same",
        lambda x_, w_, b_: ops.conv2d(x_, w_, b_, same),
        [_leaf(x, "x"), _leaf(rng.normal(size=(3, 2, 3, 3)), "W"), _leaf(rng.normal(size=(3,)), "b")],
        (2, 3, 6, 6),
    )
    strided = ConvSpec(
        in_channels=2, out_channels=2, kernel_h=2, kernel_w=3, stride_h=2, stride_w=1, padding="valid"
    )
    add_case(
        "conv2d_valid_strided",
        lambda x_, w_: ops.conv2d(x_, w_, None, strided),
        [_leaf(x, "x"), _leaf(rng.normal(size=(2, 2, 2, 3)), "W")],
        (2, 2, 3, 4),
    )
    add_case(
        "mean_pool2d",
        lambda x_: ops.mean_pool2d(x_, (2, 2), (2, 2)),
        [_leaf(rng.normal(size=(2, 2, 5, 5)), "x")],
        (2, 2, 2, 2),
    )
    add_case(
        "max_pool2d",
        lambda x_: ops.max_pool2d(x_, (2, 2), (2, 2)),
        [_leaf(_distinct(rng, (2, 2, 4, 4)), "x")],
        (2, 2, 2, 2),
    )
    bn_x = rng.normal(size=(4, 2, 3, 3))
    gamma, beta = rng.uniform(0.5, 1.5, size=(2,)), rng.normal(size=(2,))
    add_case(
        "batch_norm_train",
        lambda x_, g_, b_: ops.batch_norm(x_, g_, b_, "train", RunningStats.initial(2)),
        [_leaf(bn_x, "x"), _leaf(gamma, "gamma"), _leaf(beta, "beta")],
        (4, 2, 3, 3),
    )
    infer_stats = RunningStats(mean=rng.normal(size=(2,)), var=rng.uniform(0.5, 2.0, size=(2,)))
    add_case(
        "batch_norm_infer",
        lambda x_, g_, b_: ops.batch_norm(x_, g_, b_, "infer", infer_stats),
        [_leaf(bn_x, "x"), _leaf(gamma, "gamma"), _leaf(beta, "beta")],
        (4, 2, 3, 3),
    )
    return cases


def check_primitives(
    seed: int = 0, epsilon: float = 1e-6, tolerance: float = 1e-4
) -> list[GradCheckReport]:
    return [
        grad_check(f, inputs, epsilon, tolerance, label=label)
        for label, f, inputs in primitive_cases(seed)
    ]


def synthetic_batch(config: ModelConfig, comp: BatchComposition, seed: int) -> Batch:
    """Random images, masks and labels shaped for a model configuration."""
    rng = np.random.default_rng(seed)
    n = comp.size
    h, w = config.input_size
    images = rng.normal(size=(n, config.input_channels, h, w))
    masks = rng.integers(0, config.num_classes, size=(comp.supervised, h, w))
    masks[:, 0, 0] = 0
    masks[:, -1, -1] = config.num_classes - 1
    labels = rng.integers(0, 2, size=(n, config.num_branches))
    return Batch(
        images=Tensor(images),
        masks=masks,
        global_labels=labels,
        composition=comp,
        records=[],
    )


def check_composite(
    model_config: Optional[ModelConfig] = None,
    loss_config: Optional[LossConfig] = None,
    *,
    seed: int = 0,
    epsilon: float = 1e-6,
    tolerance: float = 1e-4,
    max_checks_per_input: Optional[int] = 12,
) -> GradCheckReport:
    """Total loss of a tiny model on a synthetic batch, w.r.t. every parameter."""
    model_config = model_config or ModelConfig.gradcheck()
    model_config = model_config.model_copy(update={"dtype": "float64"})
    loss_config = loss_config or LossConfig.for_classes(model_config.num_classes, a=0.5)
    model = build_model(model_config, seed)
    batch = synthetic_batch(model_config, BatchComposition(k=2, m=1, n=1), seed)
    params = model.parameters()
    names = list(params)

    def f(*_params: Tensor) -> Tensor:
        output = model.forward(batch.images, mode="train")
        return compute_losses(output, batch, loss_config).total

    return grad_check(
        f,
        list(params.values()),
        epsilon,
        tolerance,
        label="composite_total_loss",
        names=names,
        max_checks_per_input=max_checks_per_input,
        seed=seed,
    )


def run_gradcheck_suite(
    seed: int = 0,
    epsilon: float = 1e-6,
    tolerance: float = 1e-4,
    max_checks_per_input: Optional[int] = 12,
) -> list[GradCheckReport]:
    """One report per primitive plus the composite loss report (last)."""
    reports = check_primitives(seed, epsilon, tolerance)
    reports.append(
        check_composite(
            seed=seed,
            epsilon=epsilon,
            tolerance=tolerance,
            max_checks_per_input=max_checks_per_input,
        )
    )
    return reports
