"""
Dense tensor type and the recording tape for reverse-mode differentiation.

- Tensor wraps a numpy buffer (row-major) plus an optional gradient buffer
- Tape records every differentiable op executed while it is active
- backward() walks the tape in exact reverse recording order
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional, Sequence

import numpy as np

from src.errors import TensorError


DEFAULT_DTYPE = np.float64


class Tensor:
    """
    Dense n-dimensional real array with an optional gradient buffer.

    The shape is fixed at construction. Values may only be replaced through
    assign(), which enforces the same shape (parameter updates, checkpoint loads).
    """

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        *,
        name: Optional[str] = None,
        dtype: Any = None,
    ) -> None:
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self._data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    def assign(self, values: Any) -> None:
        """Replace the values in place; the shape must not change."""
        arr = np.asarray(values, dtype=self._data.dtype)
        if arr.shape != self._data.shape:
            raise TensorError(
                f"Cannot assign values of shape {arr.shape} to tensor "
                f"'{self.name}' of shape {self._data.shape}"
            )
        self._data = arr.copy()

    def promote_(self, dtype: Any) -> None:
        """Change the buffer precision in place (gradient checks run in float64)."""
        self._data = self._data.astype(dtype)
        if self.grad is not None:
            self.grad = self.grad.astype(dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self._data.shape:
            raise TensorError(
                f"Gradient shape {grad.shape} does not match tensor shape {self._data.shape}"
            )
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def item(self) -> float:
        if self.size != 1:
            raise TensorError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


@dataclass
class GraphNode:
    """One recorded forward operation."""
    op: Any
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: dict[str, Any] = field(default_factory=dict)


class Tape:
    """
    Ordered record of differentiable operations.

    Usage:
        with Tape() as tape:
            loss = f(x)
        backward(loss, tape)
    """

    def __init__(self) -> None:
        self.nodes: list[GraphNode] = []

    def record(self, node: GraphNode) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        _TAPE_STACK.pop()


# Innermost entry wins; None means recording is suspended.
_TAPE_STACK: list[Optional[Tape]] = []


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend tape recording (inference, finite-difference evaluations)."""
    _TAPE_STACK.append(None)
    try:
        yield
    finally:
        _TAPE_STACK.pop()


def backward(loss: Tensor, tape: Tape) -> None:
    """
    Populate grad buffers of every requires_grad tensor reachable from loss.

    Gradients of a tensor used several times are summed over all uses. Leaf
    gradients accumulate into existing buffers; call zero_grad() between
    independent evaluations.

    Args:
        loss: Scalar tensor produced while `tape` was active
        tape: Tape holding the loss's full history

    Raises:
        TensorError: If loss is not a scalar
    """
    if loss.size != 1:
        raise TensorError(f"backward() needs a scalar loss, got shape {loss.shape}")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    seen: dict[int, Tensor] = {id(loss): loss}
    produced: set[int] = set()

    for node in reversed(tape.nodes):
        out_id = id(node.output)
        grad_out = pending.pop(out_id, None)
        if grad_out is None:
            continue
        produced.add(out_id)
        node.output.grad = grad_out

        input_grads = node.op.backward(node.ctx, grad_out)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            seen[key] = tensor
            pending[key] = pending[key] + grad if key in pending else grad

    for key, grad in pending.items():
        tensor = seen[key]
        if key in produced:
            continue
        tensor.accumulate_grad(np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape))


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for tensor in tensors:
        tensor.zero_grad()
