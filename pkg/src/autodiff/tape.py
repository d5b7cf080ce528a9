"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Nodes are appended in evaluation order, so the node list is already a
topological order and ``backward`` is a single reverse sweep. Values are
float64 arrays of any shape; elementwise operations broadcast numpy-style and
their gradients are summed back to each operand's shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.params.store import ParamLayout, ParamVector
from src.utils.errors import ContractViolation, NumericError


@dataclass
class _Node:
    kind: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    extra: Dict[str, Any] = field(default_factory=dict)


class Var:
    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __add__(self, other: Any) -> "Var":
        return self.tape.add(self, other)

    def __radd__(self, other: Any) -> "Var":
        return self.tape.add(other, self)

    def __sub__(self, other: Any) -> "Var":
        return self.tape.sub(self, other)

    def __rsub__(self, other: Any) -> "Var":
        return self.tape.sub(other, self)

    def __mul__(self, other: Any) -> "Var":
        return self.tape.mul(self, other)

    def __rmul__(self, other: Any) -> "Var":
        return self.tape.mul(other, self)

    def __neg__(self) -> "Var":
        return self.tape.mul(self, -1.0)

    def __matmul__(self, other: Any) -> "Var":
        return self.tape.matmul(self, other)

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    def __init__(self) -> None:
        self.nodes: List[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, kind: str, inputs: Sequence[Var], value: np.ndarray, **extra: Any) -> Var:
        self.nodes.append(_Node(kind, tuple(var.id for var in inputs), value, extra))
        return Var(self, len(self.nodes) - 1)

    def _lift(self, operand: Any) -> Var:
        if isinstance(operand, Var):
            if operand.tape is not self:
                raise ContractViolation("Operand belongs to a different tape.")
            if not 0 <= operand.id < len(self.nodes):
                raise ContractViolation(f"Invalid node id {operand.id}.")
            return operand
        return self.const(operand)

    # --- leaves -----------------------------------------------------------

    def leaf(self, value: Any) -> Var:
        return self._push("leaf", (), np.array(value, dtype=np.float64))

    def const(self, value: Any) -> Var:
        return self._push("const", (), np.array(value, dtype=np.float64))

    # --- binary ops -------------------------------------------------------

    def _broadcast(self, kind: str, a: Var, b: Var, fn: Callable) -> Var:
        try:
            value = fn(a.value, b.value)
        except ValueError as exc:
            raise ContractViolation(
                f"Shape mismatch in {kind}: {a.shape} vs {b.shape}."
            ) from exc
        return self._push(kind, (a, b), value)

    def add(self, a: Any, b: Any) -> Var:
        return self._broadcast("add", self._lift(a), self._lift(b), np.add)

    def sub(self, a: Any, b: Any) -> Var:
        return self._broadcast("sub", self._lift(a), self._lift(b), np.subtract)

    def mul(self, a: Any, b: Any) -> Var:
        return self._broadcast("mul", self._lift(a), self._lift(b), np.multiply)

    def matmul(self, a: Any, b: Any) -> Var:
        a, b = self._lift(a), self._lift(b)
        if a.value.ndim not in (1, 2) or b.value.ndim not in (1, 2):
            raise ContractViolation("matmul supports only vectors and matrices.")
        if a.shape[-1] != b.shape[0]:
            raise ContractViolation(f"Shape mismatch in matmul: {a.shape} @ {b.shape}.")
        return self._push("matmul", (a, b), np.matmul(a.value, b.value))

    # --- unary ops --------------------------------------------------------

    def tanh(self, a: Any) -> Var:
        a = self._lift(a)
        return self._push("tanh", (a,), np.tanh(a.value))

    def sigmoid(self, a: Any) -> Var:
        a = self._lift(a)
        return self._push("sigmoid", (a,), expit(a.value))

    def softplus(self, a: Any) -> Var:
        a = self._lift(a)
        return self._push("softplus", (a,), np.logaddexp(0.0, a.value))

    def exp(self, a: Any) -> Var:
        a = self._lift(a)
        with np.errstate(over="raise"):
            try:
                value = np.exp(a.value)
            except FloatingPointError as exc:
                raise NumericError("exp overflow.") from exc
        return self._push("exp", (a,), value)

    def log(self, a: Any) -> Var:
        a = self._lift(a)
        if np.any(a.value <= 0):
            raise NumericError("log of a non-positive value.")
        return self._push("log", (a,), np.log(a.value))

    def square(self, a: Any) -> Var:
        a = self._lift(a)
        return self._push("square", (a,), a.value * a.value)

    def sum(self, a: Any, axis: Optional[int] = None) -> Var:
        a = self._lift(a)
        return self._push("sum", (a,), np.asarray(a.value.sum(axis=axis)), axis=axis)

    def mean(self, a: Any) -> Var:
        a = self._lift(a)
        return self.mul(self.sum(a), 1.0 / max(a.value.size, 1))

    def concat(self, parts: Sequence[Any], axis: int = -1) -> Var:
        parts = [self._lift(part) for part in parts]
        if not parts:
            raise ContractViolation("concat needs at least one operand.")
        try:
            value = np.concatenate([part.value for part in parts], axis=axis)
        except ValueError as exc:
            raise ContractViolation(f"Shape mismatch in concat: {exc}") from exc
        sizes = [part.value.shape[axis] for part in parts]
        return self._push("concat", parts, value, axis=axis, sizes=sizes)

    # --- reverse sweep ----------------------------------------------------

    def backward(self, loss: Var) -> Dict[int, np.ndarray]:
        """Gradients of a scalar ``loss`` w.r.t. every leaf node."""
        loss = self._lift(loss)
        if loss.value.size != 1:
            raise ContractViolation(f"Loss must be scalar, got shape {loss.shape}.")

        adjoints: Dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        for node_id in range(loss.id, -1, -1):
            grad = adjoints.get(node_id)
            if grad is None:
                continue
            node = self.nodes[node_id]
            if not node.inputs:
                continue
            for input_id, input_grad in zip(node.inputs, self._input_grads(node, grad)):
                if input_id in adjoints:
                    adjoints[input_id] = adjoints[input_id] + input_grad
                else:
                    adjoints[input_id] = input_grad

        return {
            node_id: adjoints.get(node_id, np.zeros_like(node.value))
            for node_id, node in enumerate(self.nodes)
            if node.kind == "leaf"
        }

    def _input_grads(self, node: _Node, g: np.ndarray) -> List[np.ndarray]:
        values = [self.nodes[i].value for i in node.inputs]
        kind = node.kind
        if kind == "add":
            return [_unbroadcast(g, values[0].shape), _unbroadcast(g, values[1].shape)]
        if kind == "sub":
            return [_unbroadcast(g, values[0].shape), _unbroadcast(-g, values[1].shape)]
        if kind == "mul":
            a, b = values
            return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]
        if kind == "matmul":
            a, b = values
            if a.ndim == 2 and b.ndim == 2:
                return [g @ b.T, a.T @ g]
            if a.ndim == 2:
                return [np.outer(g, b), a.T @ g]
            if b.ndim == 2:
                return [b @ g, np.outer(a, g)]
            return [g * b, g * a]
        if kind == "tanh":
            return [g * (1.0 - node.value * node.value)]
        if kind == "sigmoid":
            return [g * node.value * (1.0 - node.value)]
        if kind == "softplus":
            return [g * expit(values[0])]
        if kind == "exp":
            return [g * node.value]
        if kind == "log":
            return [g / values[0]]
        if kind == "square":
            return [2.0 * values[0] * g]
        if kind == "sum":
            axis = node.extra["axis"]
            shape = values[0].shape
            if axis is None:
                return [np.broadcast_to(g, shape).copy()]
            return [np.broadcast_to(np.expand_dims(g, axis), shape).copy()]
        if kind == "concat":
            axis = node.extra["axis"]
            splits = np.cumsum(node.extra["sizes"])[:-1]
            return list(np.split(g, splits, axis=axis))
        raise ContractViolation(f"Unknown node kind '{kind}'.")


def bind_params(tape: Tape, params: ParamVector) -> Dict[str, Var]:
    """Register every parameter group as a leaf shaped like its tensor."""
    return {name: tape.leaf(tensor) for name, tensor in params.tensors().items()}


def collect_grad(
    grads: Dict[int, np.ndarray], bound: Dict[str, Var], layout: ParamLayout
) -> np.ndarray:
    """Flatten per-group leaf gradients back into the layout's order."""
    return np.concatenate(
        [np.asarray(grads[bound[name].id]).reshape(-1) for name in layout.names]
    )
