"""Reverse-mode differentiation graph over dense float64 arrays.

Nodes are created eagerly: an operation computes its value at construction
time and records a closure that scatters the upstream gradient to its
inputs. ``backward`` topologically sorts the subgraph that influences the
loss and accumulates gradients, which makes shared subexpressions (diamond
graphs) come out right by construction.
"""

from __future__ import annotations

import itertools

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes violate the operation's shape rules."""


class NonScalarLoss(ValueError):
    """backward() was asked to differentiate a non-scalar node."""


_node_ids = itertools.count()


class Node:
    """One value in the differentiation graph.

    Attributes:
        id: graph-unique handle.
        op: operation tag (for debugging).
        inputs: parent nodes.
        value: float64 ndarray, computed at construction.
        grad: float64 ndarray of the same shape, populated by backward().
        requires_grad: whether any ancestor is a parameter.
    """

    __slots__ = ("id", "op", "inputs", "value", "grad", "requires_grad", "_backward")

    def __init__(self, op, value, inputs=(), requires_grad=False, backward=None):
        self.id = next(_node_ids)
        self.op = op
        self.value = value
        self.inputs = tuple(inputs)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


def _asarray(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def constant(value) -> Node:
    """Leaf node that never receives a gradient."""
    return Node("constant", _asarray(value))


def parameter(value) -> Node:
    """Leaf node that accumulates a gradient during backward()."""
    return Node("parameter", _asarray(value), requires_grad=True)


def make_op(op, value, inputs, backward) -> Node:
    requires = any(n.requires_grad for n in inputs)
    return Node(op, value, inputs, requires, backward if requires else None)


def forward(outputs) -> list:
    """Values of the requested nodes.

    Evaluation is eager, so this simply collects the already-computed
    values; it exists to make read-out explicit at call sites.
    """
    return [node.value for node in outputs]


def topological_order(root: Node) -> list:
    """Parents-before-children order of the grad-requiring subgraph."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in visited:
            continue
        visited.add(node.id)
        stack.append((node, True))
        for parent in node.inputs:
            if parent.requires_grad and parent.id not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Populate ``grad`` on every grad-requiring ancestor of a scalar loss."""
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    for node in order:
        # np.zeros (calloc) beats zeros_like, which touches memory twice.
        node.grad = np.zeros(node.value.shape)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
