"""Minimal reverse-mode autodiff over float64 numpy arrays.

A Tensor wraps an ndarray plus the closure that maps its upstream gradient
to its parents' gradients. Operators in cellseg.nnkit.ops build the graph;
Tensor.backward() runs one reverse topological sweep. Everything is float64:
at desk scale, finite-difference verifiability matters more than speed.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """Node in the autodiff tape."""

    __slots__ = ("data", "grad", "parents", "vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        # vjp(upstream) -> tuple of parent gradients (entries may be None)
        self.vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def backward(self, seed: np.ndarray | float | None = None) -> None:
        """Accumulate gradients into every reachable node's .grad."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))

        if seed is None:
            seed = np.ones_like(self.data)
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node.vjp is None or node.grad is None:
                continue
            grads = node.vjp(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
