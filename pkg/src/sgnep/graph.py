"""Undirected weighted graph over which agents exchange dual variables.

Only the multiplier and auxiliary updates communicate; strategy updates are
local. The graph must be connected for the duals to reach consensus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class LaplacianView:
    """Weighted Laplacian L = D - W together with the degree vector."""

    matrix: np.ndarray
    degrees: np.ndarray


@dataclass(frozen=True)
class MultiplierGraph:
    """Symmetric nonnegative weight matrix with zero diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GraphError(f"weight matrix must be square, got {w.shape}")
        if np.any(w < 0):
            raise GraphError("negative edge weight")
        if np.any(np.diag(w) != 0):
            raise GraphError("self-loops are not allowed (diagonal must be zero)")
        if not np.array_equal(w, w.T):
            raise GraphError("weight matrix must be symmetric")
        object.__setattr__(self, "weights", w)

    @property
    def num_nodes(self) -> int:
        return self.weights.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        """Indices j with w_ij > 0."""
        return np.flatnonzero(self.weights[i] > 0)

    @staticmethod
    def complete(n: int, weight: float = 1.0) -> "MultiplierGraph":
        w = np.full((n, n), float(weight))
        np.fill_diagonal(w, 0.0)
        return MultiplierGraph(w)

    @staticmethod
    def ring(n: int, weight: float = 1.0) -> "MultiplierGraph":
        if n == 1:
            return MultiplierGraph(np.zeros((1, 1)))
        w = np.zeros((n, n))
        for i in range(n):
            j = (i + 1) % n
            w[i, j] = w[j, i] = weight
        # n == 2 collapses the two ring edges into one
        return MultiplierGraph(w)

    @staticmethod
    def star(n: int, weight: float = 1.0) -> "MultiplierGraph":
        w = np.zeros((n, n))
        w[0, 1:] = weight
        w[1:, 0] = weight
        return MultiplierGraph(w)


def laplacian(graph: MultiplierGraph) -> LaplacianView:
    """Weighted Laplacian L = diag(W 1) - W."""
    w = graph.weights
    deg = w.sum(axis=1)
    return LaplacianView(matrix=np.diag(deg) - w, degrees=deg)


def is_connected(graph: MultiplierGraph) -> bool:
    """Breadth-first search over positive-weight edges from node 0."""
    n = graph.num_nodes
    if n == 0:
        return False
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            for j in np.flatnonzero((graph.weights[i] > 0) & ~seen):
                seen[j] = True
                nxt.append(int(j))
        frontier = nxt
    return bool(seen.all())


def neighbor_disagreement(graph: MultiplierGraph, values: np.ndarray) -> np.ndarray:
    """Per-node weighted disagreement sum_j w_ij (v_i - v_j).

    `values` has one row per node, shape (N, m); the result is L @ values
    and its rows sum to zero.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[0] != graph.num_nodes:
        raise GraphError(
            f"values have {v.shape[0]} rows for a graph with {graph.num_nodes} nodes"
        )
    lap = laplacian(graph)
    return lap.matrix @ v
