"""Cell-oriented hypergraph over an n x d table.

One node per cell (node idx = i*d + j), one hyperedge per column (edge j for
column j) and per row (edge d + i for row i).  Every node belongs to exactly
its column edge and its row edge; membership is index arithmetic, so nothing
beyond the dimensions is stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class Hypergraph:
    n: int
    d: int

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ParameterError(f"hypergraph needs n,d >= 1, got {self.n}x{self.d}")

    @property
    def num_nodes(self) -> int:
        return self.n * self.d

    @property
    def num_edges(self) -> int:
        return self.n + self.d

    def node_index(self, i: int, j: int) -> int:
        self._check_cell(i, j)
        return i * self.d + j

    def node_cell(self, node: int) -> tuple[int, int]:
        self._check_node(node)
        return divmod(node, self.d)

    def incident_edges(self, node: int) -> tuple[int, int]:
        """(column edge, row edge) for a node."""
        i, j = self.node_cell(node)
        return j, self.d + i

    def members(self, edge: int) -> np.ndarray:
        """Node indices belonging to a hyperedge."""
        self._check_edge(edge)
        if edge < self.d:
            return np.arange(self.n, dtype=np.int64) * self.d + edge
        i = edge - self.d
        return np.arange(i * self.d, (i + 1) * self.d, dtype=np.int64)

    def edge_size(self, edge: int) -> int:
        self._check_edge(edge)
        return self.n if edge < self.d else self.d

    def is_column_edge(self, edge: int) -> bool:
        self._check_edge(edge)
        return edge < self.d

    def column_edge_of_nodes(self) -> np.ndarray:
        """Column-edge index for every node, in node order."""
        return np.tile(np.arange(self.d, dtype=np.int64), self.n)

    def row_edge_of_nodes(self) -> np.ndarray:
        """Row-edge index for every node, in node order."""
        return self.d + np.repeat(np.arange(self.n, dtype=np.int64), self.d)

    def _check_cell(self, i: int, j: int) -> None:
        if not (0 <= i < self.n and 0 <= j < self.d):
            raise ParameterError(f"cell ({i},{j}) outside {self.n}x{self.d}")

    def _check_node(self, node: int) -> None:
        if not 0 <= node < self.num_nodes:
            raise ParameterError(f"node {node} outside 0..{self.num_nodes - 1}")

    def _check_edge(self, edge: int) -> None:
        if not 0 <= edge < self.num_edges:
            raise ParameterError(f"edge {edge} outside 0..{self.num_edges - 1}")


def construct_hypergraph(n: int, d: int) -> Hypergraph:
    return Hypergraph(n, d)
