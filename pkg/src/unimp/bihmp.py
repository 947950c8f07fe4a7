"""Bidirectional high-order message passing over the cell hypergraph.

Each layer runs two steps.  Node-to-hyperedge: every hyperedge averages
ReLU(f1(node)) over its members and fuses that with its own state through
f2.  Hyperedge-to-node: every node fuses its state with its (just updated)
column and row edge states through f3.  The layer stack leaves behind, for
every node, the concatenation of its column-edge and row-edge embeddings --
the graph feature consumed by the fusion stage.

The grid structure of the hypergraph makes the aggregations plain axis
means: nodes reshape to (n, d, D), column edges are the axis-0 mean,
row edges the axis-1 mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Param, Tensor
from .errors import ParameterError
from .hypergraph import Hypergraph

DEFAULT_NUM_LAYERS = 3


def _init_linear(rng: np.random.Generator, fan_in: int, fan_out: int,
                 slot_gain: float = 1.0, kink_spread: float = 0.0
                 ) -> tuple[Param, Param]:
    """Uniform +-1/sqrt(fan_in) weights.

    Layers consuming node features get their first input row scaled up by
    slot_gain: slot 0 carries a lone scalar (the cell value), so its
    effective fan-in is 1 and the dense-layer bound would shrink the only
    value pathway by sqrt(fan_in).  Their biases spread over
    [-kink_spread, kink_spread] so the ReLU kinks land inside the scaled
    value range, giving label-encoded categories a nominal (not merely
    ordinal) code.  Other layers keep non-negative biases, which resists
    dead units during the first optimizer steps.
    """
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    if slot_gain != 1.0:
        w[0, :] *= slot_gain
    b = rng.uniform(-bound, bound, size=(fan_out,))
    if kink_spread > 0.0:
        b = rng.uniform(-kink_spread, kink_spread, size=(fan_out,))
    else:
        b = np.abs(b)
    return Param(w), Param(b)


@dataclass
class BiHMPLayer:
    """One (node-to-hyperedge, hyperedge-to-node) pair: f1 D->D, f2 2D->D, f3 3D->D."""

    w1: Param
    b1: Param
    w2: Param
    b2: Param
    w3: Param
    b3: Param

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator) -> "BiHMPLayer":
        gain = np.sqrt(dim)
        w1, b1 = _init_linear(rng, dim, dim, slot_gain=gain, kink_spread=0.5)
        w2, b2 = _init_linear(rng, 2 * dim, dim)
        w3, b3 = _init_linear(rng, 3 * dim, dim, slot_gain=gain, kink_spread=0.5)
        return cls(w1, b1, w2, b2, w3, b3)

    def params(self) -> list[Param]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


@dataclass
class GraphState:
    """Node and edge embeddings after some number of layers."""

    z_v: Tensor          # (n*d, D)
    z_e: Tensor          # (n+d, D), column edges first
    layer: int = 0


def node_to_hyperedge(state: GraphState, layer: BiHMPLayer,
                      hg: Hypergraph) -> Tensor:
    """Updated edge embeddings: ReLU(f2(concat(z_e, mean ReLU(f1(z_v)))))."""
    n, d = hg.n, hg.d
    dim = state.z_v.shape[-1]
    h = dc.relu(dc.linear(state.z_v, layer.w1, layer.b1))
    grid = dc.reshape(h, (n, d, dim))
    col_mean = dc.mean_axis(grid, 0)                 # (d, D)
    row_mean = dc.mean_axis(grid, 1)                 # (n, D)
    z_temp = dc.concat([col_mean, row_mean], axis=0)  # (n+d, D), columns first
    fused = dc.concat([state.z_e, z_temp], axis=1)
    return dc.relu(dc.linear(fused, layer.w2, layer.b2))


def _edges_per_node(z_e: Tensor, hg: Hypergraph) -> tuple[Tensor, Tensor]:
    """Column-edge and row-edge embedding of every node, in node order."""
    col = dc.tile_rows(dc.slice_rows(z_e, 0, hg.d), hg.n)
    row = dc.repeat_rows(dc.slice_rows(z_e, hg.d, hg.num_edges), hg.d)
    return col, row


def hyperedge_to_node(state: GraphState, layer: BiHMPLayer, hg: Hypergraph,
                      z_e_new: Tensor) -> Tensor:
    """Updated node embeddings from the freshly updated incident edges.

    Concat order is fixed: (node, column edge, row edge).
    """
    col_edges, row_edges = _edges_per_node(z_e_new, hg)
    fused = dc.concat([state.z_v, col_edges, row_edges], axis=1)
    return dc.relu(dc.linear(fused, layer.w3, layer.b3))


def run_bihmp(state0: GraphState, layers: list[BiHMPLayer],
              hg: Hypergraph, l_max: int | None = None) -> tuple[GraphState, Tensor]:
    """Apply l_max layer pairs; return the final state and per-node z_g.

    z_g stacks each node's final column-edge and row-edge embeddings into a
    (n*d, 2D) tensor, column edge first.
    """
    if l_max is None:
        l_max = len(layers)
    if l_max < 1:
        raise ParameterError(f"l_max must be >= 1, got {l_max}")
    if l_max > len(layers):
        raise ParameterError(f"l_max {l_max} exceeds {len(layers)} layers")
    state = state0
    for l in range(l_max):
        z_e_new = node_to_hyperedge(state, layers[l], hg)
        z_v_new = hyperedge_to_node(state, layers[l], hg, z_e_new)
        state = GraphState(z_v=z_v_new, z_e=z_e_new, layer=l + 1)
    col, row = _edges_per_node(state.z_e, hg)
    z_g = dc.concat([col, row], axis=1)
    return state, z_g
