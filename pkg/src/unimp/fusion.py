"""XFusion: prompt self-attention, then cross-attention onto graph features.

The prompt embedding z_p first attends to itself (causally, so autoregressive
decoding stays consistent with teacher-forced forwards), then the result
queries the node's graph feature z_g, reshaped into two D-dim rows (column
edge, row edge) serving as keys and values.  Both stages share the same
projection matrices W_Q/W_K/W_V, as the forward equations reuse them; each
stage has its own trailing output weight (w1, w2).

A projection head maps fused features to a scalar (numerical/categorical
targets) or to vocabulary logits (text targets).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Param, Tensor
from .errors import ContractError, ShapeError


@dataclass
class XFusionBlock:
    w_q: Param
    w_k: Param
    w_v: Param
    w1: Param
    w2: Param

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator) -> "XFusionBlock":
        bound = 1.0 / np.sqrt(dim)

        def mat() -> Param:
            return Param(rng.uniform(-bound, bound, size=(dim, dim)))

        return cls(mat(), mat(), mat(), mat(), mat())

    def params(self) -> list[Param]:
        return [self.w_q, self.w_k, self.w_v, self.w1, self.w2]


def xfusion(block: XFusionBlock, z_p: Tensor, z_g: Tensor) -> Tensor:
    """Fuse prompt embeddings with a node's graph feature.

    z_p: (s+1, D) or batched (B, s+1, D); z_g: (2, D) or (B, 2, D) holding
    the column-edge and row-edge halves as separate rows.
    """
    if z_p.data.shape[-1] != z_g.data.shape[-1]:
        raise ShapeError(f"dim mismatch: z_p {z_p.data.shape} vs z_g {z_g.data.shape}")
    if z_p.data.ndim != z_g.data.ndim:
        raise ShapeError("z_p and z_g must both be batched or both flat")
    z_p_temp = dc.attention(
        dc.matmul(z_p, block.w_q),
        dc.matmul(z_p, block.w_k),
        dc.matmul(z_p, block.w_v),
        w=block.w1, causal=True)
    return dc.attention(
        dc.matmul(z_p_temp, block.w_q),
        dc.matmul(z_g, block.w_k),
        dc.matmul(z_g, block.w_v),
        w=block.w2)


def split_graph_feature(z_g_flat: Tensor) -> Tensor:
    """Reshape (..., 2D) graph features into two D-dim key/value rows."""
    shape = z_g_flat.data.shape
    dim = shape[-1] // 2
    if shape[-1] != 2 * dim:
        raise ShapeError(f"graph feature width {shape[-1]} is odd")
    return dc.reshape(z_g_flat, shape[:-1] + (2, dim))


@dataclass
class ProjectionHead:
    """Linear D -> d_o map; d_o = 1 for scalar targets, |Vocab| for text."""

    w: Param
    b: Param

    @classmethod
    def create(cls, dim: int, out_dim: int, rng: np.random.Generator) -> "ProjectionHead":
        bound = 1.0 / np.sqrt(dim)
        return cls(Param(rng.uniform(-bound, bound, size=(dim, out_dim))),
                   Param(rng.uniform(-bound, bound, size=(out_dim,))))

    @property
    def out_dim(self) -> int:
        return self.w.data.shape[1]

    def params(self) -> list[Param]:
        return [self.w, self.b]


def project(z_output: Tensor, head: ProjectionHead) -> Tensor:
    """Apply the head at every position."""
    return dc.linear(z_output, head.w, head.b)


def take_last(outputs: Tensor) -> Tensor:
    """Prediction at the final position.

    (s, d_o) -> (d_o,) logits row; (B, s, d_o) -> (B, d_o).
    """
    nd = outputs.data.ndim
    if nd == 2:
        picked = dc.gather_rows(outputs, np.array([outputs.data.shape[0] - 1]))
        return dc.reshape(picked, (outputs.data.shape[1],))
    if nd == 3:
        s = outputs.data.shape[1]
        picked = dc.slice_axis1(outputs, s - 1, s)
        return dc.reshape(picked, (outputs.data.shape[0], outputs.data.shape[2]))
    raise ContractError(f"take_last wants rank 2 or 3, got {nd}")


def clamp_unit(value: float) -> float:
    """Inference-time clamp of scalar predictions to the scaled range."""
    return min(max(value, 0.0), 1.0)
