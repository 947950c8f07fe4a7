"""Full-model finite-difference gradient verification.

Builds a tiny mixed-type fixture (numerical, categorical and text columns,
one masked cell of each kind), computes the training loss's analytic
gradient, then compares every trainable parameter element against a central
finite difference.  Relative error uses max(|analytic|, |fd|, 1e-6) as the
denominator so that near-zero gradients are not drowned by cancellation
noise in the difference quotient.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from . import encoder as enc
from .model import ModelState
from .tabular import ColumnKind, Table
from .train import Chunk, chunk_loss

REL_TOL = 1e-4
_DENOM_FLOOR = 1e-6


def build_fixture(dim: int = 8, num_layers: int = 2, seed: int = 0
                  ) -> tuple[ModelState, Chunk, np.ndarray]:
    """3x3 mixed table (already scaled) with one hidden cell per kind."""
    table = Table(
        names=["amount", "grade", "note"],
        kinds=[ColumnKind.NUMERICAL, ColumnKind.CATEGORICAL, ColumnKind.TEXT],
        columns=[
            np.array([0.15, 0.55, 0.9]),
            np.array([0.0, 0.5, 1.0]),
            np.array(["alpha beta", "gamma", "alpha gamma"], dtype=object),
        ],
    )
    vocab = enc.build_vocab(enc.table_corpus(table))
    model = ModelState.create(vocab, embed_dim=dim, num_layers=num_layers,
                              seed=seed)
    base_mask = np.ones((3, 3), dtype=np.uint8)
    train_mask = base_mask.copy()
    train_mask[0, 0] = 0
    train_mask[1, 1] = 0
    train_mask[2, 2] = 0
    chunk = Chunk(table=table, base_mask=base_mask, row_offset=0, table_id=0)
    return model, chunk, train_mask


def run_gradcheck(dim: int = 8, num_layers: int = 2, seed: int = 0,
                  h: float = 1e-5, verbose: bool = False) -> float:
    """Return the worst relative error over every trainable parameter."""
    model, chunk, train_mask = build_fixture(dim, num_layers, seed)

    def loss_value() -> float:
        loss, _ = chunk_loss(model, chunk, train_mask)
        return float(loss.data)

    loss, _ = chunk_loss(model, chunk, train_mask)
    params = model.named_params()
    dc.zero_grads([p for _, p in params])
    dc.backward(loss)

    worst = 0.0
    total = 0
    for name, param in params:
        analytic = param.grad if param.grad is not None else np.zeros_like(param.data)
        flat = param.data.reshape(-1)
        grad_flat = analytic.reshape(-1)
        group_worst = 0.0
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + h
            up = loss_value()
            flat[idx] = keep - h
            down = loss_value()
            flat[idx] = keep
            fd = (up - down) / (2.0 * h)
            denom = max(abs(grad_flat[idx]), abs(fd), _DENOM_FLOOR)
            rel = abs(grad_flat[idx] - fd) / denom
            group_worst = max(group_worst, rel)
            total += 1
        worst = max(worst, group_worst)
        if verbose:
            print(f"{name}: {flat.size} params, worst rel err {group_worst:.3e}")
    if verbose:
        print(f"checked {total} parameters")
    return worst
