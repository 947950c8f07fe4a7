"""End-to-end imputation: encode, message-pass, fuse, decode per masked cell.

Numerical and categorical cells take exactly one decode step: the scalar
head's last-position output, clamped to [0, 1] and mapped back through the
column scaler (categorical values round to the nearest valid id).  Text cells
decode greedily token by token until EOS or the length cap.  Observed cells
pass through untouched, so imputing an already-complete table is a no-op and
imputation is idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ContractError
from .fusion import clamp_unit, project, take_last, xfusion
from .model import ChunkForward, ModelState, decode_text, forward_graph, forward_scalar_cells
from .tabular import (
    ColumnKind,
    ColumnScalers,
    Table,
    apply_scalers,
    fit_scalers,
    invert_scalers,
)


@dataclass
class ImputeResult:
    table: Table
    provenance: list[tuple[int, int, bool]]   # (row, col, was_imputed)


def _impute_chunk(model: ModelState, scaled: Table, mask: np.ndarray,
                  row_offset: int) -> dict[tuple[int, int], float | str]:
    fwd = forward_graph(model, scaled, mask, row_offset)
    # Decoding only reads the graph feature, so drop its tape.
    z_g_values = fwd.z_g.data
    fwd = ChunkForward(fwd.hg, dc.constant(z_g_values), fwd.table, fwd.mask,
                       fwd.row_offset)
    fills: dict[tuple[int, int], float | str] = {}
    scalar_cells = []
    text_cells = []
    for i, j in zip(*np.nonzero(mask == 0)):
        i, j = int(i), int(j)
        if scaled.kinds[j] is ColumnKind.TEXT:
            text_cells.append((i, j))
        else:
            scalar_cells.append((i, j))
    out = forward_scalar_cells(model, fwd, scalar_cells)
    if out is not None:
        preds, order = out
        for node, value in zip(order, preds.data):
            i, j = divmod(int(node), fwd.hg.d)
            fills[(i, j)] = clamp_unit(float(value))
    for i, j in text_cells:
        node = i * fwd.hg.d + j
        fills[(i, j)] = decode_text(model, fwd, i, j, z_g_values[node])
    return fills


def impute(table: Table, mask: np.ndarray, model: ModelState,
           scalers: ColumnScalers | None = None,
           chunk_size: int = 512) -> ImputeResult:
    """Fill every masked cell of a table.

    ``scalers`` default to a fit over the observed cells; callers evaluating
    against ground truth usually pass scalers fitted on the complete table.
    """
    mask = np.asarray(mask, dtype=np.uint8)
    if mask.shape != (table.n, table.d):
        raise ContractError(f"mask shape {mask.shape} != table {table.n}x{table.d}")
    if scalers is None:
        scalers = fit_scalers(table, mask)
    scaled = apply_scalers(table, scalers)
    for start in range(0, table.n, chunk_size):
        stop = min(start + chunk_size, table.n)
        part = Table(list(scaled.names), list(scaled.kinds),
                     [c[start:stop] for c in scaled.columns])
        fills = _impute_chunk(model, part, mask[start:stop], start)
        for (i, j), value in fills.items():
            scaled.columns[j][start + i] = value
    result = invert_scalers(scaled, scalers)
    # Observed cells pass through bit-exactly.
    for j in range(table.d):
        obs = mask[:, j] == 1
        result.columns[j][obs] = table.columns[j][obs]
    provenance = [(int(i), int(j), bool(mask[i, j] == 0))
                  for i in range(table.n) for j in range(table.d)]
    return ImputeResult(result, provenance)


def write_provenance(result: ImputeResult, path: str) -> None:
    """Per-cell sidecar: ``row,col,was_imputed`` lines."""
    import os
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("row,col,was_imputed\n")
        for i, j, imputed in result.provenance:
            fh.write(f"{i},{j},{int(imputed)}\n")
    os.replace(tmp, path)
