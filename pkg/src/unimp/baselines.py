"""Reference imputers: column mean/mode and K-nearest-neighbour imputation.

KNNI measures row distance as the root mean squared difference over
co-observed scaled numerical/categorical features (text columns do not enter
the distance).  Neighbours weight by inverse distance; a lone usable donor is
copied bit-exactly.  Cells with no usable neighbour fall back to mean/mode;
text cells copy the nearest single neighbour's value.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ParameterError, UnscalableColumnError
from .tabular import ColumnKind, ColumnScalers, Table, apply_scalers, fit_scalers

_EPS = 1e-8


def _column_mode(values: list) -> object:
    """Most frequent value; ties resolve to the earliest first appearance."""
    counts: dict = {}
    order: dict = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
        order.setdefault(v, len(order))
    return max(counts, key=lambda v: (counts[v], -order[v]))


def impute_mean_mode(table: Table, mask: np.ndarray) -> Table:
    """Column mean for numerical cells, observed mode otherwise."""
    mask = np.asarray(mask, dtype=np.uint8)
    out = table.copy()
    for j, kind in enumerate(table.kinds):
        obs = mask[:, j] == 1
        hidden = np.nonzero(~obs)[0]
        if kind is ColumnKind.NUMERICAL:
            vals = table.columns[j][obs].astype(np.float64)
            vals = vals[~np.isnan(vals)]
            if vals.size == 0:
                raise UnscalableColumnError(
                    f"column {table.names[j]!r} fully missing")
            fill = float(vals.mean())
            col = out.columns[j].astype(np.float64)
            col[hidden] = fill
            out.columns[j] = col
        else:
            vals = [v for v in table.columns[j][obs] if v is not None]
            if not vals:
                raise UnscalableColumnError(
                    f"column {table.names[j]!r} fully missing")
            fill = _column_mode(vals)
            for i in hidden:
                out.columns[j][i] = fill
    return out


def _distance_features(scaled: Table, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cols = [j for j, k in enumerate(scaled.kinds) if k is not ColumnKind.TEXT]
    if not cols:
        n = scaled.n
        return np.zeros((n, 0)), np.zeros((n, 0), dtype=np.uint8)
    values = np.stack([scaled.columns[j].astype(np.float64) for j in cols], axis=1)
    observed = mask[:, cols].astype(np.uint8) & (~np.isnan(values)).astype(np.uint8)
    return np.where(np.isnan(values), 0.0, values), observed


def impute_knni(table: Table, mask: np.ndarray, k: int = 5,
                scalers: ColumnScalers | None = None) -> Table:
    """Inverse-distance weighted K-nearest-neighbour imputation."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    mask = np.asarray(mask, dtype=np.uint8)
    if scalers is None:
        scalers = fit_scalers(table, mask)
    scaled = apply_scalers(table, scalers)
    values, observed = _distance_features(scaled, mask)
    dist = kernels.masked_pairwise_dist(values, observed)
    fallback = impute_mean_mode(table, mask)
    out = table.copy()

    for j, kind in enumerate(table.kinds):
        for i in np.nonzero(mask[:, j] == 0)[0]:
            i = int(i)
            donors = np.nonzero((mask[:, j] == 1) & np.isfinite(dist[i]))[0]
            donors = donors[donors != i]
            if donors.size == 0:
                out.columns[j][i] = fallback.columns[j][i]
                continue
            order = donors[np.argsort(dist[i, donors], kind="stable")]
            if kind is ColumnKind.TEXT:
                out.columns[j][i] = table.columns[j][order[0]]
                continue
            chosen = order[:min(k, order.size)]
            if chosen.size == 1:
                out.columns[j][i] = table.columns[j][chosen[0]]
                continue
            weights = 1.0 / (dist[i, chosen] + _EPS)
            weights = weights / weights.sum()
            blended = float(weights @ scaled.columns[j][chosen].astype(np.float64))
            if kind is ColumnKind.NUMERICAL:
                out.columns[j][i] = scalers.numeric[j].invert(blended)
            else:
                codec = scalers.categorical[j]
                out.columns[j][i] = codec.decode(codec.from_unit(blended))
    return out
