"""Missingness simulation and the progressive-masking training schedule.

MCAR flips each cell independently.  MAR keeps a seeded subset of columns
fully observed and masks the rest through a logistic model over the cause
columns; MNAR self-masks every column through a logistic model of the cell's
own scaled value.  Both logistic mechanisms calibrate their intercept by
bisection so the mean missing probability matches the requested rate.

All generators are pure functions of (inputs, seed): mask entries are 1 for
observed cells and 0 for missing ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .tabular import ColumnKind, Table

MECHANISMS = ("mcar", "mar", "mnar")

# Progressive masking adds 30 points of extra masking over a training run.
PROGRESSIVE_SPAN = 0.30
DEFAULT_KAPPA = 0.35


@dataclass
class MissSpec:
    mechanism: str = "mcar"
    rate: float = 0.2
    seed: int = 0
    cause_fraction: float = 0.3

    def validate(self) -> None:
        if self.mechanism not in MECHANISMS:
            raise ParameterError(f"unknown mechanism {self.mechanism!r}")
        if not 0.0 < self.rate < 1.0:
            raise ParameterError(f"rate must be in (0,1), got {self.rate}")
        if self.mechanism == "mar" and not 0.0 < self.cause_fraction < 1.0:
            raise ParameterError(
                f"cause_fraction must be in (0,1), got {self.cause_fraction}")


def _rng(*seeds: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seeds))))


def mask_mcar(shape: tuple[int, int], rate: float, seed: int) -> np.ndarray:
    n, d = shape
    if n < 1 or d < 1:
        raise ParameterError(f"shape must be positive, got {shape}")
    if not 0.0 < rate < 1.0:
        raise ParameterError(f"rate must be in (0,1), got {rate}")
    rng = _rng(seed)
    return (rng.random((n, d)) >= rate).astype(np.uint8)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _calibrate_intercept(logits: np.ndarray, rate: float, tol: float = 1e-6) -> float:
    """Bisect b so that mean(sigmoid(logits + b)) == rate within tol."""
    lo, hi = -60.0, 60.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(_sigmoid(logits + mid).mean()) < rate:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _logistic_inputs(table: Table) -> np.ndarray:
    """Scaled numeric view of a table for the logistic mechanisms.

    Text columns and missing cells contribute a neutral 0.5.
    """
    out = np.full((table.n, table.d), 0.5, dtype=np.float64)
    for j, kind in enumerate(table.kinds):
        if kind is ColumnKind.TEXT:
            continue
        col = table.columns[j].astype(np.float64)
        seen = ~np.isnan(col)
        out[seen, j] = col[seen]
    return out


def mask_mar(table: Table, spec: MissSpec) -> np.ndarray:
    """Missing-at-random mask over a scaled table.

    A seeded subset of ceil(cause_fraction * d) columns stays fully observed;
    each remaining column is masked with P(missing | row) =
    sigmoid(w . x_causes + b), w ~ U[-1, 1], b calibrated to the target rate.
    """
    spec.validate()
    n, d = table.n, table.d
    if d < 2:
        raise ParameterError("MAR needs at least 2 columns")
    rng = _rng(spec.seed)
    n_causes = int(math.ceil(spec.cause_fraction * d))
    n_causes = min(max(n_causes, 1), d - 1)
    causes = np.sort(rng.choice(d, size=n_causes, replace=False))
    x = _logistic_inputs(table)[:, causes]

    mask = np.ones((n, d), dtype=np.uint8)
    for j in range(d):
        if j in causes:
            continue
        w = rng.uniform(-1.0, 1.0, size=n_causes)
        logits = x @ w
        b = _calibrate_intercept(logits, spec.rate)
        p_missing = _sigmoid(logits + b)
        mask[:, j] = (rng.random(n) >= p_missing).astype(np.uint8)
    return mask


def mask_mnar(table: Table, spec: MissSpec) -> np.ndarray:
    """Missing-not-at-random: each cell self-masks on its own scaled value."""
    spec.validate()
    n, d = table.n, table.d
    rng = _rng(spec.seed)
    weights = rng.uniform(-1.0, 1.0, size=d)
    x = _logistic_inputs(table)
    mask = np.ones((n, d), dtype=np.uint8)
    for j in range(d):
        logits = weights[j] * x[:, j]
        b = _calibrate_intercept(logits, spec.rate)
        p_missing = _sigmoid(logits + b)
        mask[:, j] = (rng.random(n) >= p_missing).astype(np.uint8)
    return mask


def mnar_weights(spec: MissSpec, d: int) -> np.ndarray:
    """The self-masking weights mask_mnar draws for a d-column table."""
    return _rng(spec.seed).uniform(-1.0, 1.0, size=d)


def simulate(table: Table, spec: MissSpec) -> np.ndarray:
    spec.validate()
    if spec.mechanism == "mcar":
        return mask_mcar((table.n, table.d), spec.rate, spec.seed)
    if spec.mechanism == "mar":
        return mask_mar(table, spec)
    return mask_mnar(table, spec)


def progressive_ratio(kappa: float, epoch: int, epochs: int) -> float:
    """Newly-masked fraction of observed cells at a given epoch."""
    if epoch < 0 or epoch > max(epochs, 0):
        raise ParameterError(f"epoch {epoch} outside 0..{epochs}")
    frac = 0.0 if epochs == 0 else epoch / epochs
    return kappa + frac * PROGRESSIVE_SPAN


def progressive_mask(mask: np.ndarray, kappa: float, epoch: int, epochs: int,
                     seed: int) -> np.ndarray:
    """Flip a seeded random subset of observed entries to missing.

    The subset size is floor(r * observed_count) with
    r = kappa + (epoch / epochs) * 0.30.  Existing zeros are preserved, so the
    result is <= mask elementwise.
    """
    r = progressive_ratio(kappa, epoch, epochs)
    if r >= 1.0:
        raise ParameterError(f"progressive ratio {r:.3f} >= 1")
    if r < 0.0:
        raise ParameterError(f"progressive ratio {r:.3f} < 0")
    out = np.asarray(mask, dtype=np.uint8).copy()
    observed = np.flatnonzero(out)
    k = int(math.floor(r * observed.size))
    if k > 0:
        rng = _rng(seed)
        picked = rng.choice(observed.size, size=k, replace=False)
        out.flat[observed[picked]] = 0
    return out
