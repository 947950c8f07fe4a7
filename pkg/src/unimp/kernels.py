"""Hot numeric kernels with numba acceleration and a pure-numpy fallback.

Two inner loops dominate per-call overhead at scale: the frozen backbone's
causal attention (invoked once per distinct prompt) and the masked pairwise
row distances used by the KNN baseline.  Both carry an ``@njit`` version and
a vectorized numpy twin.  Set ``UNIMP_NO_NUMBA=1`` to force the numpy path
(also used automatically when numba is unavailable).

``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("UNIMP_NO_NUMBA", "") != "1"
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False


# ---------------------------------------------------------------------------
# Causal single-head attention over an already-embedded prompt.
# x: (s, D) token embeddings (lookup + positional term added by the caller).
# Returns x + Softmax(causal(q kT / sqrt(D))) v with q/k/v = x @ w{q,k,v}.
# ---------------------------------------------------------------------------

def _causal_attention_np(x: np.ndarray, wq: np.ndarray, wk: np.ndarray,
                         wv: np.ndarray) -> np.ndarray:
    s, dim = x.shape
    q = x @ wq
    k = x @ wk
    v = x @ wv
    scores = (q @ k.T) / np.sqrt(dim)
    scores = scores + np.triu(np.full((s, s), -1e30), k=1)
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    return x + weights @ v


def _causal_attention_jit_impl(x, wq, wk, wv):
    s, dim = x.shape
    q = np.dot(x, wq)
    k = np.dot(x, wk)
    v = np.dot(x, wv)
    scale = 1.0 / np.sqrt(dim)
    out = x.copy()
    for i in range(s):
        row = np.empty(i + 1)
        m = -1e300
        for j in range(i + 1):
            acc = 0.0
            for t in range(dim):
                acc += q[i, t] * k[j, t]
            acc *= scale
            row[j] = acc
            if acc > m:
                m = acc
        z = 0.0
        for j in range(i + 1):
            row[j] = np.exp(row[j] - m)
            z += row[j]
        for j in range(i + 1):
            w = row[j] / z
            for t in range(dim):
                out[i, t] += w * v[j, t]
    return out


# ---------------------------------------------------------------------------
# Pairwise row distances over co-observed features, normalized by the
# co-observed count.  dist[a, b] = sqrt(mean of squared diffs over features
# observed in both rows); inf when the rows share no observed feature.
# ---------------------------------------------------------------------------

def _masked_pairwise_dist_np(values: np.ndarray, observed: np.ndarray) -> np.ndarray:
    obs = observed.astype(np.float64)
    filled = np.where(observed.astype(bool), values, 0.0)
    co_count = obs @ obs.T
    sq = filled ** 2
    # sum over co-observed j of (a_j - b_j)^2 = sum a^2*o_b + sum b^2*o_a - 2*sum a*b
    a2 = sq @ obs.T
    total = a2 + a2.T - 2.0 * (filled @ filled.T)
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.sqrt(np.maximum(total, 0.0) / co_count)
    dist[co_count == 0] = np.inf
    return dist


def _masked_pairwise_dist_jit_impl(values, observed):
    n, d = values.shape
    dist = np.full((n, n), np.inf)
    for a in range(n):
        for b in range(a, n):
            count = 0
            acc = 0.0
            for j in range(d):
                if observed[a, j] and observed[b, j]:
                    diff = values[a, j] - values[b, j]
                    acc += diff * diff
                    count += 1
            if count > 0:
                val = np.sqrt(acc / count)
                dist[a, b] = val
                dist[b, a] = val
    return dist


if USE_NUMBA:
    causal_attention = njit(cache=True)(_causal_attention_jit_impl)
    masked_pairwise_dist = njit(cache=True)(_masked_pairwise_dist_jit_impl)
else:
    causal_attention = _causal_attention_np
    masked_pairwise_dist = _masked_pairwise_dist_np
