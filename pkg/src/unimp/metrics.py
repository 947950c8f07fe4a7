"""Imputation quality metrics: RMSE, MAE, ROUGE-1 and cosine similarity.

Error metrics run over masked (imputed) cells only, on the scaled [0, 1]
representation, so values are comparable across columns.  ROUGE-1 uses
multiset (clipped-count) unigram overlap with EOS excluded; its recall
denominator is the generated text and its precision denominator the
reference -- the swapped orientation this pipeline standardizes on -- with
the conventional orientation available behind a flag.  Cosine similarity
embeds both texts with a mean-pooled frozen-backbone embedding.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .encoder import FrozenBackbone, Vocab, split_tokens
from .errors import MetricError


def _masked_errors(truth: np.ndarray, pred: np.ndarray,
                   mask: np.ndarray) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    mask = np.asarray(mask)
    if truth.shape != pred.shape or truth.shape != mask.shape:
        raise MetricError(
            f"shape mismatch: truth {truth.shape}, pred {pred.shape}, mask {mask.shape}")
    sel = mask == 0
    if not sel.any():
        raise MetricError("no masked cells to score")
    return truth[sel] - pred[sel]


def rmse(truth: np.ndarray, pred: np.ndarray, mask: np.ndarray) -> float:
    err = _masked_errors(truth, pred, mask)
    return float(np.sqrt(np.mean(err * err)))


def mae(truth: np.ndarray, pred: np.ndarray, mask: np.ndarray) -> float:
    err = _masked_errors(truth, pred, mask)
    return float(np.mean(np.abs(err)))


def _unigrams(text: str) -> Counter:
    return Counter(t for t in split_tokens(text) if t != "eos")


def rouge1(generated: str, reference: str,
           standard: bool = False) -> tuple[float, float, float]:
    """(recall, precision, f1) unigram overlap.

    Default orientation divides recall by |generated| and precision by
    |reference|; ``standard=True`` swaps to the conventional one.  Empty
    inputs score 0 by convention.
    """
    gen = _unigrams(generated)
    ref = _unigrams(reference)
    overlap = sum((gen & ref).values())
    n_gen = sum(gen.values())
    n_ref = sum(ref.values())
    if n_gen == 0 or n_ref == 0:
        return 0.0, 0.0, 0.0
    if standard:
        recall = overlap / n_ref
        precision = overlap / n_gen
    else:
        recall = overlap / n_gen
        precision = overlap / n_ref
    if recall + precision == 0.0:
        return 0.0, 0.0, 0.0
    f1 = 2.0 * recall * precision / (recall + precision)
    return recall, precision, f1


@dataclass
class TextEmbedder:
    """Mean-pooled frozen-backbone embedding of a text's tokens."""

    backbone: FrozenBackbone
    vocab: Vocab

    def __call__(self, text: str) -> np.ndarray:
        ids = self.vocab.encode(text)
        if not ids:
            return np.zeros(self.backbone.dim, dtype=np.float64)
        return self.backbone.encode(ids).mean(axis=0)


def cos_sim(generated: str, reference: str, embedder) -> float:
    """Cosine of the two embedded texts; 0 when either embeds to zero."""
    a = np.asarray(embedder(generated), dtype=np.float64)
    b = np.asarray(embedder(reference), dtype=np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


# ---------------------------------------------------------------------------
# Evaluation reports
# ---------------------------------------------------------------------------

def report_lines(metric_values: list[tuple[str, str, float]]) -> list[str]:
    """Machine-readable ``metric,column_kind,value`` lines."""
    return [f"{metric},{kind},{value!r}" for metric, kind, value in metric_values]


def summary_table(metric_values: list[tuple[str, str, float]]) -> str:
    width = max((len(m) for m, _, _ in metric_values), default=6)
    lines = [f"{'metric'.ljust(width)}  {'kind'.ljust(11)}  value"]
    for metric, kind, value in metric_values:
        lines.append(f"{metric.ljust(width)}  {kind.ljust(11)}  {value:.6f}")
    return "\n".join(lines)
