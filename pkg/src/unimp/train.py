"""Chunked pre-training and fine-tuning with progressive masking.

Tables split into row-contiguous chunks; chunks group into batches.  Each
epoch re-draws a progressive mask per chunk at ratio kappa ->
kappa + 30 points across the run, hides those observed cells from the
forward pass, and scores the model on recovering them: Huber loss for
numerical/categorical cells, mean-token cross-entropy for text.  Chunk
losses are normalized by their masked-cell count and averaged per batch;
one Adam step per batch.  The backbone stays frozen throughout.

Fine-tuning is the same loop restricted to a single table, continuing from
a pretrained parameter set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from . import encoder as enc
from .diffcore import AdamState, Tensor, adam_step, backward, zero_grads
from .errors import ContractError, NonFiniteError, ParameterError
from .masking import DEFAULT_KAPPA, progressive_mask, progressive_ratio
from .model import ChunkForward, ModelState, forward_graph, forward_scalar_cells, forward_text_cells
from .tabular import ColumnKind, ColumnScalers, Table, apply_scalers, fit_scalers

FINETUNE_EPOCHS_DEFAULT = 50


@dataclass
class TrainConfig:
    """Desk-scale defaults; text tables usually want chunk_size=32, batch_size=2."""

    chunk_size: int = 512
    batch_size: int = 64
    epochs: int = 200
    lr: float = 1e-3
    kappa: float = DEFAULT_KAPPA
    delta: float = 1.0
    seed: int = 0
    l_max: int = 3
    embed_dim: int = 64
    max_decode_len: int = 32
    workers: int = 1

    def validate(self) -> None:
        if min(self.chunk_size, self.batch_size, self.l_max, self.embed_dim,
               self.workers) < 1:
            raise ParameterError("chunk_size/batch_size/l_max/embed_dim/workers must be >= 1")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.kappa or not self.kappa + 0.30 < 1.0:
            raise ParameterError(f"kappa {self.kappa} violates kappa + 0.30 < 1")
        if self.delta <= 0:
            raise ParameterError(f"delta must be > 0, got {self.delta}")

    @classmethod
    def finetune_defaults(cls, **overrides) -> "TrainConfig":
        base = cls(epochs=FINETUNE_EPOCHS_DEFAULT)
        return replace(base, **overrides)


@dataclass
class Chunk:
    """Row-contiguous slice of a table with its mask slice."""

    table: Table
    base_mask: np.ndarray
    row_offset: int
    table_id: int
    index: int = 0
    edge_features: Optional[np.ndarray] = None

    @property
    def n_rows(self) -> int:
        return self.table.n


def slice_table(table: Table, start: int, stop: int) -> Table:
    return Table(list(table.names), list(table.kinds),
                 [c[start:stop].copy() for c in table.columns])


def make_chunks(tables: Sequence[Table], chunk_size: int, batch_size: int,
                masks: Optional[Sequence[np.ndarray]] = None) -> list[list[Chunk]]:
    """Split tables into ceil(n/chunk_size) row chunks, batched in order."""
    if chunk_size < 1 or batch_size < 1:
        raise ParameterError("chunk_size and batch_size must be >= 1")
    chunks: list[Chunk] = []
    for tid, table in enumerate(tables):
        mask = table.mask() if masks is None else np.asarray(masks[tid], dtype=np.uint8)
        if mask.shape != (table.n, table.d):
            raise ContractError(f"mask shape {mask.shape} != table {table.n}x{table.d}")
        for start in range(0, table.n, chunk_size):
            stop = min(start + chunk_size, table.n)
            chunks.append(Chunk(table=slice_table(table, start, stop),
                                base_mask=mask[start:stop].copy(),
                                row_offset=start, table_id=tid,
                                index=len(chunks)))
    return [chunks[i:i + batch_size] for i in range(0, len(chunks), batch_size)]


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def huber_loss(y_true, y_pred: Tensor, delta: float = 1.0) -> Tensor:
    """Sum of Huber losses of predictions against constant targets."""
    return dc.huber(y_pred, np.asarray(y_true, dtype=np.float64), delta)


def text_nll(token_targets: Sequence[int], stepwise_logits: Tensor) -> Tensor:
    """Mean over positions of -log softmax(logits)[target]."""
    targets = np.asarray(token_targets, dtype=np.int64)
    if stepwise_logits.data.shape[0] != targets.shape[0]:
        raise ContractError(
            f"{stepwise_logits.data.shape[0]} logit rows for {targets.shape[0]} targets")
    return dc.cross_entropy(stepwise_logits, targets)


def _loss_cells(chunk: Chunk, train_mask: np.ndarray) -> tuple[list, list]:
    """Cells hidden by progressive masking, with their recovery targets."""
    scalar_cells: list[tuple[int, int, float]] = []
    text_cells: list[tuple[int, int, str]] = []
    newly = (train_mask == 0) & (chunk.base_mask == 1)
    for i, j in zip(*np.nonzero(newly)):
        i, j = int(i), int(j)
        kind = chunk.table.kinds[j]
        if kind is ColumnKind.TEXT:
            text_cells.append((i, j, str(chunk.table.cell(i, j))))
        else:
            scalar_cells.append((i, j, float(chunk.table.cell(i, j))))
    return scalar_cells, text_cells


def chunk_loss(model: ModelState, chunk: Chunk, train_mask: np.ndarray,
               delta: float = 1.0) -> tuple[Optional[Tensor], int]:
    """Masked-cell loss of one chunk, normalized by its masked-cell count."""
    scalar_cells, text_cells = _loss_cells(chunk, train_mask)
    count = len(scalar_cells) + len(text_cells)
    if count == 0:
        return None, 0
    fwd = forward_graph(model, chunk.table, train_mask, chunk.row_offset,
                        edge_features=chunk.edge_features)
    total: Optional[Tensor] = None
    scalar_out = forward_scalar_cells(model, fwd, [(i, j) for i, j, _ in scalar_cells])
    if scalar_out is not None:
        preds, order = scalar_out
        target_by_node = {i * fwd.hg.d + j: t for i, j, t in scalar_cells}
        targets = np.array([target_by_node[n] for n in order], dtype=np.float64)
        total = huber_loss(targets, preds, delta)
    text_items = [(i, j, model.vocab.encode(text) + [enc.EOS_ID])
                  for i, j, text in text_cells]
    text_out = forward_text_cells(model, fwd, text_items)
    if text_out is not None:
        text_sum, _ = text_out
        total = text_sum if total is None else total + text_sum
    return total / count, count


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _epoch_seed(base_seed: int, epoch: int) -> int:
    return base_seed ^ epoch


def _prepare_tables(tables: Sequence[Table], masks: Optional[Sequence[np.ndarray]],
                    scalers: Optional[Sequence[ColumnScalers]]
                    ) -> tuple[list[Table], list[np.ndarray], list[ColumnScalers]]:
    out_tables, out_masks, out_scalers = [], [], []
    for idx, table in enumerate(tables):
        mask = table.mask() if masks is None else np.asarray(masks[idx], dtype=np.uint8)
        sc = fit_scalers(table, mask) if scalers is None else scalers[idx]
        out_tables.append(apply_scalers(table, sc))
        out_masks.append(mask)
        out_scalers.append(sc)
    return out_tables, out_masks, out_scalers


def _train_loop(model: ModelState, batches: list[list[Chunk]], cfg: TrainConfig
                ) -> list[str]:
    params = model.trainable_params()
    opt = AdamState()
    manifest: list[str] = []
    backbone_sum_before = model.backbone.checksum()
    for epoch in range(cfg.epochs):
        r = progressive_ratio(cfg.kappa, epoch, cfg.epochs)
        epoch_losses: list[float] = []
        epoch_cells = 0
        for batch in batches:
            zero_grads(params)
            batch_losses: list[Tensor] = []
            for chunk in batch:
                pmask = progressive_mask(chunk.base_mask, cfg.kappa, epoch,
                                         cfg.epochs,
                                         seed=_epoch_seed(cfg.seed, epoch) * 1000003
                                         + chunk.index)
                loss, count = chunk_loss(model, chunk, pmask, cfg.delta)
                if loss is None:
                    continue
                epoch_cells += count
                batch_losses.append(loss)
            if not batch_losses:
                continue
            batch_loss = batch_losses[0] if len(batch_losses) == 1 else (
                dc.concat([dc.reshape(l, (1,)) for l in batch_losses], axis=0))
            if len(batch_losses) > 1:
                batch_loss = dc.mean_rows(batch_loss)
            if not np.isfinite(batch_loss.data):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}")
            backward(batch_loss)
            grads = [p.grad for p in params]
            for g in grads:
                if g is not None and not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"non-finite gradient at epoch {epoch}")
            adam_step(params, grads, opt, cfg.lr)
            epoch_losses.append(float(batch_loss.data))
        if epoch_cells == 0:
            warnings.warn(f"epoch {epoch}: no masked cells in any chunk, step skipped")
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        manifest.append(f"{epoch},{r:.6f},{mean_loss!r}")
    if model.backbone.checksum() != backbone_sum_before:
        raise ContractError("frozen backbone was modified during training")
    return manifest


def pretrain(tables: Sequence[Table], cfg: TrainConfig,
             masks: Optional[Sequence[np.ndarray]] = None,
             scalers: Optional[Sequence[ColumnScalers]] = None,
             embedding: np.ndarray | None = None
             ) -> tuple[ModelState, list[ColumnScalers], list[str]]:
    """Train a fresh model over one or more tables.

    Returns the model, the per-table scalers actually used, and the manifest
    lines (one ``epoch,r,loss`` line per epoch).  Tables arrive unscaled;
    when ``scalers`` is omitted they are fitted on the observed cells of the
    given masks.
    """
    if not tables:
        raise ContractError("pretrain needs at least one table")
    cfg.validate()
    scaled, out_masks, out_scalers = _prepare_tables(tables, masks, scalers)
    corpus: list[str] = []
    for t in scaled:
        corpus.extend(enc.table_corpus(t))
    vocab = enc.build_vocab(corpus)
    model = ModelState.create(vocab, cfg.embed_dim, cfg.l_max, seed=cfg.seed,
                              max_decode_len=cfg.max_decode_len,
                              embedding=embedding)
    batches = make_chunks(scaled, cfg.chunk_size, cfg.batch_size, out_masks)
    _attach_edge_features(model, batches)
    manifest = _train_loop(model, batches, cfg)
    return model, out_scalers, manifest


def _attach_edge_features(model: ModelState, batches: list[list[Chunk]]) -> None:
    """Edge prompts ignore the mask, so their features are fixed per chunk."""
    from .hypergraph import Hypergraph
    for batch in batches:
        for chunk in batch:
            hg = Hypergraph(chunk.table.n, chunk.table.d)
            chunk.edge_features = enc.build_edge_features(
                hg, chunk.table.names, model.backbone, model.vocab,
                chunk.row_offset)


def finetune(model: ModelState, table: Table, cfg: Optional[TrainConfig] = None,
             mask: Optional[np.ndarray] = None,
             scaler: Optional[ColumnScalers] = None
             ) -> tuple[ModelState, ColumnScalers, list[str]]:
    """Continue training an existing model on one table (same loop)."""
    if cfg is None:
        cfg = TrainConfig.finetune_defaults()
    cfg.validate()
    scaled, masks, scalers = _prepare_tables(
        [table], None if mask is None else [mask],
        None if scaler is None else [scaler])
    batches = make_chunks(scaled, cfg.chunk_size, cfg.batch_size, masks)
    _attach_edge_features(model, batches)
    manifest = _train_loop(model, batches, cfg)
    return model, scalers[0], manifest
